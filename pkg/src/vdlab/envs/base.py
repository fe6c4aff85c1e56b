"""DEC-POMDP abstraction, episode records and enumerable tabular environments."""

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import CapabilityError, RejectedInputError, ShapeError
from ..utils import check_index, check_positive_int, one_hot

DEFAULT_ENUMERATION_CAP = 10**7


@dataclass(frozen=True)
class Transition:
    """One environment sample as stored in the replay buffer.

    ``behavior`` records which policy generated the sample ("learner" or
    "expert"); the DAgger trainer asserts on it.
    """

    state: object
    next_state: object
    joint_action: tuple
    reward: float
    observations: tuple
    next_observations: tuple
    terminal: bool
    behavior: str = "learner"
    histories: tuple = None
    next_histories: tuple = None

    def __post_init__(self):
        n = len(self.joint_action)
        if len(self.observations) != n or len(self.next_observations) != n:
            raise ShapeError(
                f"joint_action has {n} entries but observations have "
                f"{len(self.observations)} and {len(self.next_observations)}"
            )


@dataclass
class Episode:
    transitions: list = field(default_factory=list)
    discounted_return: float = 0.0
    won: bool = False

    @property
    def undiscounted_return(self):
        return float(sum(t.reward for t in self.transitions))

    def __len__(self):
        return len(self.transitions)


class History:
    """Bounded action-observation history of a single agent."""

    def __init__(self, agent_id, window=1):
        self.agent_id = agent_id
        self.window = check_positive_int(window, "window")
        self.entries = deque(maxlen=self.window)

    def push(self, observation, action):
        self.entries.append((int(observation), int(action)))

    def as_tuple(self):
        return tuple(self.entries)

    def __len__(self):
        return len(self.entries)


class DecPomdp:
    """Shared-reward decentralised POMDP.

    Subclasses provide ``reset``, ``_step``, ``_observe`` and the feature
    encoders; the public ``step``/``observe`` validate indices first.
    Environment objects hold no episode state, so one instance can serve
    several rollout workers.
    """

    n_agents = 1
    n_actions = 1
    discount = 0.99
    horizon = 100
    enumerable = False

    def reset(self, rng):
        raise NotImplementedError

    def step(self, state, joint_action, rng):
        self.check_state(state)
        joint_action = self.check_joint_action(joint_action)
        return self._step(state, joint_action, rng)

    def observe(self, state, agent):
        self.check_state(state)
        check_index(agent, self.n_agents, "agent")
        return self._observe(state, agent)

    def observe_all(self, state):
        return tuple(self._observe(state, i) for i in range(self.n_agents))

    def check_joint_action(self, joint_action):
        joint_action = tuple(int(a) for a in joint_action)
        if len(joint_action) != self.n_agents:
            raise RejectedInputError(
                f"expected {self.n_agents} actions, got {len(joint_action)}"
            )
        for a in joint_action:
            check_index(a, self.n_actions, "action")
        return joint_action

    def check_state(self, state):
        raise NotImplementedError

    def n_observations(self, agent):
        raise NotImplementedError

    def state_id(self, state):
        """Dense integer id of a state (tabular expert input)."""
        raise NotImplementedError

    @property
    def n_states(self):
        raise CapabilityError(f"{type(self).__name__} has no dense state count")

    def state_vector(self, state):
        raise NotImplementedError

    def observation_vector(self, observation, agent):
        return one_hot(observation, self.n_observations(agent))

    @property
    def state_dim(self):
        raise NotImplementedError

    def observation_dim(self, agent):
        return self.n_observations(agent)

    def won(self, state):
        return False

    def episode_won(self, final_state, undiscounted_return):
        return self.won(final_state)

    def enumerate(self, cap=DEFAULT_ENUMERATION_CAP):
        raise CapabilityError(f"{type(self).__name__} is not enumerable")


class TabularDecPomdp(DecPomdp):
    """DEC-POMDP given by explicit tables.

    Parameters
    ----------
    transitions : array (S, J, S)
        ``P(s' | s, u)`` indexed by joint-action id ``J = n_actions**n_agents``.
    rewards : array (S, J, S) or (S, J)
        Shared reward, optionally dependent on the successor state.
    observations : int array (S, n_agents)
        Observation id seen by each agent in each state.
    terminal_states : bool array (S,), optional
        Entering one of these ends the episode.
    win_states : bool array (S,), optional
    """

    enumerable = True

    def __init__(
        self,
        transitions,
        rewards,
        observations,
        *,
        n_agents,
        n_actions,
        discount=0.99,
        horizon=100,
        initial_distribution=None,
        terminal_states=None,
        win_states=None,
        name="tabular",
    ):
        self.n_agents = check_positive_int(n_agents, "n_agents")
        self.n_actions = check_positive_int(n_actions, "n_actions")
        self.discount = float(discount)
        if not 0.0 <= self.discount < 1.0:
            raise RejectedInputError(f"discount={discount} must lie in [0, 1)")
        self.horizon = check_positive_int(horizon, "horizon")
        self.name = name

        P = np.asarray(transitions, dtype=float)
        S = P.shape[0]
        J = self.n_actions**self.n_agents
        if P.shape != (S, J, S):
            raise ShapeError(f"transitions shape {P.shape}, expected {(S, J, S)}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise RejectedInputError("transition rows must be nonnegative and sum to 1")
        R = np.asarray(rewards, dtype=float)
        if R.shape == (S, J):
            R = np.repeat(R[:, :, None], S, axis=2)
        if R.shape != (S, J, S):
            raise ShapeError(f"rewards shape {R.shape}, expected {(S, J)} or {(S, J, S)}")
        O = np.asarray(observations)
        if O.shape != (S, self.n_agents) or not np.issubdtype(O.dtype, np.integer):
            raise ShapeError(
                f"observations must be an integer array of shape {(S, self.n_agents)}"
            )
        # relabel to dense ids per agent, keeping first-appearance order
        dense = np.empty_like(O)
        self._n_obs = []
        for i in range(self.n_agents):
            _, first, inverse = np.unique(O[:, i], return_index=True, return_inverse=True)
            order = np.argsort(np.argsort(first))
            dense[:, i] = order[inverse]
            self._n_obs.append(len(first))

        self.P = P
        self.R = R
        self.O = dense
        self._cdf = np.cumsum(P, axis=2)
        if initial_distribution is None:
            initial_distribution = one_hot(0, S)
        self.initial_distribution = np.asarray(initial_distribution, dtype=float)
        if self.initial_distribution.shape != (S,) or abs(self.initial_distribution.sum() - 1) > 1e-12:
            raise RejectedInputError("initial_distribution must be a probability vector over states")
        self.terminal_states = (
            np.zeros(S, bool) if terminal_states is None else np.asarray(terminal_states, bool)
        )
        self.win_states = np.zeros(S, bool) if win_states is None else np.asarray(win_states, bool)
        self._radix = self.n_actions ** np.arange(self.n_agents - 1, -1, -1)

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_joint_actions(self):
        return self.P.shape[1]

    @property
    def state_dim(self):
        return self.n_states

    def joint_index(self, joint_action):
        """Mixed-radix id of a joint action; agent 0 is the most significant digit."""
        j = 0
        for a in joint_action:
            j = j * self.n_actions + int(a)
        return j

    def joint_action(self, index):
        return tuple(int(d) for d in np.unravel_index(index, (self.n_actions,) * self.n_agents))

    def expected_reward(self, state, joint_action):
        j = self.joint_index(joint_action)
        return float(self.P[state, j] @ self.R[state, j])

    def check_state(self, state):
        check_index(state, self.n_states, "state")

    def reset(self, rng):
        u = rng.random()
        s = int(np.searchsorted(np.cumsum(self.initial_distribution), u, side="right"))
        return min(s, self.n_states - 1)

    def _step(self, state, joint_action, rng):
        j = self.joint_index(joint_action)
        u = rng.random()
        nxt = int(np.searchsorted(self._cdf[state, j], u, side="right"))
        nxt = min(nxt, self.n_states - 1)
        return nxt, float(self.R[state, j, nxt]), bool(self.terminal_states[nxt])

    def _observe(self, state, agent):
        return int(self.O[state, agent])

    def n_observations(self, agent):
        return self._n_obs[agent]

    def state_id(self, state):
        return int(state)

    def state_vector(self, state):
        return one_hot(state, self.n_states)

    def won(self, state):
        return bool(self.win_states[state])

    def enumerate(self, cap=DEFAULT_ENUMERATION_CAP):
        """All states and all joint actions, in ascending id order."""
        if self.n_states * self.n_joint_actions > cap:
            raise CapabilityError(
                f"|S|*|U|^n = {self.n_states * self.n_joint_actions} exceeds cap {cap}"
            )
        joint = list(itertools.product(range(self.n_actions), repeat=self.n_agents))
        return list(range(self.n_states)), joint

    def reachable_states(self):
        """States reachable from the initial distribution under any joint action."""
        seen = set(np.flatnonzero(self.initial_distribution > 0).tolist())
        frontier = list(seen)
        while frontier:
            s = frontier.pop()
            if self.terminal_states[s]:
                continue
            for nxt in np.flatnonzero(self.P[s].max(axis=0) > 0):
                if int(nxt) not in seen:
                    seen.add(int(nxt))
                    frontier.append(int(nxt))
        return sorted(seen)


def step(env, state, joint_action, rng):
    """Sample ``(next_state, reward, terminal)`` from ``env``."""
    return env.step(state, joint_action, rng)


def observe(env, state, agent):
    return env.observe(state, agent)


def enumerate_env(env, cap=DEFAULT_ENUMERATION_CAP):
    return env.enumerate(cap=cap)


def detect_insufficient_observation(env, cap=DEFAULT_ENUMERATION_CAP):
    """Every ``(agent, s_a, s_b)`` with ``s_a < s_b`` that the agent cannot tell apart.

    An empty list means each agent's observation function is injective.
    """
    states, _ = env.enumerate(cap=cap)
    witnesses = []
    for i in range(env.n_agents):
        by_obs = {}
        for s in states:
            by_obs.setdefault(env.observe(s, i), []).append(s)
        for group in by_obs.values():
            witnesses.extend((i, a, b) for a, b in itertools.combinations(group, 2))
    witnesses.sort()
    return witnesses


def rollout(env, policy, rng, behavior="learner", histories=None):
    """Run one episode with ``policy(state, observations) -> joint_action``.

    ``histories`` is an optional list of per-agent ``History`` objects; when
    given, the transitions carry the history snapshots before and after.
    """
    state = env.reset(rng)
    episode = Episode()
    obs = env.observe_all(state)
    gamma_t = 1.0
    for _ in range(env.horizon):
        before = tuple(h.as_tuple() for h in histories) if histories is not None else None
        action = tuple(policy(state, obs))
        nxt, reward, terminal = env.step(state, action, rng)
        next_obs = env.observe_all(nxt)
        after = None
        if histories is not None:
            for h, o, a in zip(histories, obs, action):
                h.push(o, a)
            after = tuple(h.as_tuple() for h in histories)
        episode.transitions.append(
            Transition(state, nxt, action, reward, obs, next_obs, terminal, behavior, before, after)
        )
        episode.discounted_return += gamma_t * reward
        gamma_t *= env.discount
        state, obs = nxt, next_obs
        if terminal:
            break
    episode.won = env.episode_won(state, episode.undiscounted_return)
    return episode
