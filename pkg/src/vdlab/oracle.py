"""Exhaustive checks on enumerable environments.

* ``exact_q`` – joint-action value iteration (ground truth).
* ``certify_lossy`` – does any observation-conditioned deterministic policy
  reproduce the joint greedy action in every considered state?
* ``bayes_expected_loss`` / ``bayes_optimal_local`` – the best local action
  values given an expert that sees the global state.
* ``error_breakdown`` – discounted error totals with and without the
  decomposition error re-entering the Bellman recursion.
"""

import itertools
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs.base import DEFAULT_ENUMERATION_CAP, detect_insufficient_observation
from .exceptions import CapabilityError, RejectedInputError
from .utils import check_positive_int

DEFAULT_POLICY_CAP = 10**6


def exact_q(env, gamma=None, tol=1e-10, max_iter=100_000):
    """Optimal joint action values ``Q*(s, j)`` by value iteration.

    Entering a terminal state stops bootstrapping; the episode horizon is
    ignored (infinite-horizon discounted values).
    """
    env.enumerate(cap=DEFAULT_ENUMERATION_CAP)
    gamma = env.discount if gamma is None else float(gamma)
    P, R = env.P, env.R
    cont = gamma * (~env.terminal_states).astype(float)
    immediate = np.einsum("sjt,sjt->sj", P, R)
    Q = np.zeros(P.shape[:2])
    for _ in range(max_iter):
        V = Q.max(axis=1)
        Q_new = immediate + P @ (cont * V)
        delta = np.max(np.abs(Q_new - Q))
        Q = Q_new
        if delta < tol:
            break
    Q[env.terminal_states] = 0.0
    return Q


def optimal_action_sets(Q, atol=1e-9):
    best = Q.max(axis=1, keepdims=True)
    return Q >= best - atol


@dataclass
class LossyCertificate:
    witness_state_pairs: list
    best_local_policy: list
    mismatch_states: list
    states_checked: list
    policies_searched: int

    @property
    def lossy(self):
        return bool(self.mismatch_states)

    def to_dict(self):
        d = asdict(self)
        d["lossy"] = self.lossy
        d["best_local_policy"] = [{str(k): v for k, v in p.items()} for p in self.best_local_policy]
        return d


def _best_response(env, agent, fixed, states, optimal, n_obs):
    """Exact best policy of ``agent`` when the others follow ``fixed``.

    Counts, per observation of ``agent``, the states where each action would
    complete an optimal joint action, then picks the best action per
    observation (lowest id on ties). Returns (policy, mismatches).
    """
    A, N = env.n_actions, env.n_agents
    hits = np.zeros((n_obs, A), dtype=int)
    for s in states:
        joint = [fixed[i][env.O[s, i]] if i != agent else 0 for i in range(N)]
        o = env.O[s, agent]
        for a in range(A):
            joint[agent] = a
            if optimal[s, env.joint_index(joint)]:
                hits[o, a] += 1
    choice = np.argmax(hits, axis=1)
    mismatches = len(states) - int(hits[np.arange(n_obs), choice].sum())
    return choice, mismatches


def certify_lossy(env, Q_tot, *, reachable_only=True, atol=1e-9, cap=DEFAULT_POLICY_CAP):
    """Search all deterministic local policies for one matching ``argmax Q_tot``.

    One agent's policy is optimised in closed form (its choice decomposes
    over its own observations once the others are fixed); the remaining
    agents' policy tables are enumerated. The returned policy minimises the
    number of mismatch states over the whole policy space.
    """
    Q_tot = np.asarray(Q_tot, dtype=float)
    states_all, _ = env.enumerate()
    if Q_tot.shape != (env.n_states, env.n_joint_actions):
        raise RejectedInputError(f"Q_tot shape {Q_tot.shape} != {(env.n_states, env.n_joint_actions)}")
    if reachable_only:
        states = [s for s in env.reachable_states() if not env.terminal_states[s]]
    else:
        states = [s for s in states_all if not env.terminal_states[s]]
    optimal = optimal_action_sets(Q_tot, atol)

    N, A = env.n_agents, env.n_actions
    obs_used = [sorted({int(env.O[s, i]) for s in states}) for i in range(N)]
    sizes = [env.n_observations(i) for i in range(N)]
    free = int(np.argmax([len(o) for o in obs_used])) if N else 0
    enumerated = [i for i in range(N) if i != free]
    n_policies = 1
    for i in enumerated:
        n_policies *= A ** len(obs_used[i])
    if n_policies > cap:
        raise CapabilityError(
            f"{n_policies} joint local policies exceed cap {cap}; restrict to reachable states"
        )

    best = None
    per_agent_tables = [itertools.product(range(A), repeat=len(obs_used[i])) for i in enumerated]
    for combo in itertools.product(*per_agent_tables):
        fixed = [None] * N
        for i, table in zip(enumerated, combo):
            full = np.zeros(sizes[i], dtype=int)
            full[obs_used[i]] = table
            fixed[i] = full
        choice, mismatches = _best_response(env, free, fixed, states, optimal, sizes[free])
        if best is None or mismatches < best[0]:
            fixed[free] = choice
            best = (mismatches, [f.copy() for f in fixed])
            if mismatches == 0:
                break

    policy_arrays = best[1]
    mismatch_states = []
    for s in states:
        joint = [int(policy_arrays[i][env.O[s, i]]) for i in range(N)]
        if not optimal[s, env.joint_index(joint)]:
            mismatch_states.append(int(s))
    policy = [{int(o): int(policy_arrays[i][o]) for o in obs_used[i]} for i in range(N)]

    pairs = {}
    for agent, a, b in detect_insufficient_observation(env):
        pairs.setdefault((a, b), []).append(agent)
    witnesses = [(a, b, agents) for (a, b), agents in sorted(pairs.items())]
    return LossyCertificate(witnesses, policy, mismatch_states, [int(s) for s in states], n_policies)


def local_policy_reaches_goal(env, policy, max_steps=None):
    """Follow a deterministic observation->action policy from every start state."""
    max_steps = max_steps or env.horizon
    for s0 in np.flatnonzero(env.initial_distribution > 0):
        s = int(s0)
        for _ in range(max_steps):
            if env.terminal_states[s]:
                break
            joint = [policy[i].get(int(env.O[s, i]), 0) for i in range(env.n_agents)]
            s = int(np.argmax(env.P[s, env.joint_index(joint)]))
        if not env.won(s):
            return False
    return True


def search_goal_reaching_policies(env, cap=DEFAULT_POLICY_CAP):
    """All deterministic observation-conditioned policies that win from every
    start in a deterministic single-agent environment."""
    if env.n_agents != 1:
        raise CapabilityError("goal-reaching search is implemented for one agent")
    n_obs = env.n_observations(0)
    if env.n_actions**n_obs > cap:
        raise CapabilityError(f"{env.n_actions ** n_obs} policies exceed cap {cap}")
    found = []
    for table in itertools.product(range(env.n_actions), repeat=n_obs):
        policy = [dict(enumerate(table))]
        if local_policy_reaches_goal(env, policy):
            found.append(policy)
    return found


# ------------------------------------------------------------------ Bayes


class ExpertPolicy:
    """Deterministic greedy expert: one action per (state, agent)."""

    def __init__(self, actions, n_actions):
        self.actions = {int(s): tuple(int(a) for a in acts) for s, acts in dict(actions).items()}
        self.n_actions = check_positive_int(n_actions, "n_actions")

    @classmethod
    def from_array(cls, actions, n_actions):
        actions = np.asarray(actions)
        if actions.ndim == 1:
            actions = actions[:, None]
        return cls({s: actions[s] for s in range(len(actions))}, n_actions)

    @classmethod
    def from_values(cls, values):
        """From expert values shaped (n_states, n_agents, n_actions)."""
        values = np.asarray(values)
        return cls.from_array(np.argmax(values, axis=-1), values.shape[-1])

    def distribution(self, state, agent=0):
        out = np.zeros(self.n_actions)
        out[self.actions[int(state)][agent]] = 1.0
        return out


@dataclass
class AliasSampleSet:
    """Global states sampled under one local observation, with multiplicities."""

    observation: int
    samples: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = {int(s): int(m) for s, m in dict(self.samples).items() if m > 0}
        if not self.samples:
            raise RejectedInputError("an alias sample set needs at least one sample")

    @classmethod
    def from_states(cls, observation, states):
        return cls(observation, Counter(int(s) for s in states))

    @property
    def k(self):
        return sum(self.samples.values())

    @property
    def occupancy(self):
        k = self.k
        return {s: m / k for s, m in self.samples.items()}


class PenaltyMatrix:
    """``lam[i, j]``: cost of choosing action ``i`` when ``j`` was expected."""

    def __init__(self, lam):
        self.lam = np.asarray(lam, dtype=float)

    @classmethod
    def zero_one(cls, n_actions):
        return cls(1.0 - np.eye(n_actions))


def bayes_expected_loss(expert, alias, penalty, action, agent=0):
    """``R(u|tau) = sum_j sum_s lam[u, j] P_pi(j|s) P(s|tau)``, evaluated literally."""
    total = 0.0
    for s, p_s in alias.occupancy.items():
        dist = expert.distribution(s, agent)
        for j in range(expert.n_actions):
            total += penalty.lam[action, j] * dist[j] * p_s
    return total


def bayes_optimal_local(expert, alias, agent=0):
    """Best local action values ``(1/k) sum_s m_s P_pi(.|s)`` for one observation."""
    q = np.zeros(expert.n_actions)
    for s, m in alias.samples.items():
        q += m * expert.distribution(s, agent)
    return q / alias.k


def occupancy_from_buffer(buffer, agent=0):
    """Alias sample sets per observation estimated from replay frequencies."""
    by_obs = {}
    for t in buffer.entries[: len(buffer)]:
        by_obs.setdefault(int(t.observations[agent]), []).append(t.state)
    return {o: AliasSampleSet.from_states(o, states) for o, states in sorted(by_obs.items())}


# ------------------------------------------------------- error accounting


@dataclass
class ErrorBreakdown:
    error_dec: list
    error_other: list
    gamma: float
    accumulated_total: float
    separated_total: float
    accumulated_series: list
    separated_series: list
    measured_total: float = None
    measured_series: list = None

    def to_dict(self):
        return asdict(self)


def accumulated_closed_form(e_dec, e_other, gamma):
    """Every step's decomposition error is discounted into the total."""
    disc = gamma ** np.arange(len(e_dec))
    return float(np.sum(disc * (np.asarray(e_dec) + np.asarray(e_other))))


def separated_closed_form(e_dec, e_other, gamma):
    """Only the first step's decomposition error reaches the total."""
    disc = gamma ** np.arange(len(e_other))
    return float(np.sum(disc * np.asarray(e_other)) + e_dec[0])


def _simulate(e_dec, e_other, gamma, separated):
    T = len(e_dec)
    upper = np.zeros(T + 1)
    for i in range(T - 1, -1, -1):
        local = e_other[i] if separated else e_dec[i] + e_other[i]
        upper[i] = local + gamma * upper[i + 1]
    series = upper[:T].copy()
    if separated:
        series = series + np.asarray(e_dec)
    return series


def error_breakdown(
    error_dec=None,
    error_other=None,
    gamma=0.99,
    *,
    env=None,
    q_exact=None,
    q_hat=None,
    trace=None,
    tol=1e-12,
):
    """Error totals from injected schedules, or measured along a trace.

    Synthetic mode takes ``error_dec``/``error_other`` for steps ``t..done``
    and checks that stepping the Bellman error recursion backwards
    reproduces both closed forms.

    Empirical mode (``trace`` given) measures ``Q* - Q_hat`` at every
    visited ``(s, u)``; the per-step local errors implied by the recursion
    are attributed to ``error_other`` unless an ``error_dec`` schedule is
    injected.
    """
    gamma = float(gamma)
    measured = None
    if trace is not None:
        if env is None or q_exact is None or q_hat is None:
            raise RejectedInputError("empirical mode needs env, q_exact and q_hat")
        if len(trace) > env.horizon:
            raise RejectedInputError(f"trace of {len(trace)} steps exceeds horizon {env.horizon}")
        measured = np.array(
            [q_exact[t.state, env.joint_index(t.joint_action)] - q_hat(t.state, t.joint_action) for t in trace]
        )
        nxt = np.append(measured[1:], 0.0)
        if trace and trace[-1].terminal:
            nxt[-1] = 0.0
        local = measured - gamma * nxt
        if trace and not trace[-1].terminal:
            local[-1] = measured[-1]
        error_dec = np.zeros(len(trace)) if error_dec is None else np.asarray(error_dec, float)
        error_other = local - error_dec
    error_dec = np.asarray(error_dec, dtype=float)
    error_other = np.asarray(error_other, dtype=float)
    if error_dec.shape != error_other.shape or error_dec.ndim != 1 or len(error_dec) == 0:
        raise RejectedInputError("error schedules must be equal-length non-empty sequences")

    acc = accumulated_closed_form(error_dec, error_other, gamma)
    sep = separated_closed_form(error_dec, error_other, gamma)
    acc_series = _simulate(error_dec, error_other, gamma, separated=False)
    sep_series = _simulate(error_dec, error_other, gamma, separated=True)
    scale = max(1.0, abs(acc), abs(sep))
    if abs(acc_series[0] - acc) > tol * scale or abs(sep_series[0] - sep) > tol * scale:
        raise AssertionError(
            f"recursion/closed form mismatch: {acc_series[0]} vs {acc}, {sep_series[0]} vs {sep}"
        )
    return ErrorBreakdown(
        error_dec=error_dec.tolist(),
        error_other=error_other.tolist(),
        gamma=gamma,
        accumulated_total=acc,
        separated_total=sep,
        accumulated_series=acc_series.tolist(),
        separated_series=sep_series.tolist(),
        measured_total=None if measured is None else float(measured[0]),
        measured_series=None if measured is None else measured.tolist(),
    )
