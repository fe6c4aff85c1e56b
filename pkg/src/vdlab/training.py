"""Trainers for value decomposition with and without expert imitation.

Three estimators share one loop (rollout, replay, periodic updates):

``IGMBaseline``
    Learners ``q_i(tau, u)`` on local observations are mixed into
    ``Q_tot`` and trained on TD targets bootstrapped from next
    observations, so aliasing error enters every Bellman backup.
``IGMDA``
    Experts ``Q_i(s, u)`` on the global state are mixed and trained on TD
    targets built purely from global states. Learners are regressed onto
    the batch frequency of the expert's greedy action among samples that
    share their observation. Rollouts follow the learners (DAgger).
``BehaviorCloning``
    As ``IGMDA`` but rollouts follow the experts.

Estimators follow the scikit-learn conventions: hyperparameters are
constructor arguments, ``fit(env)`` learns, fitted attributes end in ``_``.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .envs.base import Transition, rollout
from .exceptions import ConfigurationError, DivergenceError, RejectedInputError
from .mixer import make_mixer, store_inputs, td_target
from .utils import check_positive_int, check_probability
from .valuestore import (
    PerceptronSpec,
    PerceptronUtility,
    ReplayBuffer,
    TabularUtility,
    explore,
    gradient_step,
    save_checkpoint,
)

RUN_CSV_HEADER = ["env_steps", "win_rate", "mean_return", "rl_loss", "imitation_loss"]


@dataclass
class TrainConfig:
    total_env_steps: int = 200_000
    batch_size: int = 32
    buffer_capacity: int = 5000
    lr: float = 5e-4
    imitation_lr: float = None
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.1
    epsilon_anneal_steps: int = 50_000
    allow_low_epsilon: bool = False
    target_update_interval: int = 200
    gamma: float = 0.99
    seed: int = 0
    mixer: str = "monotonic"
    store: str = "perceptron"
    hidden_dim: int = 64
    embed_dim: int = 32
    hypernet_dim: int = 64
    history_window: int = 1
    imitation_batches_per_rl_update: int = 1
    train_interval: int = 1
    grad_clip: float = 10.0
    eval_interval: int = 0
    eval_episodes: int = 32
    final_eval_episodes: int = None

    def __post_init__(self):
        check_positive_int(self.total_env_steps, "total_env_steps", minimum=0)
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.buffer_capacity, "buffer_capacity")
        check_positive_int(self.target_update_interval, "target_update_interval")
        check_positive_int(self.history_window, "history_window")
        check_positive_int(self.train_interval, "train_interval")
        check_positive_int(self.imitation_batches_per_rl_update, "imitation_batches_per_rl_update", 0)
        check_probability(self.epsilon_start, "epsilon_start")
        check_probability(self.epsilon_finish, "epsilon_finish")
        if self.epsilon_finish < 0.1 and not self.allow_low_epsilon:
            raise ConfigurationError(
                "epsilon_finish below 0.1 requires allow_low_epsilon=True"
            )
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma={self.gamma} must lie in [0, 1)")
        if self.mixer not in ("additive", "monotonic"):
            raise ConfigurationError(f"unknown mixer kind {self.mixer!r}")
        if self.store not in ("tabular", "perceptron"):
            raise ConfigurationError(f"unknown store kind {self.store!r}")
        if self.store == "tabular" and self.history_window != 1:
            raise ConfigurationError("tabular learners use history_window=1")
        if self.history_window > 4:
            raise ConfigurationError("history_window is limited to 4")

    def epsilon(self, env_step):
        if self.epsilon_anneal_steps <= 0:
            return self.epsilon_finish
        frac = min(1.0, env_step / self.epsilon_anneal_steps)
        return self.epsilon_start + frac * (self.epsilon_finish - self.epsilon_start)


@dataclass
class EvalRecord:
    env_steps: int
    win_rate: float
    mean_return: float
    rl_loss: float
    imitation_loss: float


@dataclass
class TrainReport:
    trainer: str
    seed: int
    records: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    diverged: bool = False
    message: str = ""

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RUN_CSV_HEADER)
        for r in self.records:
            writer.writerow([r.env_steps] + [_fmt(getattr(r, k)) for k in RUN_CSV_HEADER[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


# ------------------------------------------------------------ imitation


@dataclass
class ImitationTargets:
    """``rows[i, b]`` is the target distribution for agent ``i`` at sample ``b``;
    ``groups[(i, tau)]`` holds the same distribution keyed by observation."""

    rows: np.ndarray
    groups: dict
    counts: dict


def expert_greedy(experts, state_input):
    """One-hot greedy distribution of every expert agent at one state.

    ``state_input`` is a state id for tabular experts or a feature vector.
    """
    out = np.zeros((experts.n_agents, experts.n_actions))
    for i in range(experts.n_agents):
        out[i, int(np.argmax(experts.q_values(state_input, i)))] = 1.0
    return out


def imitation_target(observations, expert_actions, n_actions):
    """Average the expert's one-hot choice over samples sharing an observation.

    ``observations`` and ``expert_actions`` are ``(n_agents, batch)``; the
    grouping key is ``(agent, observation)``.
    """
    observations = np.asarray(observations)
    expert_actions = np.asarray(expert_actions)
    A, B = observations.shape
    if B == 0:
        raise RejectedInputError("imitation needs a non-empty batch")
    rows = np.zeros((A, B, n_actions))
    groups, counts = {}, {}
    for i in range(A):
        keys, inverse = np.unique(observations[i], return_inverse=True)
        tally = np.zeros((len(keys), n_actions))
        np.add.at(tally, (inverse, expert_actions[i]), 1.0)
        k = tally.sum(axis=1, keepdims=True)
        dist = tally / k
        rows[i] = dist[inverse]
        for g, key in enumerate(keys.tolist()):
            groups[(i, key)] = dist[g]
            counts[(i, key)] = int(k[g, 0])
    return ImitationTargets(rows, groups, counts)


def imitation_step(learners, inputs, targets, lr, grad_clip=None):
    """Regress every action value of the learners onto the targets."""
    rows = targets.rows if isinstance(targets, ImitationTargets) else targets
    return gradient_step(learners, inputs, rows, lr, grad_clip=grad_clip)


# -------------------------------------------------------------- trainers


class _Trainer(BaseEstimator):
    trainer_name = None
    uses_experts = True
    behavior = "learner"

    def __init__(
        self,
        total_env_steps=200_000,
        batch_size=32,
        buffer_capacity=5000,
        lr=5e-4,
        imitation_lr=None,
        epsilon_start=1.0,
        epsilon_finish=0.1,
        epsilon_anneal_steps=50_000,
        allow_low_epsilon=False,
        target_update_interval=200,
        gamma=0.99,
        seed=0,
        mixer="monotonic",
        store="perceptron",
        hidden_dim=64,
        embed_dim=32,
        hypernet_dim=64,
        history_window=1,
        imitation_batches_per_rl_update=1,
        train_interval=1,
        grad_clip=10.0,
        eval_interval=0,
        eval_episodes=32,
        final_eval_episodes=None,
    ):
        self.total_env_steps = total_env_steps
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.lr = lr
        self.imitation_lr = imitation_lr
        self.epsilon_start = epsilon_start
        self.epsilon_finish = epsilon_finish
        self.epsilon_anneal_steps = epsilon_anneal_steps
        self.allow_low_epsilon = allow_low_epsilon
        self.target_update_interval = target_update_interval
        self.gamma = gamma
        self.seed = seed
        self.mixer = mixer
        self.store = store
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.hypernet_dim = hypernet_dim
        self.history_window = history_window
        self.imitation_batches_per_rl_update = imitation_batches_per_rl_update
        self.train_interval = train_interval
        self.grad_clip = grad_clip
        self.eval_interval = eval_interval
        self.eval_episodes = eval_episodes
        self.final_eval_episodes = final_eval_episodes

    @classmethod
    def from_config(cls, cfg):
        return cls(**asdict(cfg))

    def get_config(self):
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    # ----------------------------------------------------------- setup

    def _make_store(self, env, input_space, rng):
        A, n_act = env.n_agents, env.n_actions
        if self.store == "tabular":
            if input_space == "state":
                n_inputs = env.n_states
            else:
                n_inputs = max(env.n_observations(i) for i in range(A))
            if n_inputs > 5_000_000:
                raise ConfigurationError(f"tabular store over {n_inputs} inputs is too large")
            return TabularUtility(n_inputs, n_act, A, input_space)
        dim = env.state_dim if input_space == "state" else self._learner_dim
        spec = PerceptronSpec(dim, self.hidden_dim, n_act)
        return PerceptronUtility(spec, A, input_space, rng=rng)

    def _setup(self, env):
        cfg = self.get_config()
        self.config_ = cfg
        seq = np.random.SeedSequence(self.seed)
        init_s, env_s, explore_s, sample_s, eval_s = seq.spawn(5)
        self._init_rng = np.random.default_rng(init_s)
        self._env_rng = np.random.default_rng(env_s)
        self._explore_rng = np.random.default_rng(explore_s)
        self._sample_rng = np.random.default_rng(sample_s)
        self._eval_rng = np.random.default_rng(eval_s)
        A = env.n_agents
        self._obs_dim = env.observation_dim(0)
        self._learner_dim = self._obs_dim + (self.history_window - 1) * (self._obs_dim + env.n_actions + 1)
        self._need_state_features = self.mixer == "monotonic" or (self.uses_experts and self.store == "perceptron")
        self._need_learner_features = self.store == "perceptron"

        self.learners_ = self._make_store(env, "observation", self._init_rng)
        if self.uses_experts:
            self.experts_ = self._make_store(env, "state", self._init_rng)
            value_stores = self.experts_
        else:
            self.experts_ = None
            value_stores = self.learners_
        state_dim = env.state_dim if self.mixer == "monotonic" else 0
        self.mixer_ = make_mixer(self.mixer, A, state_dim, self._init_rng, self.embed_dim, self.hypernet_dim)
        self._values = value_stores
        self._target_values = value_stores.clone()
        self._target_mixer = self.mixer_.clone()
        self.buffer_ = ReplayBuffer(self.buffer_capacity)
        self.n_updates_ = 0
        self.env_ = env

    # -------------------------------------------------------- encoding

    def _learner_features(self, env, obs, history):
        """Feature vector per agent: current observation, then past
        (observation, action) pairs, newest first, zero-padded."""
        A = env.n_agents
        out = np.zeros((A, self._learner_dim))
        for i in range(A):
            out[i, : self._obs_dim] = env.observation_vector(obs[i], i)
            if history is not None:
                pos = self._obs_dim
                for o, a in reversed(history[i]):
                    out[i, pos : pos + self._obs_dim] = env.observation_vector(o, i)
                    out[i, pos + self._obs_dim + a + 1] = 1.0
                    pos += self._obs_dim + env.n_actions + 1
        return out

    def _learner_inputs_now(self, env, obs, history):
        if self.store == "tabular":
            return np.asarray(obs, dtype=np.int64)[:, None]
        return self._learner_features(env, obs, history)[:, None, :]

    def _state_inputs_now(self, env, state):
        A = env.n_agents
        if self.store == "tabular":
            return np.full((A, 1), env.state_id(state), dtype=np.int64)
        return np.broadcast_to(env.state_vector(state), (A, 1, env.state_dim))

    # ---------------------------------------------------------- acting

    def _behavior_greedy(self, env, state, obs, history):
        if self.behavior == "expert":
            values = self.experts_.values(self._state_inputs_now(env, state))
        else:
            values = self.learners_.values(self._learner_inputs_now(env, obs, history))
        return np.argmax(values[:, 0, :], axis=-1)

    def predict(self, observations, histories=None):
        """Greedy joint action of the learners for one joint observation."""
        check_is_fitted(self, "learners_")
        obs = [int(o) for o in observations]
        if len(obs) != self.env_.n_agents:
            raise RejectedInputError(f"expected {self.env_.n_agents} observations")
        values = self.learners_.values(self._learner_inputs_now(self.env_, obs, histories))
        return tuple(int(a) for a in np.argmax(values[:, 0, :], axis=-1))

    def score(self, env=None, n_episodes=100, seed=None):
        """Greedy win rate of the learners."""
        check_is_fitted(self, "learners_")
        env = env or self.env_
        rng = np.random.default_rng(seed) if seed is not None else self._eval_rng
        return evaluate(self, env, n_episodes, rng)[0]

    # -------------------------------------------------------- training

    def fit(self, env):
        self._setup(env)
        cfg = self.config_
        report = TrainReport(self.trainer_name, self.seed)
        self.report_ = report
        rl_losses, im_losses = [], []
        steps = 0
        window = self.history_window - 1
        try:
            while steps < cfg.total_env_steps:
                state = env.reset(self._env_rng)
                obs = env.observe_all(state)
                history = tuple(() for _ in range(env.n_agents)) if window else None
                for _ in range(env.horizon):
                    eps = cfg.epsilon(steps)
                    greedy_actions = self._behavior_greedy(env, state, obs, history)
                    actions = tuple(int(a) for a in explore(greedy_actions, eps, env.n_actions, self._explore_rng))
                    nxt, reward, terminal = env.step(state, actions, self._env_rng)
                    next_obs = env.observe_all(nxt)
                    next_history = None
                    if window:
                        next_history = tuple(
                            (h + ((o, a),))[-window:] for h, o, a in zip(history, obs, actions)
                        )
                    t = Transition(state, nxt, actions, reward, obs, next_obs, terminal,
                                   self.behavior, history, next_history)
                    self.buffer_.push(t, **self._extras(env, t))
                    steps += 1
                    if len(self.buffer_) >= self.batch_size and steps % self.train_interval == 0:
                        rl, im = self._learn()
                        rl_losses.append(rl)
                        if im is not None:
                            im_losses.append(im)
                    if cfg.eval_interval and steps % cfg.eval_interval == 0 and steps < cfg.total_env_steps:
                        self._record(env, steps, rl_losses, im_losses, cfg.eval_episodes)
                        rl_losses, im_losses = [], []
                    state, obs, history = nxt, next_obs, next_history
                    if terminal or steps >= cfg.total_env_steps:
                        break
        except DivergenceError as exc:
            report.diverged = True
            report.message = str(exc)
            report.checkpoints = self._snapshot()
            raise
        final_n = cfg.final_eval_episodes or cfg.eval_episodes
        self._record(env, steps, rl_losses, im_losses, final_n)
        report.checkpoints = self._snapshot()
        return self

    def _snapshot(self):
        snap = {"learners": self.learners_.clone(), "mixer": self.mixer_.clone()}
        if self.experts_ is not None:
            snap["experts"] = self.experts_.clone()
        return snap

    def save(self, path):
        check_is_fitted(self, "learners_")
        save_checkpoint(path, **self._snapshot())

    def _record(self, env, steps, rl_losses, im_losses, n_episodes):
        win, ret = evaluate(self, env, n_episodes, self._eval_rng)
        self.report_.records.append(
            EvalRecord(
                steps,
                win,
                ret,
                float(np.mean(rl_losses)) if rl_losses else float("nan"),
                float(np.mean(im_losses)) if im_losses else float("nan"),
            )
        )

    def _extras(self, env, t):
        extras = {}
        if self.uses_experts and self.store == "tabular" and not isinstance(t.state, (int, np.integer)):
            extras["state_ids"] = env.state_id(t.state)
            extras["next_state_ids"] = env.state_id(t.next_state)
        if self._need_state_features:
            extras["state_features"] = env.state_vector(t.state)
            extras["next_state_features"] = env.state_vector(t.next_state)
        if self._need_learner_features:
            extras["learner_features"] = self._learner_features(env, t.observations, t.histories)
            extras["next_learner_features"] = self._learner_features(env, t.next_observations, t.next_histories)
        return extras

    # ----------------------------------------------------------- updates

    def _td_update(self, batch):
        """One squared-TD step on ``self._values`` and the mixer."""
        stores = self._values
        td = td_target(batch, self._target_values, self._target_mixer, stores, self.gamma)
        inputs = store_inputs(stores, batch, "now")
        if stores.kind == "tabular" and inputs.dtype == object:
            inputs = inputs.astype(np.int64)
        A, B = batch.actions.shape
        ar_a, ar_b = np.arange(A)[:, None], np.arange(B)[None]
        if stores.kind == "tabular":
            q_all = stores.values(inputs)
        else:
            q_all = stores.forward(inputs, keep=True)
        q_taken = q_all[ar_a, ar_b, batch.actions].T  # (B, A)
        states = batch.extras.get("state_features")
        q_tot = self.mixer_.forward(q_taken, states, keep=True)
        resid = q_tot - td.targets
        loss = float(np.mean(resid**2))
        if not math.isfinite(loss):
            raise DivergenceError("TD loss is not finite", {"update": self.n_updates_})
        grad_out = 2.0 * resid / B
        if stores.kind == "tabular":
            if self.mixer_.kind == "additive-mixer":
                partials = np.ones((B, A))
            else:
                self.mixer_.forward(q_taken, states, keep=True)
                partials = self.mixer_.backward(np.ones(B))
                self.mixer_.forward(q_taken, states, keep=True)
                self.mixer_.backward(grad_out)
                self.mixer_.apply_gradient(self.lr, self.grad_clip)
            pseudo = q_taken - resid[:, None] * partials
            agents = np.repeat(np.arange(A)[None], B, axis=0)
            stores.update_entries(
                agents.T.ravel(), inputs.ravel(), batch.actions.ravel(), pseudo.T.ravel(), self.lr
            )
        else:
            d_q = self.mixer_.backward(grad_out)
            self.mixer_.apply_gradient(self.lr, self.grad_clip)
            grad = np.zeros_like(q_all)
            grad[ar_a, ar_b, batch.actions] = d_q.T
            stores.backward(grad)
            stores.apply_gradient(self.lr, self.grad_clip)
        self.n_updates_ += 1
        if self.n_updates_ % self.target_update_interval == 0:
            self._target_values.load_parameters(stores)
            self._target_mixer.load_parameters(self.mixer_)
        return loss

    def _imitation_update(self, batch):
        if self.behavior == "learner" and not np.all(batch.behavior == "learner"):
            raise AssertionError("DAgger imitation consumed a transition not generated by the learner")
        expert_values = self.experts_.values(store_inputs(self.experts_, batch, "now"))
        expert_actions = np.argmax(expert_values, axis=-1)
        targets = imitation_target(batch.observations, expert_actions, self.experts_.n_actions)
        inputs = store_inputs(self.learners_, batch, "now")
        lr = self.imitation_lr if self.imitation_lr is not None else self.lr
        return imitation_step(self.learners_, inputs, targets, lr, self.grad_clip)

    def _learn(self):
        batch = self.buffer_.sample(self.batch_size, self._sample_rng)
        if batch is None:
            return float("nan"), None
        rl = self._td_update(batch)
        if not self.uses_experts:
            return rl, None
        im = None
        for k in range(self.imitation_batches_per_rl_update):
            b = batch if k == 0 else self.buffer_.sample(self.batch_size, self._sample_rng)
            im = self._imitation_update(b)
        return rl, im


class IGMBaseline(_Trainer):
    """Value decomposition with learners conditioned on local observations."""

    trainer_name = "baseline"
    uses_experts = False
    behavior = "learner"


class IGMDA(_Trainer):
    """Experts on the global state plus DAgger imitation onto learners."""

    trainer_name = "igm-da"
    uses_experts = True
    behavior = "learner"


class BehaviorCloning(_Trainer):
    """Experts on the global state, learners cloned from expert rollouts."""

    trainer_name = "bc"
    uses_experts = True
    behavior = "expert"


TRAINERS = {"baseline": IGMBaseline, "igm-da": IGMDA, "bc": BehaviorCloning}


def make_trainer(name, cfg):
    if name not in TRAINERS:
        raise ConfigurationError(f"field 'trainer': unknown trainer {name!r}; choose from {sorted(TRAINERS)}")
    return TRAINERS[name].from_config(cfg)


def train_baseline_igm(env, cfg):
    return IGMBaseline.from_config(cfg).fit(env).report_


def train_igm_da(env, cfg):
    return IGMDA.from_config(cfg).fit(env).report_


def train_behavior_cloning(env, cfg):
    return BehaviorCloning.from_config(cfg).fit(env).report_


# ------------------------------------------------------------ evaluation


def evaluate(policy, env, n_episodes, rng):
    """Greedy rollouts of a fitted trainer (or any ``predict``-able object).

    Returns ``(win_rate, mean_undiscounted_return)``.
    """
    n_episodes = check_positive_int(n_episodes, "n_episodes")
    window = getattr(policy, "history_window", 1) - 1
    wins, total = 0, 0.0
    for _ in range(n_episodes):
        history = [()] * env.n_agents if window else None

        def act(state, obs):
            nonlocal history
            action = policy.predict(obs, history)
            if window:
                history = [(h + ((o, a),))[-window:] for h, o, a in zip(history, obs, action)]
            return action

        ep = rollout(env, act, rng)
        wins += ep.won
        total += ep.undiscounted_return
    return wins / n_episodes, total / n_episodes
