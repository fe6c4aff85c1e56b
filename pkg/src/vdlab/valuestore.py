"""Per-agent utility functions, replay memory and exploration.

Stores keep one independent utility per agent packed along a leading agent
axis, so batched arrays are laid out ``(n_agents, batch, ...)``.  A store's
``input_space`` says what it conditions on: ``"observation"`` for learners
(``q_i(tau, u)``) and ``"state"`` for experts (``Q_i(s, u)``).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DivergenceError, RejectedInputError, ShapeError
from .utils import check_finite, check_index, check_positive_int, check_probability

INPUT_SPACES = ("observation", "state")
CHECKPOINT_FORMAT = "vdlab-checkpoint"
CHECKPOINT_VERSION = 1


class RMSProp:
    """RMSProp over one flat parameter vector (decay 0.99, stabiliser 1e-5).

    The stabiliser is added outside the square root, as in the common
    deep-learning implementations.
    """

    def __init__(self, size, alpha=0.99, eps=1e-5, grad_clip=None):
        self.alpha = alpha
        self.eps = eps
        self.grad_clip = grad_clip
        self.square_avg = np.zeros(size)
        self._buf = np.zeros(size)

    def step(self, params, grad, lr):
        scale = lr
        if self.grad_clip is not None:
            norm = np.sqrt(grad @ grad)
            if norm > self.grad_clip:
                grad = grad * (self.grad_clip / norm)
        sq, buf = self.square_avg, self._buf
        # in place: this runs once per update on every parameter
        np.multiply(grad, grad, out=buf)
        buf *= 1.0 - self.alpha
        sq *= self.alpha
        sq += buf
        np.sqrt(sq, out=buf)
        buf += self.eps
        np.divide(grad, buf, out=buf)
        buf *= scale
        params -= buf


class UtilityStore:
    kind = None

    def __init__(self, n_actions, n_agents=1, input_space="observation"):
        self.n_actions = check_positive_int(n_actions, "n_actions")
        self.n_agents = check_positive_int(n_agents, "n_agents")
        if input_space not in INPUT_SPACES:
            raise ConfigurationError(f"input_space must be one of {INPUT_SPACES}")
        self.input_space = input_space
        self.version = 0

    def values(self, inputs):
        """Action values for a batch; ``inputs`` is agent-major."""
        raise NotImplementedError

    def q_values(self, inp, agent=0):
        """Action-value vector of one agent for one input."""
        raise NotImplementedError

    def clone(self):
        raise NotImplementedError

    def load_parameters(self, other):
        raise NotImplementedError


class TabularUtility(UtilityStore):
    """Lookup table ``(n_agents, n_inputs, n_actions)``, zero initialised."""

    kind = "tabular"

    def __init__(self, n_inputs, n_actions, n_agents=1, input_space="observation"):
        super().__init__(n_actions, n_agents, input_space)
        self.n_inputs = check_positive_int(n_inputs, "n_inputs")
        self.table = np.zeros((self.n_agents, self.n_inputs, self.n_actions))

    @property
    def n_parameters(self):
        return self.table.size

    def values(self, inputs):
        inputs = np.asarray(inputs)
        if inputs.ndim == 1 and self.n_agents == 1:
            inputs = inputs[None]
        if inputs.shape[0] != self.n_agents:
            raise ShapeError(f"expected leading agent axis {self.n_agents}, got {inputs.shape}")
        if inputs.size and (inputs.min() < 0 or inputs.max() >= self.n_inputs):
            raise RejectedInputError(f"input ids must lie in [0, {self.n_inputs})")
        return self.table[np.arange(self.n_agents)[:, None], inputs]

    def q_values(self, inp, agent=0):
        check_index(agent, self.n_agents, "agent")
        return self.table[agent, check_index(inp, self.n_inputs, "input")]

    def set_value(self, inp, action, value, agent=0):
        check_index(action, self.n_actions, "action")
        check_index(agent, self.n_agents, "agent")
        self.table[agent, check_index(inp, self.n_inputs, "input"), action] = value

    def clone(self):
        other = TabularUtility(self.n_inputs, self.n_actions, self.n_agents, self.input_space)
        other.table = self.table.copy()
        other.version = self.version
        return other

    def load_parameters(self, other):
        self.table[...] = other.table

    def update_entries(self, agents, inputs, actions, targets, lr):
        """Move each distinct entry toward the mean of its targets by ``lr``."""
        shape = self.table.shape
        flat = np.ravel_multi_index((agents, inputs, actions), shape)
        uniq, inverse = np.unique(flat, return_inverse=True)
        sums = np.bincount(inverse, weights=targets)
        counts = np.bincount(inverse)
        view = self.table.reshape(-1)
        view[uniq] += lr * (sums / counts - view[uniq])
        self.version += 1


@dataclass
class PerceptronSpec:
    input_dim: int
    hidden_dim: int = 64
    n_actions: int = 2
    activation: str = "relu"
    weight_init: float = 1.0

    def __post_init__(self):
        check_positive_int(self.input_dim, "input_dim")
        check_positive_int(self.hidden_dim, "hidden_dim")
        check_positive_int(self.n_actions, "n_actions")
        if self.activation != "relu":
            raise ConfigurationError("only the rectifier activation is implemented")


class FlatParameters:
    """Named array views into one contiguous parameter vector."""

    def __init__(self, shapes):
        self.shapes = dict(shapes)
        sizes = [int(np.prod(s)) for s in self.shapes.values()]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.size = int(self.offsets[-1])

    def views(self, vector):
        out = {}
        for (name, shape), lo, hi in zip(self.shapes.items(), self.offsets[:-1], self.offsets[1:]):
            out[name] = vector[lo:hi].reshape(shape)
        return out


class PerceptronUtility(UtilityStore):
    """One-hidden-layer rectifier network per agent with analytic gradients.

    Weights and biases start uniform in ``+-weight_init/sqrt(fan_in)``.
    """

    kind = "perceptron"

    def __init__(self, spec, n_agents=1, input_space="observation", rng=None):
        super().__init__(spec.n_actions, n_agents, input_space)
        self.spec = spec
        A, i, h, o = self.n_agents, spec.input_dim, spec.hidden_dim, spec.n_actions
        self.layout = FlatParameters({"W1": (A, i, h), "b1": (A, 1, h), "W2": (A, h, o), "b2": (A, 1, o)})
        self.params = np.zeros(self.layout.size)
        self.grad = np.zeros(self.layout.size)
        self._bind()
        if rng is not None:
            self.reset_parameters(rng)
        self.optimizer = None
        self._cache = None

    def _bind(self):
        v = self.layout.views(self.params)
        self.W1, self.b1, self.W2, self.b2 = v["W1"], v["b1"], v["W2"], v["b2"]
        g = self.layout.views(self.grad)
        self.gW1, self.gb1, self.gW2, self.gb2 = g["W1"], g["b1"], g["W2"], g["b2"]

    def reset_parameters(self, rng):
        s = self.spec.weight_init
        b1 = s / np.sqrt(self.spec.input_dim)
        b2 = s / np.sqrt(self.spec.hidden_dim)
        self.W1[...] = rng.uniform(-b1, b1, self.W1.shape)
        self.b1[...] = rng.uniform(-b1, b1, self.b1.shape)
        self.W2[...] = rng.uniform(-b2, b2, self.W2.shape)
        self.b2[...] = rng.uniform(-b2, b2, self.b2.shape)

    @property
    def n_parameters(self):
        return self.layout.size

    def _as_features(self, inputs):
        x = np.asarray(inputs, dtype=float)
        if x.ndim == 2 and self.n_agents == 1:
            x = x[None]
        if x.ndim != 3 or x.shape[0] != self.n_agents or x.shape[2] != self.spec.input_dim:
            raise ShapeError(
                f"expected inputs ({self.n_agents}, batch, {self.spec.input_dim}), got {x.shape}"
            )
        return x

    def forward(self, inputs, keep=False):
        x = self._as_features(inputs)
        pre = x @ self.W1 + self.b1
        hidden = np.maximum(pre, 0.0)
        out = hidden @ self.W2 + self.b2
        if keep:
            self._cache = (x, pre, hidden)
        return out

    values = forward

    def backward(self, grad_out):
        """Accumulate parameter gradients for ``grad_out = dL/d(outputs)``.

        Uses the activations kept by the last ``forward(..., keep=True)``;
        returns the flat gradient vector (a view owned by the store).
        """
        x, pre, hidden = self._cache
        self.gW2[...] = hidden.transpose(0, 2, 1) @ grad_out
        self.gb2[...] = grad_out.sum(axis=1, keepdims=True)
        dh = (grad_out @ self.W2.transpose(0, 2, 1)) * (pre > 0)
        self.gW1[...] = x.transpose(0, 2, 1) @ dh
        self.gb1[...] = dh.sum(axis=1, keepdims=True)
        return self.grad

    def apply_gradient(self, lr, grad_clip=None):
        if self.optimizer is None:
            self.optimizer = RMSProp(self.layout.size, grad_clip=grad_clip)
        self.optimizer.step(self.params, self.grad, lr)
        if not np.all(np.isfinite(self.params)):
            raise DivergenceError("perceptron parameters became non-finite", {"version": self.version})
        self.version += 1

    def encode(self, inp):
        if np.ndim(inp) == 0:
            x = np.zeros(self.spec.input_dim)
            x[check_index(inp, self.spec.input_dim, "input")] = 1.0
            return x
        return np.asarray(inp, dtype=float)

    def q_values(self, inp, agent=0):
        check_index(agent, self.n_agents, "agent")
        x = self.encode(inp)
        h = np.maximum(x @ self.W1[agent] + self.b1[agent, 0], 0.0)
        return h @ self.W2[agent] + self.b2[agent, 0]

    def clone(self):
        other = PerceptronUtility(self.spec, self.n_agents, self.input_space)
        other.params[...] = self.params
        other.version = self.version
        return other

    def load_parameters(self, other):
        self.params[...] = other.params


def q_value(store, inp, action, agent=0):
    check_index(action, store.n_actions, "action")
    return float(store.q_values(inp, agent)[action])


def greedy_from_values(values):
    """Row-wise argmax with ties going to the lowest action id."""
    return np.argmax(values, axis=-1)


def greedy(store, inp, agent=0):
    return int(np.argmax(store.q_values(inp, agent)))


def epsilon_greedy(store, inp, epsilon, rng, agent=0):
    epsilon = check_probability(epsilon, "epsilon")
    if rng.random() < epsilon:
        return int(rng.integers(store.n_actions))
    return greedy(store, inp, agent)


def explore(greedy_actions, epsilon, n_actions, rng):
    """Vectorised epsilon-greedy over per-agent greedy actions."""
    greedy_actions = np.asarray(greedy_actions)
    random_mask = rng.random(greedy_actions.shape) < epsilon
    random_actions = rng.integers(n_actions, size=greedy_actions.shape)
    return np.where(random_mask, random_actions, greedy_actions)


def gradient_step(store, inputs, targets, learning_rate, actions=None, grad_clip=None):
    """One squared-error update of ``store`` toward ``targets``.

    With ``actions=None`` the targets cover every action (shape
    ``(n_agents, batch, n_actions)``); otherwise ``targets`` has shape
    ``(n_agents, batch)`` and only the chosen actions are regressed.
    Returns the mean squared error before the update.
    """
    targets = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(targets)):
        raise DivergenceError("non-finite regression target", {"targets": targets})
    if store.n_agents == 1 and targets.ndim == (1 if actions is not None else 2):
        targets = targets[None]
        inputs = np.asarray(inputs)[None]
        if actions is not None:
            actions = np.asarray(actions)[None]
    out = store.values(inputs) if store.kind == "tabular" else store.forward(inputs, keep=True)
    A, B = out.shape[0], out.shape[1]
    if actions is None:
        if targets.shape != out.shape:
            raise ShapeError(f"targets {targets.shape} do not match outputs {out.shape}")
        mask = np.ones(out.shape, bool)
        full_targets = targets
    else:
        actions = np.asarray(actions)
        mask = np.zeros(out.shape, bool)
        mask[np.arange(A)[:, None], np.arange(B)[None], actions] = True
        full_targets = out.copy()
        full_targets[np.arange(A)[:, None], np.arange(B)[None], actions] = targets
    residual = np.where(mask, out - full_targets, 0.0)
    count = mask.sum()
    loss = float((residual**2).sum() / count)

    if store.kind == "tabular":
        agents, rows, cols = np.nonzero(mask)
        inp = np.asarray(inputs)
        store.update_entries(agents, inp[agents, rows], cols, full_targets[agents, rows, cols], learning_rate)
    else:
        store.backward(2.0 * residual / count)
        store.apply_gradient(learning_rate, grad_clip)
    return loss


# ---------------------------------------------------------------- replay


@dataclass
class Batch:
    """Column view of sampled transitions (agent-major where per agent)."""

    transitions: list
    states: np.ndarray
    next_states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray
    observations: np.ndarray
    next_observations: np.ndarray
    behavior: np.ndarray
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """FIFO ring of transitions sampled uniformly with replacement.

    ``push`` may attach precomputed arrays (features, history encodings);
    they come back column-stacked in ``Batch.extras``.
    """

    def __init__(self, capacity):
        self.capacity = check_positive_int(capacity, "capacity")
        self.entries = [None] * self.capacity
        self.write_cursor = 0
        self.size = 0
        self._cols = None

    def __len__(self):
        return self.size

    def _allocate(self, t, extras):
        n = len(t.joint_action)
        C = self.capacity
        state_dtype = np.int64 if isinstance(t.state, (int, np.integer)) else object
        self._cols = {
            "states": np.zeros(C, state_dtype),
            "next_states": np.zeros(C, state_dtype),
            "actions": np.zeros((n, C), np.int64),
            "rewards": np.zeros(C),
            "terminals": np.zeros(C, bool),
            "observations": np.zeros((n, C), np.int64),
            "next_observations": np.zeros((n, C), np.int64),
            "behavior": np.zeros(C, object),
        }
        self._extra_cols = {}
        for key, value in extras.items():
            value = np.asarray(value)
            self._extra_cols[key] = np.zeros((C,) + value.shape, value.dtype)

    def push(self, t, **extras):
        if self._cols is None:
            self._allocate(t, extras)
        i = self.write_cursor
        self.entries[i] = t
        c = self._cols
        c["states"][i] = t.state
        c["next_states"][i] = t.next_state
        c["actions"][:, i] = t.joint_action
        c["rewards"][i] = t.reward
        c["terminals"][i] = t.terminal
        c["observations"][:, i] = t.observations
        c["next_observations"][:, i] = t.next_observations
        c["behavior"][i] = t.behavior
        for key, value in extras.items():
            self._extra_cols[key][i] = value
        self.write_cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        """Uniform sample with replacement, or ``None`` while underfilled."""
        batch_size = check_positive_int(batch_size, "batch_size")
        if self.size < batch_size:
            return None
        idx = rng.integers(0, self.size, batch_size)
        c = self._cols
        return Batch(
            transitions=[self.entries[i] for i in idx],
            states=c["states"][idx],
            next_states=c["next_states"][idx],
            actions=c["actions"][:, idx],
            rewards=c["rewards"][idx],
            terminals=c["terminals"][idx],
            observations=c["observations"][:, idx],
            next_observations=c["next_observations"][:, idx],
            behavior=c["behavior"][idx],
            extras={k: v[idx] for k, v in self._extra_cols.items()},
        )


def buffer_push(buffer, t, **extras):
    buffer.push(t, **extras)


def buffer_sample(buffer, batch_size, rng):
    return buffer.sample(batch_size, rng)


# ------------------------------------------------------------ checkpoints


def store_to_dict(store):
    if store.kind == "tabular":
        dims = {"n_agents": store.n_agents, "n_inputs": store.n_inputs, "n_actions": store.n_actions}
        params = store.table.reshape(-1).tolist()
    else:
        s = store.spec
        dims = {
            "n_agents": store.n_agents,
            "input_dim": s.input_dim,
            "hidden_dim": s.hidden_dim,
            "n_actions": s.n_actions,
        }
        params = store.params.tolist()
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "kind": store.kind,
        "input_space": store.input_space,
        "dims": dims,
        "parameters": params,
        "version": store.version,
    }


def store_from_dict(data):
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError("not a vdlab checkpoint")
    d = data["dims"]
    if data["kind"] == "tabular":
        store = TabularUtility(d["n_inputs"], d["n_actions"], d["n_agents"], data["input_space"])
        store.table[...] = np.asarray(data["parameters"], float).reshape(store.table.shape)
    elif data["kind"] == "perceptron":
        spec = PerceptronSpec(d["input_dim"], d["hidden_dim"], d["n_actions"])
        store = PerceptronUtility(spec, d["n_agents"], data["input_space"])
        store.params[...] = np.asarray(data["parameters"], float)
    else:
        raise ConfigurationError(f"unknown store kind {data['kind']!r}")
    store.version = data["version"]
    check_finite(store.table if store.kind == "tabular" else store.params, "checkpoint parameter")
    return store


def save_checkpoint(path, **objects):
    """Write stores and mixers to one JSON file keyed by name."""
    from .mixer import mixer_to_dict

    payload = {}
    for name, obj in objects.items():
        payload[name] = store_to_dict(obj) if isinstance(obj, UtilityStore) else mixer_to_dict(obj)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    from .mixer import mixer_from_dict

    with open(path) as fh:
        payload = json.load(fh)
    out = {}
    for name, data in payload.items():
        out[name] = mixer_from_dict(data) if data.get("kind", "").endswith("mixer") else store_from_dict(data)
    return out
