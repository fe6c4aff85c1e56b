"""Mixing of per-agent utilities into a joint value, and TD targets.

``MonotonicMixer`` is a two-layer mixing network whose weights and biases
are produced from the global state by small hypernetworks; the generated
weights pass through ``abs`` so the joint value never decreases in any
agent's utility, which makes the joint argmax equal the per-agent argmaxes.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DivergenceError, ShapeError
from .utils import check_positive_int
from .valuestore import RMSProp, FlatParameters


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


class AdditiveMixer:
    """``Q_tot = sum_i q_i``; no parameters."""

    kind = "additive-mixer"

    def __init__(self, n_agents, state_dim=0):
        self.n_agents = check_positive_int(n_agents, "n_agents")
        self.state_dim = state_dim
        self.params = np.zeros(0)
        self.grad = np.zeros(0)
        self.version = 0

    def forward(self, utilities, states=None, keep=False):
        q = _check_utilities(utilities, self.n_agents)
        return q.sum(axis=1)

    def backward(self, grad_out):
        return np.repeat(np.asarray(grad_out, float)[:, None], self.n_agents, axis=1)

    def apply_gradient(self, lr, grad_clip=None):
        self.version += 1

    def clone(self):
        return AdditiveMixer(self.n_agents, self.state_dim)

    def load_parameters(self, other):
        pass


class MonotonicMixer:
    """State-conditioned monotonic mixing network.

    Layout (``d`` state features, ``n`` agents, ``e`` embed width, ``k``
    hypernet width)::

        w1 = |relu(s A1 + a1) A2 + a2|      (n, e)
        b1 = s B1 + c1                      (e,)
        w2 = |relu(s A3 + a3) A4 + a4|      (e,)
        v  = relu(s V1 + v1) V2 + v2        scalar
        Q_tot = elu(q w1 + b1) . w2 + v
    """

    kind = "monotonic-mixer"

    def __init__(self, n_agents, state_dim, embed_dim=32, hypernet_dim=64, rng=None):
        self.n_agents = check_positive_int(n_agents, "n_agents")
        self.state_dim = check_positive_int(state_dim, "state_dim")
        self.embed_dim = check_positive_int(embed_dim, "embed_dim")
        self.hypernet_dim = check_positive_int(hypernet_dim, "hypernet_dim")
        n, d, e, k = self.n_agents, self.state_dim, self.embed_dim, self.hypernet_dim
        self.layout = FlatParameters(
            {
                "A1": (d, k), "a1": (k,), "A2": (k, n * e), "a2": (n * e,),
                "B1": (d, e), "c1": (e,),
                "A3": (d, k), "a3": (k,), "A4": (k, e), "a4": (e,),
                "V1": (d, e), "v1": (e,), "V2": (e, 1), "v2": (1,),
            }
        )
        self.params = np.zeros(self.layout.size)
        self.grad = np.zeros(self.layout.size)
        self.p = self.layout.views(self.params)
        self.g = self.layout.views(self.grad)
        self.optimizer = None
        self.version = 0
        self._cache = None
        if rng is not None:
            self.reset_parameters(rng)

    def reset_parameters(self, rng):
        weight_of = {"a1": "A1", "a2": "A2", "c1": "B1", "a3": "A3", "a4": "A4", "v1": "V1", "v2": "V2"}
        for name, view in self.p.items():
            fan_in = self.layout.shapes[weight_of.get(name, name)][0]
            bound = 1.0 / np.sqrt(fan_in)
            view[...] = rng.uniform(-bound, bound, view.shape)

    def generate(self, states):
        """Hypernetwork outputs ``(w1, b1, w2, v)`` plus pre-activations."""
        p = self.p
        s = np.asarray(states, dtype=float)
        if s.ndim != 2 or s.shape[1] != self.state_dim:
            raise ShapeError(f"states must have shape (batch, {self.state_dim}), got {s.shape}")
        B = s.shape[0]
        h1 = s @ p["A1"] + p["a1"]
        r1 = np.maximum(h1, 0.0)
        raw_w1 = (r1 @ p["A2"] + p["a2"]).reshape(B, self.n_agents, self.embed_dim)
        b1 = s @ p["B1"] + p["c1"]
        h3 = s @ p["A3"] + p["a3"]
        r3 = np.maximum(h3, 0.0)
        raw_w2 = r3 @ p["A4"] + p["a4"]
        hv = s @ p["V1"] + p["v1"]
        rv = np.maximum(hv, 0.0)
        v = (rv @ p["V2"] + p["v2"])[:, 0]
        inter = dict(s=s, h1=h1, r1=r1, raw_w1=raw_w1, h3=h3, r3=r3, raw_w2=raw_w2, hv=hv, rv=rv)
        return np.abs(raw_w1), b1, np.abs(raw_w2), v, inter

    @staticmethod
    def combine(q, w1, b1, w2, v):
        pre = np.einsum("bn,bne->be", q, w1) + b1
        return (_elu(pre) * w2).sum(axis=1) + v, pre

    def forward(self, utilities, states, keep=False):
        q = _check_utilities(utilities, self.n_agents)
        w1, b1, w2, v, inter = self.generate(states)
        out, pre = self.combine(q, w1, b1, w2, v)
        if keep:
            self._cache = (q, w1, w2, pre, inter)
        return out

    def backward(self, grad_out):
        """Parameter gradients into ``self.grad``; returns ``dL/dq`` (batch, n)."""
        q, w1, w2, pre, it = self._cache
        p, g = self.p, self.g
        B = q.shape[0]
        go = np.asarray(grad_out, float)[:, None]
        act = _elu(pre)
        d_pre = go * w2 * _elu_grad(pre)                      # (B, e)
        d_w2 = go * act                                       # (B, e)
        d_q = np.einsum("be,bne->bn", d_pre, w1)
        d_w1 = q[:, :, None] * d_pre[:, None, :]              # (B, n, e)
        s = it["s"]

        d_raw_w1 = (d_w1 * np.sign(it["raw_w1"])).reshape(B, -1)
        g["A2"][...] = it["r1"].T @ d_raw_w1
        g["a2"][...] = d_raw_w1.sum(axis=0)
        d_h1 = (d_raw_w1 @ p["A2"].T) * (it["h1"] > 0)
        g["A1"][...] = s.T @ d_h1
        g["a1"][...] = d_h1.sum(axis=0)

        g["B1"][...] = s.T @ d_pre
        g["c1"][...] = d_pre.sum(axis=0)

        d_raw_w2 = d_w2 * np.sign(it["raw_w2"])
        g["A4"][...] = it["r3"].T @ d_raw_w2
        g["a4"][...] = d_raw_w2.sum(axis=0)
        d_h3 = (d_raw_w2 @ p["A4"].T) * (it["h3"] > 0)
        g["A3"][...] = s.T @ d_h3
        g["a3"][...] = d_h3.sum(axis=0)

        g["V2"][...] = it["rv"].T @ go
        g["v2"][...] = go.sum(axis=0)
        d_hv = (go @ p["V2"].T) * (it["hv"] > 0)
        g["V1"][...] = s.T @ d_hv
        g["v1"][...] = d_hv.sum(axis=0)
        return d_q

    def apply_gradient(self, lr, grad_clip=None):
        if self.optimizer is None:
            self.optimizer = RMSProp(self.layout.size, grad_clip=grad_clip)
        self.optimizer.step(self.params, self.grad, lr)
        if not np.all(np.isfinite(self.params)):
            raise DivergenceError("mixer parameters became non-finite", {"version": self.version})
        self.version += 1

    def clone(self):
        other = MonotonicMixer(self.n_agents, self.state_dim, self.embed_dim, self.hypernet_dim)
        other.params[...] = self.params
        other.version = self.version
        return other

    def load_parameters(self, other):
        self.params[...] = other.params


def _check_utilities(utilities, n_agents):
    q = np.asarray(utilities, dtype=float)
    if q.ndim == 1:
        q = q[None]
    if q.ndim != 2 or q.shape[1] != n_agents:
        raise ShapeError(f"expected utilities for {n_agents} agents, got shape {q.shape}")
    return q


def _state_row(m, state):
    if m.kind == "additive-mixer":
        return None
    s = np.asarray(state, dtype=float)
    return s[None] if s.ndim == 1 else s


def mix(m, utilities, state=None):
    """Joint value of one utility vector in one state."""
    q = np.asarray(utilities, dtype=float)
    if q.ndim != 1 or len(q) != m.n_agents:
        raise ShapeError(f"expected {m.n_agents} utilities, got shape {q.shape}")
    return float(m.forward(q[None], _state_row(m, state))[0])


def mix_gradient(m, utilities, state=None):
    """``(dQ_tot/dq, dQ_tot/dparams)`` for one utility vector and state."""
    q = np.asarray(utilities, dtype=float)
    if q.ndim != 1 or len(q) != m.n_agents:
        raise ShapeError(f"expected {m.n_agents} utilities, got shape {q.shape}")
    m.forward(q[None], _state_row(m, state), keep=True)
    d_q = m.backward(np.ones(1))[0]
    return d_q, m.grad.copy()


def make_mixer(kind, n_agents, state_dim, rng=None, embed_dim=32, hypernet_dim=64):
    if kind == "additive":
        return AdditiveMixer(n_agents, state_dim)
    if kind in ("monotonic", "monotonic-hypernet"):
        return MonotonicMixer(n_agents, state_dim, embed_dim, hypernet_dim, rng=rng)
    raise ConfigurationError(f"unknown mixer kind {kind!r}")


def mixer_to_dict(m):
    dims = {"n_agents": m.n_agents, "state_dim": m.state_dim}
    if m.kind == "monotonic-mixer":
        dims.update(embed_dim=m.embed_dim, hypernet_dim=m.hypernet_dim)
    return {
        "format": "vdlab-checkpoint",
        "format_version": 1,
        "kind": m.kind,
        "dims": dims,
        "parameters": m.params.tolist(),
        "version": m.version,
    }


def mixer_from_dict(data):
    d = data["dims"]
    if data["kind"] == "additive-mixer":
        m = AdditiveMixer(d["n_agents"], d["state_dim"])
    else:
        m = MonotonicMixer(d["n_agents"], d["state_dim"], d["embed_dim"], d["hypernet_dim"])
        m.params[...] = np.asarray(data["parameters"], float)
    m.version = data["version"]
    return m


# ------------------------------------------------------------ TD targets


@dataclass
class TdTargetBatch:
    targets: np.ndarray
    bootstrap_values: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray


def store_inputs(store, batch, when="next"):
    """Pick the batch columns a store conditions on.

    Learners read observation ids (or their features); experts read the
    global state. Feature columns come from ``batch.extras``.
    """
    A = store.n_agents
    prefix = "next_" if when == "next" else ""
    if store.input_space == "state":
        if store.kind == "tabular":
            ids = batch.extras.get(prefix + "state_ids")
            if ids is None:
                ids = batch.next_states if when == "next" else batch.states
            return np.broadcast_to(ids.astype(np.int64), (A, len(ids)))
        feats = batch.extras[prefix + "state_features"]
        return np.broadcast_to(feats, (A,) + feats.shape)
    if store.kind == "tabular":
        return batch.next_observations if when == "next" else batch.observations
    # stored per transition as (A, dim); stores want agent-major (A, B, dim)
    return np.swapaxes(batch.extras[prefix + "learner_features"], 0, 1)


def td_target(batch, target_stores, target_mixer, online_stores, gamma):
    """Double-Q bootstrapped targets ``r + gamma * mix(q'(next), s')``.

    The online stores choose the next actions and the target stores value
    them; terminal samples get the bare reward. Both stores must condition
    on the same input space, which also fixes which batch columns are read.
    """
    if target_stores.input_space != online_stores.input_space:
        raise ConfigurationError(
            f"online store reads {online_stores.input_space!r} but target store reads "
            f"{target_stores.input_space!r}"
        )
    rewards = np.asarray(batch.rewards, float)
    terminals = np.asarray(batch.terminals, bool)
    if gamma == 0.0 or terminals.all():
        boot = np.zeros((len(rewards), target_stores.n_agents))
        return TdTargetBatch(rewards.copy(), boot, rewards, terminals)
    nxt = store_inputs(online_stores, batch, "next")
    online_next = online_stores.values(nxt)
    chosen = np.argmax(online_next, axis=-1)
    target_next = target_stores.values(store_inputs(target_stores, batch, "next"))
    A, B = chosen.shape
    boot = target_next[np.arange(A)[:, None], np.arange(B)[None], chosen].T  # (B, A)
    next_states = batch.extras.get("next_state_features")
    joint = target_mixer.forward(boot, next_states)
    targets = rewards + gamma * np.where(terminals, 0.0, joint)
    return TdTargetBatch(targets, boot, rewards, terminals)
