import itertools

import numpy as np
import pytest

from vdlab.envs import Transition
from vdlab.exceptions import ConfigurationError, ShapeError
from vdlab.mixer import (
    AdditiveMixer,
    MonotonicMixer,
    make_mixer,
    mix,
    mix_gradient,
    mixer_from_dict,
    mixer_to_dict,
    td_target,
)
from vdlab.valuestore import Batch, TabularUtility

HYPER_WEIGHTS = ("A1", "a1", "A2", "a2", "A3", "a3", "A4", "a4")


def _random_mixer(rng, n=None, d=None):
    n = n or int(rng.integers(1, 4))
    d = d or int(rng.integers(1, 5))
    m = MonotonicMixer(n, d, int(rng.integers(1, 5)), int(rng.integers(1, 6)), rng=rng)
    m.params[...] = rng.normal(size=m.params.size)
    return m


def test_additive_sum():
    assert mix(AdditiveMixer(3), [1.0, 2.0, 0.5]) == 3.5


def test_additive_partials_are_one():
    d_q, d_p = mix_gradient(AdditiveMixer(3), [1.0, -2.0, 0.5])
    assert d_q.tolist() == [1.0, 1.0, 1.0] and d_p.size == 0


def test_length_mismatch():
    with pytest.raises(ShapeError):
        mix(AdditiveMixer(3), [1.0, 2.0])
    with pytest.raises(ShapeError):
        mix(MonotonicMixer(2, 3, rng=np.random.default_rng(0)), [1.0], np.zeros(3))


def test_zero_hyper_weights_leave_state_value_only():
    rng = np.random.default_rng(0)
    m = _random_mixer(rng, n=3, d=4)
    for name in HYPER_WEIGHTS:
        m.p[name][...] = 0.0
    s = rng.normal(size=4)
    values = {mix(m, rng.normal(size=3) * 10, s) for _ in range(5)}
    assert len(values) == 1
    d_q, _ = mix_gradient(m, rng.normal(size=3), s)
    assert np.all(d_q == 0.0)


def test_monotone_under_utility_bumps():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        m = _random_mixer(rng)
        s = rng.normal(size=m.state_dim)
        q = rng.normal(size=m.n_agents) * 3
        i = int(rng.integers(m.n_agents))
        bumped = q.copy()
        bumped[i] += 1e-3
        assert mix(m, bumped, s) >= mix(m, q, s) - 1e-12


def test_utility_partials_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        m = _random_mixer(rng)
        d_q, _ = mix_gradient(m, rng.normal(size=m.n_agents) * 3, rng.normal(size=m.state_dim))
        assert d_q.min() >= -1e-12


def test_argmax_factorises():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        m = _random_mixer(rng, n=2)
        s = rng.normal(size=m.state_dim)
        cands = [rng.normal(size=int(rng.integers(1, 6))) * 3 for _ in range(2)]
        best = max(mix(m, [a, b], s) for a, b in itertools.product(*cands))
        assert mix(m, [c.max() for c in cands], s) == pytest.approx(best, abs=1e-12)


def _fd_relative_error(m, q, s, h=1e-5):
    d_q, d_p = mix_gradient(m, q, s)
    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-6)

    for i in range(len(q)):
        up, down = q.copy(), q.copy()
        up[i] += h
        down[i] -= h
        worst = max(worst, rel(d_q[i], (mix(m, up, s) - mix(m, down, s)) / (2 * h)))
    for k in range(m.params.size):
        old = m.params[k]
        m.params[k] = old + h
        f_up = mix(m, q, s)
        m.params[k] = old - h
        f_down = mix(m, q, s)
        m.params[k] = old
        worst = max(worst, rel(d_p[k], (f_up - f_down) / (2 * h)))
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        m = _random_mixer(rng)
        worst = max(worst, _fd_relative_error(m, rng.normal(size=m.n_agents), rng.normal(size=m.state_dim)))
    assert worst < 1e-4


def test_unit_weights_reduce_to_additive():
    rng = np.random.default_rng(5)
    m = MonotonicMixer(3, 4, embed_dim=1, hypernet_dim=3, rng=rng)
    for name in ("A2", "A4", "B1", "c1", "V2", "v2"):
        m.p[name][...] = 0.0
    m.p["a2"][...] = 1.0
    m.p["a4"][...] = 1.0
    add = AdditiveMixer(3)
    for _ in range(50):
        q = rng.uniform(0.0, 5.0, 3)
        assert mix(m, q, rng.normal(size=4)) == pytest.approx(mix(add, q), abs=1e-12)


def test_batch_forward_matches_single():
    rng = np.random.default_rng(6)
    m = _random_mixer(rng, n=3, d=4)
    q, s = rng.normal(size=(8, 3)), rng.normal(size=(8, 4))
    batch = m.forward(q, s)
    single = [mix(m, q[b], s[b]) for b in range(8)]
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-12)


def test_mixer_round_trip():
    rng = np.random.default_rng(7)
    m = _random_mixer(rng, n=2, d=3)
    back = mixer_from_dict(mixer_to_dict(m))
    np.testing.assert_array_equal(back.params, m.params)
    assert mixer_from_dict(mixer_to_dict(AdditiveMixer(2))).n_agents == 2


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        make_mixer("attention", 2, 3)


# -------------------------------------------------------------- targets


def _batch(transitions):
    col = lambda f: np.array([getattr(t, f) for t in transitions])
    per_agent = lambda f: np.array([getattr(t, f) for t in transitions]).T
    return Batch(
        transitions=list(transitions),
        states=col("state"),
        next_states=col("next_state"),
        actions=per_agent("joint_action"),
        rewards=col("reward").astype(float),
        terminals=col("terminal"),
        observations=per_agent("observations"),
        next_observations=per_agent("next_observations"),
        behavior=col("behavior"),
    )


def _two_agent_stores():
    online = TabularUtility(2, 2, n_agents=2)
    target = TabularUtility(2, 2, n_agents=2)
    online.table[0, 1] = [0.0, 5.0]
    online.table[1, 1] = [5.0, 0.0]
    target.table[0, 1] = [7.0, 1.0]
    target.table[1, 1] = [2.0, 9.0]
    return online, target


def test_terminal_target_is_reward():
    online, target = _two_agent_stores()
    b = _batch([Transition(0, 1, (0, 0), 1.0, (0, 0), (1, 1), True)])
    assert td_target(b, target, AdditiveMixer(2), online, 0.9).targets.tolist() == [1.0]


def test_zero_gamma_returns_rewards():
    online, target = _two_agent_stores()
    b = _batch([Transition(0, 1, (0, 0), 0.25, (0, 0), (1, 1), False)])
    assert td_target(b, target, AdditiveMixer(2), online, 0.0).targets.tolist() == [0.25]


def test_additive_target_arithmetic():
    online, target = _two_agent_stores()
    b = _batch([Transition(0, 1, (0, 0), 0.5, (0, 0), (1, 1), False)])
    # online picks action 1 for agent 0 and action 0 for agent 1; target values 1.0 and 2.0
    td = td_target(b, target, AdditiveMixer(2), online, 0.9)
    assert td.bootstrap_values.tolist() == [[1.0, 2.0]]
    assert td.targets[0] == pytest.approx(0.5 + 0.9 * 3.0)


def test_mismatched_input_spaces():
    online = TabularUtility(2, 2, n_agents=2, input_space="state")
    target = TabularUtility(2, 2, n_agents=2)
    b = _batch([Transition(0, 1, (0, 0), 0.5, (0, 0), (1, 1), False)])
    with pytest.raises(ConfigurationError):
        td_target(b, target, AdditiveMixer(2), online, 0.9)
