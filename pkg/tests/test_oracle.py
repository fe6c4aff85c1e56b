import itertools

import numpy as np
import pytest

from vdlab.envs import (
    TabularDecPomdp,
    coordination_counterexample,
    make_aliased_frozenlake,
    make_matrix_game,
    rollout,
)
from vdlab.exceptions import CapabilityError, RejectedInputError
from vdlab.oracle import (
    AliasSampleSet,
    ExpertPolicy,
    PenaltyMatrix,
    accumulated_closed_form,
    bayes_expected_loss,
    bayes_optimal_local,
    certify_lossy,
    error_breakdown,
    exact_q,
    local_policy_reaches_goal,
    optimal_action_sets,
    search_goal_reaching_policies,
    separated_closed_form,
)

# ------------------------------------------------------------ exact_q


def test_bandit():
    env = TabularDecPomdp(np.ones((1, 2, 1)), [[0.0, 1.0]], [[0]], n_agents=1, n_actions=2, discount=0.0)
    np.testing.assert_allclose(exact_q(env), [[0.0, 1.0]])


def test_two_step_chain():
    # 0 -(a1)-> 1 -(a1)-> 2 (terminal, reward 1); a0 stays put
    P = np.zeros((3, 2, 3))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 1] = P[1, 1, 2] = P[2, :, 2] = 1.0
    R = np.zeros((3, 2, 3))
    R[1, 1, 2] = 1.0
    env = TabularDecPomdp(P, R, [[0], [1], [2]], n_agents=1, n_actions=2, discount=0.9,
                          terminal_states=[False, False, True])
    Q = exact_q(env)
    assert Q[0, 1] == pytest.approx(0.9, abs=1e-9)
    assert Q[1, 1] == pytest.approx(1.0, abs=1e-9)


def test_greedy_q_solves_open_lake(open_lake):
    Q = exact_q(open_lake)
    ep = rollout(open_lake, lambda s, o: (int(np.argmax(Q[s])),), np.random.default_rng(0))
    assert ep.won


def test_exact_q_needs_enumeration():
    from vdlab.envs import make_grid_skirmish

    with pytest.raises(CapabilityError):
        exact_q(make_grid_skirmish())


# ------------------------------------------------------ certification


def test_counterexample_is_lossy(aliased_game):
    cert = certify_lossy(aliased_game, exact_q(aliased_game))
    assert cert.lossy and len(cert.mismatch_states) >= 1
    assert cert.witness_state_pairs == [(0, 1, [0, 1])]


def test_counterexample_every_local_policy_mismatches(aliased_game):
    optimal = optimal_action_sets(exact_q(aliased_game))
    for a0, a1 in itertools.product(range(2), repeat=2):
        j = aliased_game.joint_index((a0, a1))
        assert sum(not optimal[s, j] for s in (0, 1)) >= 1


def test_identity_observations_lossless():
    rng = np.random.default_rng(0)
    env = coordination_counterexample("identity")
    for _ in range(20):
        assert not certify_lossy(env, rng.normal(size=(2, 4))).lossy


def test_identical_payoffs_lossless():
    env = make_matrix_game([[[1, 0], [0, 0.5]], [[1, 0], [0, 0.5]]])
    assert not certify_lossy(env, exact_q(env)).lossy


def test_default_lake_is_lossy(lake):
    assert certify_lossy(lake, exact_q(lake)).lossy


def test_default_lake_still_has_goal_paths(lake):
    # 0 -> 4 -> 8 -> 9 -> 13 -> 14 -> 15 is consistent with the distance bands
    moves = {0: 1, 4: 1, 8: 2, 9: 1, 13: 2, 14: 2}
    assert local_policy_reaches_goal(lake, [{int(lake.O[s, 0]): a for s, a in moves.items()}])
    cell_type = make_aliased_frozenlake(alias_groups="cell-type")
    assert search_goal_reaching_policies(cell_type) == []


def test_certificate_json_fields(aliased_game):
    d = certify_lossy(aliased_game, exact_q(aliased_game)).to_dict()
    assert set(d) >= {"witness_state_pairs", "best_local_policy", "mismatch_states", "lossy"}


def _random_game(rng, n_agents=2):
    S, A = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    J = A**n_agents
    P = np.zeros((S, J, S))
    P[np.arange(S), :, (np.arange(S) + 1) % S] = 1.0
    O = rng.integers(0, 2, size=(S, n_agents))
    env = TabularDecPomdp(P, np.zeros((S, J)), O, n_agents=n_agents, n_actions=A)
    return env, rng.integers(0, 3, size=(S, J)).astype(float)


def test_certificate_minimises_over_all_local_policies():
    rng = np.random.default_rng(1)
    for _ in range(60):
        env, Q = _random_game(rng)
        cert = certify_lossy(env, Q, reachable_only=False)
        optimal = optimal_action_sets(Q)
        n_obs = [env.n_observations(i) for i in range(2)]
        tables = [itertools.product(range(env.n_actions), repeat=n) for n in n_obs]
        brute = min(
            sum(not optimal[s, env.joint_index([t0[env.O[s, 0]], t1[env.O[s, 1]]])] for s in range(env.n_states))
            for t0, t1 in itertools.product(*[list(t) for t in tables])
        )
        assert len(cert.mismatch_states) == brute


def test_coarsening_never_removes_lossiness():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(80):
        labels = rng.integers(0, 5, 16)
        groups = [list(np.flatnonzero(labels == g)) for g in range(5) if np.any(labels == g)]
        env = make_aliased_frozenlake(alias_groups=groups)
        Q = rng.normal(size=(16, 4))
        if not certify_lossy(env, Q).lossy or len(groups) < 2:
            continue
        merged = [groups[0] + groups[1]] + groups[2:]
        coarse = make_aliased_frozenlake(alias_groups=merged)
        assert certify_lossy(coarse, Q).lossy
        checked += 1
    assert checked > 10


def test_policy_cap():
    env = make_matrix_game(np.zeros((2, 3, 3)), observations="identity")
    with pytest.raises(CapabilityError):
        certify_lossy(env, np.zeros((2, 9)), cap=3)


def test_goal_reaching_check(open_lake):
    Q = exact_q(open_lake)
    policy = [{int(open_lake.O[s, 0]): int(np.argmax(Q[s])) for s in range(16)}]
    assert local_policy_reaches_goal(open_lake, policy)
    assert not local_policy_reaches_goal(open_lake, [{}])


# -------------------------------------------------------------- Bayes


def test_perfect_agreement_costs_nothing():
    expert = ExpertPolicy({0: (2,), 1: (2,)}, 3)
    alias = AliasSampleSet(0, {0: 1, 1: 3})
    assert bayes_expected_loss(expert, alias, PenaltyMatrix.zero_one(3), 2) == 0.0


def test_half_agreement():
    expert = ExpertPolicy({0: (0,), 1: (1,)}, 2)
    alias = AliasSampleSet(0, {0: 1, 1: 1})
    assert bayes_expected_loss(expert, alias, PenaltyMatrix.zero_one(2), 0) == 0.5


def test_zero_penalty():
    expert = ExpertPolicy({0: (0,), 1: (1,)}, 2)
    alias = AliasSampleSet(0, {0: 2, 1: 1})
    zero = PenaltyMatrix(np.zeros((2, 2)))
    assert all(bayes_expected_loss(expert, alias, zero, u) == 0.0 for u in range(2))


def test_counting_example():
    expert = ExpertPolicy({0: (0,), 1: (0,), 2: (1,)}, 2)
    alias = AliasSampleSet.from_states(0, [0, 1, 2])
    q = bayes_optimal_local(expert, alias)
    np.testing.assert_allclose(q, [2 / 3, 1 / 3])
    risks = [bayes_expected_loss(expert, alias, PenaltyMatrix.zero_one(2), u) for u in range(2)]
    assert np.argmax(q) == np.argmin(risks) == 0


def test_single_sample_is_one_hot():
    expert = ExpertPolicy({4: (3,)}, 4)
    assert bayes_optimal_local(expert, AliasSampleSet(0, {4: 1})).tolist() == [0, 0, 0, 1]


def test_sample_set_needs_samples():
    with pytest.raises(RejectedInputError):
        AliasSampleSet(0, {})


def test_occupancy_normalised():
    alias = AliasSampleSet(0, {0: 2, 5: 1, 9: 7})
    assert sum(alias.occupancy.values()) == pytest.approx(1.0) and alias.k == 10


def test_random_bayes_instances():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n_states, n_actions = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        expert = ExpertPolicy.from_array(rng.integers(0, n_actions, n_states), n_actions)
        alias = AliasSampleSet(0, {s: int(rng.integers(1, 10)) for s in range(n_states)})
        q = bayes_optimal_local(expert, alias)
        assert q.min() >= 0 and q.sum() == pytest.approx(1.0, abs=1e-12)
        penalty = PenaltyMatrix.zero_one(n_actions)
        risks = np.array([bayes_expected_loss(expert, alias, penalty, u) for u in range(n_actions)])
        minimisers = np.flatnonzero(risks <= risks.min() + 1e-12)
        assert int(np.argmax(q)) in minimisers
        np.testing.assert_allclose(risks, 1.0 - q, rtol=0, atol=1e-12)


# ---------------------------------------------------- error accounting


def test_constant_decomposition_error():
    eps = 0.37
    out = error_breakdown([eps] * 3, [0.0] * 3, 0.9)
    assert out.accumulated_total == pytest.approx(2.71 * eps, abs=1e-12)
    assert out.separated_total == pytest.approx(eps, abs=1e-12)


def test_zero_gamma_keeps_first_step():
    out = error_breakdown([0.2, 5.0], [0.3, 7.0], 0.0)
    assert out.accumulated_total == pytest.approx(0.5) and out.separated_total == pytest.approx(0.5)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 0.9, 0.99])
def test_recursion_matches_closed_forms(gamma):
    rng = np.random.default_rng(int(gamma * 100))
    for _ in range(100):
        T = int(rng.integers(1, 51))
        e_dec, e_other = rng.normal(size=T), rng.normal(size=T)
        out = error_breakdown(e_dec, e_other, gamma)
        assert abs(out.accumulated_series[0] - accumulated_closed_form(e_dec, e_other, gamma)) <= 1e-12
        assert abs(out.separated_series[0] - separated_closed_form(e_dec, e_other, gamma)) <= 1e-12


def test_mismatched_schedules_rejected():
    with pytest.raises(RejectedInputError):
        error_breakdown([1.0, 2.0], [1.0], 0.9)


def test_empirical_mode_measures_gap(open_lake):
    Q = exact_q(open_lake)
    ep = rollout(open_lake, lambda s, o: (int(np.argmax(Q[s])),), np.random.default_rng(0))
    exact = error_breakdown(env=open_lake, q_exact=Q, q_hat=lambda s, u: Q[s, u[0]], trace=ep.transitions,
                            gamma=open_lake.discount)
    assert exact.measured_total == pytest.approx(0.0, abs=1e-12)
    off = error_breakdown(env=open_lake, q_exact=Q, q_hat=lambda s, u: Q[s, u[0]] - 0.1, trace=ep.transitions,
                          gamma=open_lake.discount)
    assert off.measured_total == pytest.approx(0.1)
    assert off.accumulated_total == pytest.approx(off.measured_total, abs=1e-12)


def test_trace_longer_than_horizon(aliased_game):
    Q = exact_q(aliased_game)
    trace = rollout(aliased_game, lambda s, o: (0, 0), np.random.default_rng(0)).transitions * 2
    with pytest.raises(RejectedInputError):
        error_breakdown(env=aliased_game, q_exact=Q, q_hat=lambda s, u: 0.0, trace=trace)
