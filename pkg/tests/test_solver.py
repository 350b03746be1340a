"""
精确层：策略评估、软值迭代、散度策略迭代、LVD 改进与极限策略
"""
import numpy as np
import pytest

from conftest import deterministic_game, lvd_game, one_state_game, random_joint_table, small_game
from core.errors import InvalidArgumentError, NonConvergenceError
from core.game import generate_random_game
from core.models import SolverConfig
from core.policy import JointPolicy, tables_to_joint, uniform_table
from core.solver import (bregman_divergence, divergence_policy_evaluation,
                         divergence_policy_improvement, divergence_policy_iteration,
                         evaluate_policy, exact_return, greedy_policy, limit_policy_prediction,
                         lvd_policy_improvement, occupancy, optimal_action_set,
                         regularized_evaluation, regularized_return, soft_bellman_backup,
                         solve_optimal_regularized, standard_value_iteration, total_variation,
                         v_from_q)


def uniform_for(game):
    return uniform_table(game.n_states, game.n_joint_actions)


# ---------------------------------------------------------------------------
# 策略评估
# ---------------------------------------------------------------------------

def test_evaluation_two_action_closed_form():
    game = one_state_game([1.0, 0.0], gamma=0.9)
    pi = uniform_for(game)
    q = divergence_policy_evaluation(game, pi, pi, SolverConfig(omega=0.3))
    np.testing.assert_allclose(q.values, [[5.5, 4.5]], atol=1e-8)
    v = v_from_q(q, pi, pi, 0.3)
    np.testing.assert_allclose(v.values, [5.0], atol=1e-8)


def test_evaluation_with_pi_equal_rho_is_standard_evaluation():
    game = small_game(0)
    pi = random_joint_table(np.random.default_rng(0), game.n_states, game.n_joint_actions)
    q = divergence_policy_evaluation(game, pi, pi, SolverConfig(omega=2.0))
    _, q_std = evaluate_policy(game, pi)
    np.testing.assert_allclose(q.values, q_std, atol=1e-8)


def test_evaluation_matches_linear_solve_and_contracts():
    game = small_game(1, gamma=0.9)
    rng = np.random.default_rng(1)
    pi, rho = (random_joint_table(rng, game.n_states, game.n_joint_actions) for _ in range(2))
    cfg = SolverConfig(omega=0.5)
    q = divergence_policy_evaluation(game, pi, rho, cfg)
    _, q_exact = regularized_evaluation(game, pi, rho, 0.5)
    np.testing.assert_allclose(q.values, q_exact, atol=1e-8)
    assert q.residuals[-1] <= cfg.tol
    for prev, nxt in zip(q.residuals[1:], q.residuals[2:]):
        assert nxt <= game.gamma * prev + 1e-9


def test_evaluation_omega_zero_is_standard():
    game = small_game(2)
    rng = np.random.default_rng(2)
    pi = random_joint_table(rng, game.n_states, game.n_joint_actions)
    rho = np.zeros_like(pi)
    rho[:, 0] = 1.0
    q = divergence_policy_evaluation(game, pi, rho, SolverConfig(omega=0.0))
    _, q_std = evaluate_policy(game, pi)
    np.testing.assert_allclose(q.values, q_std, atol=1e-8)


def test_evaluation_non_convergence_carries_residual():
    game = small_game(3, gamma=0.99)
    pi = uniform_for(game)
    with pytest.raises(NonConvergenceError) as excinfo:
        divergence_policy_evaluation(game, pi, pi, SolverConfig(max_iters=5))
    assert excinfo.value.iterations == 5
    assert excinfo.value.residual > 0.0


def test_v_from_q_without_regularizer():
    rng = np.random.default_rng(4)
    q = rng.normal(size=(3, 4))
    pi, rho = random_joint_table(rng, 3, 4), random_joint_table(rng, 3, 4)
    np.testing.assert_allclose(v_from_q(q, pi, rho, 0.0).values, np.sum(pi * q, axis=1))
    np.testing.assert_allclose(v_from_q(q, pi, pi, 0.7).values, np.sum(pi * q, axis=1), atol=1e-12)


# ---------------------------------------------------------------------------
# 正则最优解
# ---------------------------------------------------------------------------

def test_optimal_regularized_gamma_zero_closed_form():
    game = one_state_game([1.0, 0.0], gamma=0.0)
    _, _, pi = solve_optimal_regularized(game, uniform_for(game), SolverConfig(omega=1.0))
    e = np.e
    np.testing.assert_allclose(pi, [[e / (1 + e), 1 / (1 + e)]], atol=1e-10)


def test_optimal_regularized_large_omega_stays_on_rho():
    game = small_game(5)
    rho = random_joint_table(np.random.default_rng(5), game.n_states, game.n_joint_actions)
    _, _, pi = solve_optimal_regularized(game, rho, SolverConfig(omega=1e6))
    assert np.max(total_variation(pi, rho)) <= 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_optimal_regularized_consistency(seed):
    game = small_game(seed, n_states=5, n_agents=2, n_actions=3)
    rho = random_joint_table(np.random.default_rng(seed), game.n_states, game.n_joint_actions)
    omega = 0.3
    q, v, pi = solve_optimal_regularized(game, rho, SolverConfig(omega=omega))
    soft = q.values - omega * np.log(pi / rho)
    np.testing.assert_allclose(soft, np.repeat(v.values[:, None], game.n_joint_actions, axis=1),
                               atol=1e-8)
    assert np.all(np.isfinite(q.values))
    for prev, nxt in zip(q.residuals[1:], q.residuals[2:]):
        assert nxt <= game.gamma * prev + 1e-9


def test_optimal_regularized_tiny_omega_does_not_overflow():
    game = small_game(6)
    cfg = SolverConfig(omega=1e-6)
    q, v, pi = solve_optimal_regularized(game, uniform_for(game), cfg)
    v_star, _ = standard_value_iteration(game, cfg)
    assert np.all(np.isfinite(pi))
    assert np.max(np.abs(v.values - v_star.values)) <= 1e-4


def test_optimal_regularized_rejects_nonpositive_omega():
    game = small_game(0)
    with pytest.raises(InvalidArgumentError):
        solve_optimal_regularized(game, uniform_for(game), SolverConfig(omega=0.0))


def test_soft_backup_monotone_and_shift():
    game = small_game(7)
    rng = np.random.default_rng(7)
    rho = random_joint_table(rng, game.n_states, game.n_joint_actions)
    for _ in range(20):
        v1 = rng.normal(size=game.n_states)
        v2 = v1 + rng.uniform(0.0, 1.0, size=game.n_states)
        b1, _ = soft_bellman_backup(game, v1, rho, 0.4)
        b2, _ = soft_bellman_backup(game, v2, rho, 0.4)
        assert np.all(b1 <= b2 + 1e-12)
        shifted, _ = soft_bellman_backup(game, v1 + 3.0, rho, 0.4)
        np.testing.assert_allclose(shifted, b1 + game.gamma * 3.0, atol=1e-10)


# ---------------------------------------------------------------------------
# 策略改进与策略迭代
# ---------------------------------------------------------------------------

def test_improvement_constant_q_returns_rho():
    rng = np.random.default_rng(8)
    rho = random_joint_table(rng, 3, 4)
    np.testing.assert_allclose(divergence_policy_improvement(np.full((3, 4), 2.5), rho, 0.7), rho,
                               atol=1e-12)


def test_improvement_small_omega_is_greedy():
    q = np.array([[1.0, 3.0, 2.0], [0.0, -1.0, 0.5]])
    pi = divergence_policy_improvement(q, uniform_table(2, 3), 1e-4)
    np.testing.assert_allclose(pi, greedy_policy(q), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_improvement_never_decreases_q(seed):
    game = small_game(seed, n_states=4, n_agents=2, n_actions=2)
    rng = np.random.default_rng(100 + seed)
    pi_old, rho = (random_joint_table(rng, game.n_states, game.n_joint_actions) for _ in range(2))
    omega = 0.5
    _, q_old = regularized_evaluation(game, pi_old, rho, omega)
    pi_new = divergence_policy_improvement(q_old, rho, omega)
    _, q_new = regularized_evaluation(game, pi_new, rho, omega)
    assert np.all(q_new >= q_old - 1e-8)


def test_lvd_improvement_single_agent_matches_joint():
    rng = np.random.default_rng(9)
    q = rng.normal(size=(3, 4))
    rho = random_joint_table(rng, 3, 4)
    lvd = lvd_policy_improvement([q], np.ones((1, 3)), np.zeros(3), [rho], 0.6)
    np.testing.assert_allclose(lvd[0], divergence_policy_improvement(q, rho, 0.6), atol=1e-12)


def test_lvd_improvement_constant_components_return_rho():
    rng = np.random.default_rng(10)
    rho = JointPolicy.from_logits([rng.normal(size=(2, 3)), rng.normal(size=(2, 2))])
    q_agents = [np.full((2, 3), 1.5), np.full((2, 2), -0.5)]
    out = lvd_policy_improvement(q_agents, np.ones((2, 2)), np.zeros(2), rho, 0.3)
    for table, expected in zip(out, rho.agent_tables()):
        np.testing.assert_allclose(table, expected, atol=1e-12)


def test_lvd_improvement_requires_positive_weights():
    with pytest.raises(InvalidArgumentError):
        lvd_policy_improvement([np.zeros((1, 2))], np.zeros((1, 1)), np.zeros(1),
                               [np.full((1, 2), 0.5)], 0.5)


@pytest.mark.parametrize("seed", range(10))
def test_lvd_improvement_never_decreases_joint_q(seed):
    game, k, parts = lvd_game(seed)
    rng = np.random.default_rng(200 + seed)
    dims = game.n_actions_per_agent
    pi_old = JointPolicy.from_logits([rng.normal(size=(game.n_states, a)) for a in dims])
    rho = JointPolicy.from_logits([rng.normal(size=(game.n_states, a)) for a in dims])
    omega = 0.4
    v_old, q_old = regularized_evaluation(game, pi_old, rho, omega)

    # 转移与动作无关时 Q = Σ_i k_i·r_i + γ·E[V(s')]
    b = game.gamma * game.transition[:, 0, :] @ v_old
    new_tables = lvd_policy_improvement(parts, k, b, rho, omega)
    pi_new = tables_to_joint(new_tables)
    _, q_new = regularized_evaluation(game, pi_new, rho, omega)
    assert np.all(q_new >= q_old - 1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_policy_iteration_agrees_with_soft_value_iteration(seed):
    rng = np.random.default_rng(seed)
    game = generate_random_game(seed, int(rng.integers(1, 9)), int(rng.integers(1, 3)),
                                int(rng.integers(1, 4)), 10, 0.9)
    rho = random_joint_table(rng, game.n_states, game.n_joint_actions)
    cfg = SolverConfig(omega=0.5)
    result = divergence_policy_iteration(game, rho, cfg)
    q_vi, _, pi_vi = solve_optimal_regularized(game, rho, cfg)
    assert np.max(np.abs(result.q.values - q_vi.values)) <= 1e-6
    assert np.max(total_variation(result.policy, pi_vi)) <= 1e-6
    for prev, nxt in zip(result.value_history, result.value_history[1:]):
        assert np.all(nxt >= prev - 1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_policy_iteration_small_omega_matches_greedy(seed):
    game = deterministic_game(seed, n_states=4, gamma=0.5)
    cfg = SolverConfig(omega=0.01)
    _, q_star = standard_value_iteration(game, cfg)
    sorted_q = np.sort(q_star.values, axis=1)
    if np.min(sorted_q[:, -1] - sorted_q[:, -2]) < 0.1:
        pytest.skip("near-tied game")
    result = divergence_policy_iteration(game, uniform_for(game), cfg)
    np.testing.assert_array_equal(greedy_policy(result.q), greedy_policy(q_star))


# ---------------------------------------------------------------------------
# 值迭代、回报与占用测度
# ---------------------------------------------------------------------------

def test_standard_value_iteration_closed_forms():
    game = one_state_game([1.0, 0.0], gamma=0.9)
    v, _ = standard_value_iteration(game, SolverConfig())
    assert v.values[0] == pytest.approx(10.0, abs=1e-6)

    myopic = small_game(11, gamma=0.0)
    v0, _ = standard_value_iteration(myopic, SolverConfig())
    np.testing.assert_allclose(v0.values, myopic.reward.max(axis=1))


def test_exact_return_forms():
    game = one_state_game([1.0, 0.0], gamma=0.9)
    assert exact_return(game, uniform_for(game)) == pytest.approx(5.0, abs=1e-10)

    game = small_game(12)
    pi = random_joint_table(np.random.default_rng(12), game.n_states, game.n_joint_actions)
    occ = occupancy(game, pi)
    assert exact_return(game, pi) == pytest.approx(np.sum(occ.state_action * game.reward), abs=1e-8)

    cfg = SolverConfig()
    v_star, q_star = standard_value_iteration(game, cfg)
    assert exact_return(game, greedy_policy(q_star)) == pytest.approx(
        game.initial_state_dist @ v_star.values, abs=1e-6)


def test_occupancy_properties():
    one = one_state_game([1.0, 0.0], gamma=0.9)
    assert occupancy(one, uniform_for(one)).state_occupancy[0] == pytest.approx(10.0)

    game = small_game(13)
    pi = random_joint_table(np.random.default_rng(13), game.n_states, game.n_joint_actions)
    occ = occupancy(game, pi)
    assert occ.state_occupancy.sum() == pytest.approx(1.0 / (1.0 - game.gamma), abs=1e-8)
    np.testing.assert_allclose(occ.state_action, occ.state_occupancy[:, None] * pi, atol=1e-10)

    p_pi = np.einsum("sa,sat->st", pi, game.transition)
    dist = game.initial_state_dist.copy()
    series = np.zeros(game.n_states)
    for t in range(501):
        series += game.gamma ** t * dist
        dist = dist @ p_pi
    np.testing.assert_allclose(occ.state_occupancy, series, atol=1e-6)


def test_bregman_divergence():
    game = small_game(14)
    rng = np.random.default_rng(14)
    pi, rho = (random_joint_table(rng, game.n_states, game.n_joint_actions) for _ in range(2))
    occ = occupancy(game, pi)
    assert bregman_divergence(occ, pi, pi) == pytest.approx(0.0, abs=1e-12)
    d_c = bregman_divergence(occ, pi, rho)
    assert d_c >= -1e-12
    omega = 0.7
    assert exact_return(game, pi) - omega * d_c == pytest.approx(
        regularized_return(game, pi, rho, omega), abs=1e-6)


def test_optimal_action_set_and_limit_prediction():
    q = np.array([[1.0, 3.0, 2.0], [2.0, 2.0, 1.0]])
    action_set = optimal_action_set(q, 1e-6)
    assert [list(m) for m in action_set.members] == [[1], [0, 1]]

    pi0 = np.array([[0.2, 0.3, 0.5], [0.2, 0.3, 0.5]])
    np.testing.assert_allclose(limit_policy_prediction(pi0, q, 1e-6),
                               [[0.0, 1.0, 0.0], [0.4, 0.6, 0.0]])
    np.testing.assert_allclose(limit_policy_prediction(uniform_table(2, 3), q, 1e-6)[1],
                               [0.5, 0.5, 0.0])
