import numpy as np
import pytest

from core.errors import InvalidArgumentError
from core.models import JointActionSpace
from core.policy import (AgentPolicy, JointPolicy, agent_kl, agent_probs, joint_kl,
                         joint_log_ratio_table, joint_prob, mix_probability, sample_joint,
                         soft_update_params, table_kl)


def random_policy(rng, n_states, dims, scale=1.0) -> JointPolicy:
    return JointPolicy.from_logits([scale * rng.normal(size=(n_states, a)) for a in dims])


def test_agent_probs_closed_forms():
    np.testing.assert_allclose(agent_probs(AgentPolicy(np.zeros((1, 5))), 0), np.full(5, 0.2))
    probs = agent_probs(AgentPolicy([[np.log(1.0), np.log(3.0)]]), 0)
    np.testing.assert_allclose(probs, [0.25, 0.75], atol=1e-15)


def test_agent_probs_shift_invariance_and_large_logits():
    logits = np.array([[0.25, -1.5, 2.0]])
    base = agent_probs(AgentPolicy(logits), 0)
    np.testing.assert_allclose(agent_probs(AgentPolicy(logits + 1024.0), 0), base, atol=1e-15)
    assert np.all(agent_probs(AgentPolicy([[500.0, 0.0]]), 0) > 0.0)


def test_agent_policy_rejects_non_finite_logits():
    with pytest.raises(InvalidArgumentError):
        AgentPolicy([[np.nan, 0.0]])


def test_joint_prob_uniform_and_single_agent():
    pi = JointPolicy.uniform(2, [2, 2])
    for a in range(4):
        assert joint_prob(pi, 1, a) == pytest.approx(0.25)
    single = JointPolicy.from_logits([np.array([[0.1, 0.7, -0.3]])])
    for a in range(3):
        assert joint_prob(single, 0, a) == pytest.approx(agent_probs(single.agents[0], 0)[a])


def test_joint_prob_matches_enumeration():
    rng = np.random.default_rng(3)
    dims = [2, 3, 2]
    pi = random_policy(rng, 2, dims)
    space = JointActionSpace(dims)
    total = 0.0
    for flat in range(space.n_joint):
        expected = np.prod([agent_probs(pi.agents[i], 1)[a] for i, a in enumerate(space.decode(flat))])
        assert joint_prob(pi, 1, flat) == pytest.approx(expected, abs=1e-15)
        assert joint_prob(pi, 1, space.decode(flat)) == pytest.approx(expected, abs=1e-15)
        total += joint_prob(pi, 1, flat)
    assert total == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(pi.joint_table().sum(axis=1), 1.0, atol=1e-10)


def test_sample_joint_deterministic_policy():
    pi = JointPolicy.from_logits([np.array([[50.0, 0.0]]), np.array([[0.0, 50.0]])])
    rng = np.random.default_rng(0)
    draws = [sample_joint(pi, 0, rng) for _ in range(10_000)]
    assert np.mean(np.array(draws) == 1) >= 0.999


def test_sample_joint_uniform_frequencies():
    pi = JointPolicy.uniform(1, [2, 2])
    rng = np.random.default_rng(1)
    n = 100_000
    counts = np.bincount([sample_joint(pi, 0, rng) for _ in range(n)], minlength=4)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n * 0.25) <= 3 * sigma)


def test_sample_joint_reproducible():
    rng_pi = np.random.default_rng(9)
    pi = random_policy(rng_pi, 3, [3, 2])
    a = [sample_joint(pi, s % 3, np.random.default_rng(5)) for s in range(10)]
    b = [sample_joint(pi, s % 3, np.random.default_rng(5)) for s in range(10)]
    assert a == b


def test_kl_values():
    rng = np.random.default_rng(0)
    pi = random_policy(rng, 2, [2, 3])
    assert joint_kl(pi, pi.copy(), 0) == pytest.approx(0.0, abs=1e-12)

    one = JointPolicy.from_logits([np.array([[np.log(0.75), np.log(0.25)]])])
    uniform = JointPolicy.uniform(1, [2])
    expected = 0.75 * np.log(1.5) + 0.25 * np.log(0.5)
    assert joint_kl(one, uniform, 0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.130812, abs=1e-6)


@pytest.mark.parametrize("dims", [[2, 2], [3, 4], [2, 3, 4], [4, 4, 4]])
def test_kl_factorizes_over_agents(dims):
    rng = np.random.default_rng(len(dims) * 10 + dims[0])
    pi, rho = random_policy(rng, 2, dims), random_policy(rng, 2, dims)
    per_agent = sum(agent_kl(p, r, 1) for p, r in zip(pi.agents, rho.agents))
    joint_space = table_kl(pi.joint_table(), rho.joint_table())[1]
    assert joint_kl(pi, rho, 1) == pytest.approx(per_agent, abs=1e-12)
    assert joint_space == pytest.approx(per_agent, abs=1e-10)


def test_joint_log_ratio_table_matches_products():
    rng = np.random.default_rng(2)
    pi, rho = random_policy(rng, 2, [2, 3]), random_policy(rng, 2, [2, 3])
    expected = np.log(pi.joint_table() / rho.joint_table())
    np.testing.assert_allclose(joint_log_ratio_table(pi, rho), expected, atol=1e-12)


def test_soft_update_params():
    rng = np.random.default_rng(4)
    target, online = random_policy(rng, 3, [2, 2]), random_policy(rng, 3, [2, 2])
    full = soft_update_params(target, online, 1.0)
    frozen = soft_update_params(target, online, 0.0)
    blended = soft_update_params(target, online, 0.01)
    for i in range(2):
        np.testing.assert_array_equal(full.agents[i].logits, online.agents[i].logits)
        np.testing.assert_array_equal(frozen.agents[i].logits, target.agents[i].logits)
        np.testing.assert_allclose(blended.agents[i].logits,
                                   0.99 * target.agents[i].logits + 0.01 * online.agents[i].logits,
                                   atol=1e-15)
    with pytest.raises(InvalidArgumentError):
        soft_update_params(target, online, 1.5)


def test_soft_update_gap_decays_geometrically():
    rng = np.random.default_rng(5)
    target, online = random_policy(rng, 2, [3]), random_policy(rng, 2, [3])
    gap0 = np.max(np.abs(target.agents[0].logits - online.agents[0].logits))
    tau = 0.1
    for _ in range(25):
        target = soft_update_params(target, online, tau)
    gap = np.max(np.abs(target.agents[0].logits - online.agents[0].logits))
    assert gap == pytest.approx((1 - tau) ** 25 * gap0, abs=1e-12)


def test_mix_probability():
    rng = np.random.default_rng(6)
    pi = random_policy(rng, 2, [2, 3])
    unchanged = mix_probability(pi, pi, 0.3)
    for mixed, table in zip(unchanged, pi.agent_tables()):
        np.testing.assert_allclose(mixed, table, atol=1e-15)

    rho = random_policy(rng, 2, [2, 3])
    for mixed, table in zip(mix_probability(rho, pi, 1.0), pi.agent_tables()):
        np.testing.assert_allclose(mixed, table, atol=1e-15)

    halves = mix_probability([np.array([[1.0, 0.0]])], [np.array([[0.0, 1.0]])], 0.5)
    np.testing.assert_allclose(halves[0], [[0.5, 0.5]])

    joint = mix_probability(rho.joint_table(), pi.joint_table(), 0.2)
    np.testing.assert_allclose(joint.sum(axis=1), 1.0, atol=1e-12)

    for tau in (0.0, 1.2):
        with pytest.raises(InvalidArgumentError):
            mix_probability(rho, pi, tau)
