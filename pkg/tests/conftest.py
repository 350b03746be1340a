"""
测试公共构造器
"""
from typing import List, Tuple

import numpy as np
import pytest
from loguru import logger

from core.game import generate_random_game, make_symmetric_tie
from core.models import MarkovGame, SolverConfig, TrainerConfig
from core.solver import standard_value_iteration


@pytest.fixture(autouse=True)
def quiet_logs():
    """测试期间只保留 WARNING 以上的日志"""
    import sys
    logger.remove()
    logger.add(sys.stderr, level="WARNING")
    yield
    logger.remove()


def one_state_game(rewards, gamma: float = 0.9, horizon: int = 10) -> MarkovGame:
    """1 状态、1 智能体，动作数等于奖励个数"""
    n = len(rewards)
    return MarkovGame(
        n_states=1,
        n_agents=1,
        n_actions_per_agent=[n],
        transition=np.ones((1, n, 1)),
        reward=[list(rewards)],
        gamma=gamma,
        horizon=horizon,
        initial_state_dist=[1.0],
    )


def small_game(seed: int, n_states: int = 4, n_agents: int = 2, n_actions: int = 2,
               gamma: float = 0.9, horizon: int = 10) -> MarkovGame:
    return generate_random_game(seed, n_states, n_agents, n_actions, horizon, gamma)


def deterministic_game(seed: int, n_states: int = 3, n_agents: int = 2, n_actions: int = 2,
                       gamma: float = 0.9) -> MarkovGame:
    """每个 (s, a) 只有一个后继状态"""
    rng = np.random.default_rng(seed)
    n_joint = n_actions ** n_agents
    successors = rng.integers(0, n_states, size=(n_states, n_joint))
    transition = np.zeros((n_states, n_joint, n_states))
    for s in range(n_states):
        transition[s, np.arange(n_joint), successors[s]] = 1.0
    return MarkovGame(
        n_states=n_states,
        n_agents=n_agents,
        n_actions_per_agent=[n_actions] * n_agents,
        transition=transition,
        reward=rng.uniform(0.0, 1.0, size=(n_states, n_joint)),
        gamma=gamma,
        horizon=10,
        initial_state_dist=np.full(n_states, 1.0 / n_states),
    )


def lvd_game(seed: int, n_states: int = 3, n_agents: int = 2, n_actions: int = 3,
             gamma: float = 0.9) -> Tuple[MarkovGame, np.ndarray, List[np.ndarray]]:
    """
    奖励满足 r(s,a) = Σ_i k_i(s)·r_i(s,a_i)、转移与动作无关的博弈

    此时任何乘积策略的 Q^π_ρ 都精确具有线性分解形式。返回 (game, k, [r_i])。
    """
    rng = np.random.default_rng(seed)
    dims = [n_actions] * n_agents
    n_joint = n_actions ** n_agents
    k = rng.uniform(0.5, 2.0, size=(n_agents, n_states))
    parts = [rng.uniform(0.0, 1.0, size=(n_states, n_actions)) for _ in range(n_agents)]
    per_agent = np.array(np.unravel_index(np.arange(n_joint), dims)).T
    reward = np.zeros((n_states, n_joint))
    for i in range(n_agents):
        reward += k[i][:, None] * parts[i][:, per_agent[:, i]]
    rows = rng.dirichlet(np.ones(n_states), size=n_states)
    transition = np.repeat(rows[:, None, :], n_joint, axis=1)
    game = MarkovGame(
        n_states=n_states,
        n_agents=n_agents,
        n_actions_per_agent=dims,
        transition=transition,
        reward=reward,
        gamma=gamma,
        horizon=10,
        initial_state_dist=np.full(n_states, 1.0 / n_states),
    )
    return game, k, parts


def random_joint_table(rng: np.random.Generator, n_states: int, n_joint: int) -> np.ndarray:
    """全支撑的随机联合策略表（一般不是乘积形式）"""
    return rng.dirichlet(np.ones(n_joint), size=n_states)


def optimality_gap(game: MarkovGame, exclude_ties: float = 1e-9) -> float:
    """每个状态最优 Q* 与次优（非并列）值之差的最小值"""
    _, q = standard_value_iteration(game, SolverConfig(vi_tol=1e-12))
    best = q.values.max(axis=1, keepdims=True)
    diffs = best - q.values
    diffs = np.where(diffs > exclude_ties, diffs, np.inf)
    return float(diffs.min())


def separated_games(count: int, min_gap: float, tie: bool = False, **kwargs) -> List[MarkovGame]:
    """挑选最优与次优动作间隔至少 min_gap 的小博弈；tie=True 时先构造对称并列"""
    games = []
    for seed in range(1000):
        game = small_game(seed, **kwargs)
        if tie:
            game = make_symmetric_tie(game, agent=0, source_action=0, clone_action=1)
        if optimality_gap(game) >= min_gap:
            games.append(game)
        if len(games) == count:
            return games
    raise AssertionError(f"only {len(games)} games with gap >= {min_gap}")


@pytest.fixture
def tiny_trainer_config() -> TrainerConfig:
    return TrainerConfig(omega=0.2, tau=0.1, critic_lr=0.1, actor_lr=0.1, batch_size=8,
                         buffer_capacity=1000, episodes=12, eval_every=4, eval_episodes=2,
                         seed=0)
