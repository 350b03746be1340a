"""
随机合作博弈的生成与单步仿真
"""
from typing import Tuple

import numpy as np
from loguru import logger

from .errors import InvalidArgumentError
from .models import MarkovGame


def generate_random_game(seed: int, n_states: int, n_agents: int, n_actions: int,
                         horizon: int, gamma: float) -> MarkovGame:
    """
    生成随机合作博弈

    转移行服从 Dirichlet(1,...,1)，奖励 i.i.d. Uniform[0,1]，初始分布均匀。
    结果只依赖参数本身，同一 seed 两次调用逐位相同。
    """
    for name, value in (("n_states", n_states), ("n_agents", n_agents),
                        ("n_actions", n_actions), ("horizon", horizon)):
        if int(value) < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {value}")
    if not 0.0 <= gamma < 1.0:
        raise InvalidArgumentError(f"gamma must lie in [0, 1), got {gamma}")

    rng = np.random.default_rng(seed)
    n_joint = n_actions ** n_agents
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_joint))

    game = MarkovGame(
        n_states=n_states,
        n_agents=n_agents,
        n_actions_per_agent=[n_actions] * n_agents,
        transition=transition,
        reward=reward,
        gamma=float(gamma),
        horizon=horizon,
        initial_state_dist=np.full(n_states, 1.0 / n_states),
    )
    logger.debug(f"🎲 生成随机博弈 seed={seed}: {game.summary()}")
    return game


def step(game: MarkovGame, state: int, joint_action: int,
         rng: np.random.Generator) -> Tuple[int, float]:
    """执行联合动作，返回 (下一状态, 奖励)；奖励是确定的"""
    if not 0 <= int(state) < game.n_states:
        raise InvalidArgumentError(f"state {state} out of range [0, {game.n_states})")
    if not 0 <= int(joint_action) < game.n_joint_actions:
        raise InvalidArgumentError(f"joint action {joint_action} out of range "
                                   f"[0, {game.n_joint_actions})")
    row = game.transition[state, joint_action]
    next_state = int(rng.choice(game.n_states, p=row))
    return next_state, float(game.reward[state, joint_action])


def sample_initial_state(game: MarkovGame, rng: np.random.Generator) -> int:
    return int(rng.choice(game.n_states, p=game.initial_state_dist))


def make_symmetric_tie(game: MarkovGame, agent: int, source_action: int,
                       clone_action: int) -> MarkovGame:
    """
    构造精确并列的博弈

    agent 选 clone_action 的每个联合动作，其奖励与转移行都复制自把该智能体动作换成
    source_action 的联合动作，因此任何 Q 函数在这两组动作上逐位相等。
    """
    space = game.action_space
    if not 0 <= agent < game.n_agents:
        raise InvalidArgumentError(f"agent {agent} out of range")
    for a in (source_action, clone_action):
        if not 0 <= a < space.dims[agent]:
            raise InvalidArgumentError(f"action {a} out of range for agent {agent}")

    reward = np.array(game.reward)
    transition = np.array(game.transition)
    per_agent = space.per_agent_table()
    for flat in np.flatnonzero(per_agent[:, agent] == clone_action):
        src = per_agent[flat].copy()
        src[agent] = source_action
        src_flat = space.encode(src)
        reward[:, flat] = reward[:, src_flat]
        transition[:, flat, :] = transition[:, src_flat, :]

    return MarkovGame(
        n_states=game.n_states,
        n_agents=game.n_agents,
        n_actions_per_agent=list(game.n_actions_per_agent),
        transition=transition,
        reward=reward,
        gamma=game.gamma,
        horizon=game.horizon,
        initial_state_dist=np.array(game.initial_state_dist),
    )


def demo_game() -> MarkovGame:
    """内置小博弈：2 状态、1 智能体、2 动作"""
    return MarkovGame(
        n_states=2,
        n_agents=1,
        n_actions_per_agent=[2],
        transition=[[[0.9, 0.1], [0.2, 0.8]],
                    [[0.5, 0.5], [0.0, 1.0]]],
        reward=[[1.0, 0.0], [0.0, 0.5]],
        gamma=0.9,
        horizon=10,
        initial_state_dist=[0.5, 0.5],
    )
