"""
采样版 DMAC 训练器（离策略 actor-critic）

经验回放、散度正则的评论家更新、带反事实基线的 actor 梯度（联合评论家与线性值分解评论家），
以及目标策略 / 目标评论家的软更新。每个训练过程单线程运行，独占全部可变状态。
"""
from typing import List, Optional, Set, Tuple, Union

import numpy as np
from loguru import logger

from .errors import InvalidArgumentError
from .game import sample_initial_state, step
from .models import (CriticKind, MarkovGame, MetricPoint, NextActionMode, Regularizer,
                     RunMetrics, TrainerConfig, Transition)
from .policy import (JointPolicy, PolicyLike, action_space, agent_probs, as_table, sample_joint,
                     joint_log_ratio_table, soft_update_params)
from .solver import exact_return


class ReplayBuffer:
    """定长环形经验池，按当前内容均匀采样"""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise InvalidArgumentError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self._states = np.zeros(capacity, dtype=np.int64)
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=np.float64)
        self._next_states = np.zeros(capacity, dtype=np.int64)
        self.n_inserted = 0

    def __len__(self) -> int:
        return min(self.n_inserted, self.capacity)

    def add(self, transition: Transition):
        i = self.n_inserted % self.capacity
        self._states[i] = transition.state
        self._actions[i] = transition.joint_action
        self._rewards[i] = transition.reward
        self._next_states[i] = transition.next_state
        self.n_inserted += 1

    def sample(self, batch_size: int) -> List[Transition]:
        if len(self) == 0:
            raise InvalidArgumentError("cannot sample from an empty replay buffer")
        idx = self.rng.integers(0, len(self), size=batch_size)
        return [Transition(int(self._states[i]), int(self._actions[i]),
                           float(self._rewards[i]), int(self._next_states[i])) for i in idx]


class JointCritic:
    """联合 Q 表 φ 与目标 Q 表 φ̃"""

    def __init__(self, n_states: int, n_joint: int):
        self.q = np.zeros((n_states, n_joint))
        self.q_target = np.zeros((n_states, n_joint))

    def table(self, target: bool = False) -> np.ndarray:
        return self.q_target if target else self.q

    def soft_update(self, tau: float):
        self.q_target = (1.0 - tau) * self.q_target + tau * self.q


class DecomposedCritic:
    """
    线性值分解评论家 Q(s,a) = Σ_i k_i(s)·Q_i(s,a_i) + b(s)

    k_i(s) = exp(raw_k[i, s]) 保证为正。
    """

    def __init__(self, n_states: int, n_actions_per_agent: List[int]):
        self.dims = [int(a) for a in n_actions_per_agent]
        self.space = action_space(tuple(self.dims))
        self.q_agents = [np.zeros((n_states, a)) for a in self.dims]
        self.raw_k = np.zeros((len(self.dims), n_states))
        self.b = np.zeros(n_states)
        self.q_agents_target = [q.copy() for q in self.q_agents]
        self.raw_k_target = self.raw_k.copy()
        self.b_target = self.b.copy()

    @property
    def k(self) -> np.ndarray:
        return np.exp(self.raw_k)

    def _params(self, target: bool):
        if target:
            return self.q_agents_target, np.exp(self.raw_k_target), self.b_target
        return self.q_agents, self.k, self.b

    def value(self, state: int, joint_action: int, target: bool = False) -> float:
        q_agents, k, b = self._params(target)
        per_agent = self.space.decode(joint_action)
        return float(sum(k[i, state] * q_agents[i][state, a_i] for i, a_i in enumerate(per_agent))
                     + b[state])

    def table(self, target: bool = False) -> np.ndarray:
        """物化为 [state][joint_action] 联合 Q 表"""
        q_agents, k, b = self._params(target)
        per_agent = self.space.per_agent_table()
        total = b[:, None] + np.zeros((len(b), self.space.n_joint))
        for i, q_i in enumerate(q_agents):
            total = total + k[i][:, None] * q_i[:, per_agent[:, i]]
        return total

    def soft_update(self, tau: float):
        self.q_agents_target = [(1.0 - tau) * t + tau * q
                                for t, q in zip(self.q_agents_target, self.q_agents)]
        self.raw_k_target = (1.0 - tau) * self.raw_k_target + tau * self.raw_k
        self.b_target = (1.0 - tau) * self.b_target + tau * self.b


Critic = Union[JointCritic, DecomposedCritic]
CriticLike = Union[Critic, np.ndarray]


def _critic_table(critic: CriticLike, target: bool = False) -> np.ndarray:
    if isinstance(critic, (JointCritic, DecomposedCritic)):
        return critic.table(target)
    return np.asarray(critic, dtype=np.float64)


def _joint_row(policy: PolicyLike, state: int) -> np.ndarray:
    """状态 state 下的联合动作分布"""
    if isinstance(policy, JointPolicy):
        row = np.ones(1)
        for agent in policy.agents:
            row = np.outer(row, agent_probs(agent, state)).ravel()
        return row
    return np.asarray(policy)[state]


def critic_target(transition: Transition, q_target: CriticLike, pi: PolicyLike, rho: PolicyLike,
                  omega: float, gamma: float,
                  mode: NextActionMode = NextActionMode.EXPECTED,
                  rng: Optional[np.random.Generator] = None,
                  next_action: Optional[int] = None) -> float:
    """
    y = r + γ·(Q̃(s',a') - ω·log(π(a'|s')/ρ(a'|s')))

    sampled: a' ~ π(·|s')（或显式给出 next_action）；expected: 对 a' 按 π 求精确期望。
    """
    s_next = transition.next_state
    q_row = _critic_table(q_target, target=True)[s_next]
    mode = NextActionMode(mode)
    if mode is NextActionMode.EXPECTED and next_action is None:
        pi_row = _joint_row(pi, s_next)
        soft = q_row
        if omega != 0.0:
            support = pi_row > 0.0
            soft = np.where(support, q_row - omega * joint_log_ratio_table(pi, rho)[s_next], 0.0)
        return float(transition.reward + gamma * np.sum(pi_row * soft))

    if next_action is None:
        if rng is None:
            raise InvalidArgumentError("sampled targets need a random stream")
        pi_row = _joint_row(pi, s_next)
        next_action = int(rng.choice(len(pi_row), p=pi_row))
    value = q_row[next_action]
    if omega != 0.0:
        value = value - omega * joint_log_ratio_table(pi, rho)[s_next][next_action]
    return float(transition.reward + gamma * value)


def critic_update(critic: Critic, batch: List[Transition], pi: PolicyLike, rho: PolicyLike,
                  cfg: TrainerConfig, gamma: float,
                  rng: Optional[np.random.Generator] = None) -> Critic:
    """
    对 L_Q = E[(Q_φ(s,a) - y)²] 做表格梯度步，目标由目标评论家给出

    联合评论家：q[s][a] += α·(y - q[s][a])；分解评论家：TD 误差按线性形式
    分配给 Q_i、k_i(s)（经 exp 参数化的链式法则）与 b(s)。
    """
    q_target = critic.table(target=True)
    pi_table, rho_table = as_table(pi), as_table(rho)
    targets = [critic_target(t, q_target, pi_table, rho_table, cfg.omega, gamma,
                             cfg.next_action_mode, rng)
               for t in batch]
    alpha = cfg.critic_lr
    if isinstance(critic, JointCritic):
        for t, y in zip(batch, targets):
            critic.q[t.state, t.joint_action] += alpha * (y - critic.q[t.state, t.joint_action])
        return critic

    for t, y in zip(batch, targets):
        s = t.state
        per_agent = critic.space.decode(t.joint_action)
        delta = y - critic.value(s, t.joint_action)
        k = critic.k[:, s].copy()
        q_vals = np.array([critic.q_agents[i][s, a_i] for i, a_i in enumerate(per_agent)])
        for i, a_i in enumerate(per_agent):
            critic.q_agents[i][s, a_i] += alpha * delta * k[i]
            critic.raw_k[i, s] += alpha * delta * k[i] * q_vals[i]
        critic.b[s] += alpha * delta
    return critic


def _score_row(pi_i: np.ndarray, a_i: int) -> np.ndarray:
    """softmax 参数化下 ∇_{θ_i[s]} log π_i(a_i|s) = e_{a_i} - π_i(·|s)"""
    score = -pi_i.copy()
    score[a_i] += 1.0
    return score


def _agent_log_ratio(pi: JointPolicy, rho: JointPolicy, state: int, agent: int) -> np.ndarray:
    return (np.log(agent_probs(pi.agents[agent], state))
            - np.log(agent_probs(rho.agents[agent], state)))


def counterfactual_baseline(state: int, joint_action: int, critic: CriticLike, pi: JointPolicy,
                            rho: JointPolicy, omega: float, agent: int) -> float:
    """
    b(s,a_{-i}) = E_{a_i~π_i}[Q(s,a) - ω·log(π(a|s)/ρ(a|s)) - ω]

    其他智能体的动作取自 joint_action 并保持不变，对智能体 i 的动作精确求期望。
    """
    space = action_space(tuple(pi.dims))
    variants = space.agent_variants(joint_action, agent)
    q_row = _critic_table(critic)[state, variants]
    pi_i = agent_probs(pi.agents[agent], state)
    per_agent = space.decode(joint_action)
    others = sum(_agent_log_ratio(pi, rho, state, j)[a_j]
                 for j, a_j in enumerate(per_agent) if j != agent)
    own = _agent_log_ratio(pi, rho, state, agent)
    return float(np.sum(pi_i * (q_row - omega * (own + others) - omega)))


def actor_gradient(state: int, joint_action: int, critic: CriticLike, pi: JointPolicy,
                   rho: JointPolicy, omega: float, agent: int) -> np.ndarray:
    """
    单样本 actor 梯度，形状同 θ_i

    ∇θ_i log π_i(a_i|s)·(Q(s,a) - ω·log(π(a|s)/ρ(a|s)) - ω - b(s,a_{-i}))，
    减去基线后其他智能体的 log 比值相互抵消，只剩 agent 自己的 log 比值。
    """
    space = action_space(tuple(pi.dims))
    per_agent = space.decode(joint_action)
    a_i = per_agent[agent]
    joint_log_ratio = sum(_agent_log_ratio(pi, rho, state, j)[a_j]
                          for j, a_j in enumerate(per_agent))
    q_sa = _critic_table(critic)[state, joint_action]
    baseline = counterfactual_baseline(state, joint_action, critic, pi, rho, omega, agent)
    coef = q_sa - omega * joint_log_ratio - omega - baseline

    grad = np.zeros_like(pi.agents[agent].logits)
    grad[state] = _score_row(agent_probs(pi.agents[agent], state), a_i) * coef
    return grad


def actor_gradient_lvd(state: int, agent_action: int, critic: DecomposedCritic, pi: JointPolicy,
                       rho: JointPolicy, omega: float, agent: int) -> np.ndarray:
    """
    线性值分解下的 actor 梯度

    ∇θ_i log π_i(a_i|s)·(k_i(s)·A_i(s,a_i) - ω·log(π_i/ρ_i) + ω·D_KL(π_i‖ρ_i))，
    A_i(s,a_i) = Q_i(s,a_i) - E_{ã_i~π_i}[Q_i(s,ã_i)]。
    """
    pi_i = agent_probs(pi.agents[agent], state)
    rho_i = agent_probs(rho.agents[agent], state)
    q_i = critic.q_agents[agent][state]
    advantage = q_i[agent_action] - float(pi_i @ q_i)
    log_ratio = np.log(pi_i) - np.log(rho_i)
    kl = float(pi_i @ log_ratio)
    coef = critic.k[agent, state] * advantage - omega * log_ratio[agent_action] + omega * kl

    grad = np.zeros_like(pi.agents[agent].logits)
    grad[state] = _score_row(pi_i, agent_action) * coef
    return grad


def cover_rate(visited: Union[Set[Tuple[int, int]], np.ndarray], game: MarkovGame) -> float:
    """已探索的 (state, joint_action) 对占全部对的比例"""
    total = game.n_states * game.n_joint_actions
    if isinstance(visited, np.ndarray):
        return float(np.count_nonzero(visited)) / total
    return len(visited) / total


class DmacTrainer:
    """单次 DMAC 训练过程（交互、回放、actor / 目标策略 / 评论家更新、评估）"""

    def __init__(self, game: MarkovGame, cfg: TrainerConfig, mode: str = "dmac"):
        self.game = game
        self.cfg = cfg
        self.mode = mode
        train_seq, eval_seq = np.random.SeedSequence(cfg.seed).spawn(2)
        self.rng = np.random.default_rng(train_seq)
        self.eval_rng = np.random.default_rng(eval_seq)

        dims = game.n_actions_per_agent
        self.space = action_space(tuple(dims))
        self.pi = JointPolicy.uniform(game.n_states, dims)
        self.rho = JointPolicy.uniform(game.n_states, dims)
        if cfg.critic_kind is CriticKind.LVD:
            self.critic: Critic = DecomposedCritic(game.n_states, dims)
        else:
            self.critic = JointCritic(game.n_states, game.n_joint_actions)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, self.rng)
        self.visited = np.zeros((game.n_states, game.n_joint_actions), dtype=bool)
        self.metrics = RunMetrics(omega=cfg.omega, seed=cfg.seed, mode=mode, config=cfg.to_dict())

    def run_episode(self):
        """按 π 交互一个回合，经验存入回放池"""
        s = sample_initial_state(self.game, self.rng)
        for _ in range(self.game.horizon):
            a = sample_joint(self.pi, s, self.rng)
            s_next, r = step(self.game, s, a, self.rng)
            self.buffer.add(Transition(s, a, r, s_next))
            self.visited[s, a] = True
            s = s_next

    def update(self):
        """一轮更新：actor → 目标策略 → 评论家 → 目标评论家"""
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size)

        grads = []
        for i in range(self.game.n_agents):
            grad = np.zeros_like(self.pi.agents[i].logits)
            for t in batch:
                if isinstance(self.critic, DecomposedCritic):
                    a_i = self.space.decode(t.joint_action)[i]
                    grad += actor_gradient_lvd(t.state, a_i, self.critic, self.pi, self.rho,
                                               cfg.omega, i)
                else:
                    grad += actor_gradient(t.state, t.joint_action, self.critic, self.pi,
                                           self.rho, cfg.omega, i)
            grads.append(grad / len(batch))
        for agent, grad in zip(self.pi.agents, grads):
            agent.logits += cfg.actor_lr * grad

        if cfg.regularizer is Regularizer.DIVERGENCE:
            self.rho = soft_update_params(self.rho, self.pi, cfg.tau)

        critic_update(self.critic, batch, self.pi, self.rho, cfg, self.game.gamma, self.rng)
        self.critic.soft_update(cfg.tau)

    def evaluate(self, episode: int) -> MetricPoint:
        """用随机策略 π 跑 eval_episodes 个回合（不计入覆盖率），并计算精确回报"""
        totals = []
        for _ in range(self.cfg.eval_episodes):
            s = sample_initial_state(self.game, self.eval_rng)
            total = 0.0
            for _ in range(self.game.horizon):
                a = sample_joint(self.pi, s, self.eval_rng)
                s, r = step(self.game, s, a, self.eval_rng)
                total += r
            totals.append(total)
        return MetricPoint(
            step=episode * self.game.horizon,
            episode=episode,
            mean_episode_reward=float(np.mean(totals)),
            exact_return=exact_return(self.game, self.pi),
            cover_rate=cover_rate(self.visited, self.game),
        )

    def train(self) -> RunMetrics:
        cfg = self.cfg
        logger.info(f"🚀 开始训练 mode={self.mode} ω={cfg.omega} seed={cfg.seed}, "
                    f"{cfg.episodes} 个回合")
        for episode in range(1, cfg.episodes + 1):
            self.run_episode()
            self.update()
            if episode % cfg.eval_every == 0 or episode == cfg.episodes:
                point = self.evaluate(episode)
                self.metrics.append(point)
                logger.debug(f"📊 episode={episode} reward={point.mean_episode_reward:.4f} "
                             f"J={point.exact_return:.4f} cover={point.cover_rate:.4f}")
        logger.info(f"✅ 训练完成 mode={self.mode} ω={cfg.omega} seed={cfg.seed}: "
                    f"J={self.metrics.final_exact_return:.4f}, "
                    f"cover={self.metrics.final_cover_rate:.4f}")
        return self.metrics


def train(game: MarkovGame, cfg: TrainerConfig, mode: str = "dmac") -> RunMetrics:
    """按配置完整训练一次，返回指标日志"""
    if not isinstance(cfg, TrainerConfig):
        raise InvalidArgumentError("cfg must be a TrainerConfig")
    return DmacTrainer(game, cfg, mode).train()


def train_policy(game: MarkovGame, cfg: TrainerConfig, mode: str = "dmac"
                 ) -> Tuple[RunMetrics, JointPolicy]:
    """训练并同时返回最终策略（供与精确解对比）"""
    trainer = DmacTrainer(game, cfg, mode)
    return trainer.train(), trainer.pi
