"""
表格 softmax 策略：单智能体策略、联合乘积策略、KL 与目标策略更新
"""
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import List, Sequence, Union

import numpy as np
from scipy.special import rel_entr, softmax

from .errors import InvalidArgumentError
from .models import JointActionSpace

PolicyLike = Union["JointPolicy", np.ndarray]


@dataclass(eq=False)
class AgentPolicy:
    """单个智能体的 logits θ_i，形状 [state][agent_action]"""
    logits: np.ndarray
    agent_id: int = 0

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise InvalidArgumentError("logits must be a [state][action] matrix")
        if not np.all(np.isfinite(self.logits)):
            raise InvalidArgumentError(f"agent {self.agent_id} logits must be finite")

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def probs_table(self) -> np.ndarray:
        """所有状态的动作分布 [state][action]"""
        return softmax(self.logits, axis=1)

    def copy(self) -> "AgentPolicy":
        return AgentPolicy(self.logits.copy(), self.agent_id)


@dataclass(eq=False)
class JointPolicy:
    """各智能体策略的乘积；同一类型既表示 π 也表示目标策略 ρ"""
    agents: List[AgentPolicy]

    def __post_init__(self):
        if not self.agents:
            raise InvalidArgumentError("a joint policy needs at least one agent")
        n_states = {a.n_states for a in self.agents}
        if len(n_states) != 1:
            raise InvalidArgumentError("all agents must share the same state count")

    @classmethod
    def uniform(cls, n_states: int, n_actions_per_agent: Sequence[int]) -> "JointPolicy":
        return cls([AgentPolicy(np.zeros((n_states, a)), i)
                    for i, a in enumerate(n_actions_per_agent)])

    @classmethod
    def from_logits(cls, logits: Sequence[np.ndarray]) -> "JointPolicy":
        return cls([AgentPolicy(l, i) for i, l in enumerate(logits)])

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_states(self) -> int:
        return self.agents[0].n_states

    @property
    def dims(self) -> List[int]:
        return [a.n_actions for a in self.agents]

    def agent_tables(self) -> List[np.ndarray]:
        return [a.probs_table() for a in self.agents]

    def joint_table(self) -> np.ndarray:
        """联合动作分布 [state][joint_action]，按 C 顺序展开各智能体动作"""
        return _outer_product(self.agent_tables(), np.multiply)

    def copy(self) -> "JointPolicy":
        return JointPolicy([a.copy() for a in self.agents])


def _outer_product(tables: Sequence[np.ndarray], op) -> np.ndarray:
    n_states = tables[0].shape[0]

    def combine(left, right):
        return op(left[:, :, None], right[:, None, :]).reshape(n_states, -1)

    return reduce(combine, tables)


@lru_cache(maxsize=32)
def action_space(dims: tuple) -> JointActionSpace:
    """按动作维度缓存的联合动作编码器"""
    return JointActionSpace(dims)


def _check_state(policy_states: int, state: int):
    if not 0 <= int(state) < policy_states:
        raise InvalidArgumentError(f"state {state} out of range [0, {policy_states})")


def agent_probs(policy: AgentPolicy, state: int) -> np.ndarray:
    """softmax(θ_i[s])，softmax 内部先减最大值"""
    _check_state(policy.n_states, state)
    return softmax(policy.logits[state])


def joint_prob(policy: JointPolicy, state: int, joint_action: Union[int, Sequence[int]]) -> float:
    """Π_i π_i(a_i|s)；joint_action 可以是扁平索引或各智能体动作"""
    _check_state(policy.n_states, state)
    space = action_space(tuple(policy.dims))
    if isinstance(joint_action, (int, np.integer)):
        per_agent_actions = space.decode(int(joint_action))
    else:
        per_agent_actions = tuple(joint_action)
        space.encode(per_agent_actions)
    prob = 1.0
    for agent, a_i in zip(policy.agents, per_agent_actions):
        prob *= float(agent_probs(agent, state)[a_i])
    return prob


def sample_joint(policy: JointPolicy, state: int, rng: np.random.Generator) -> int:
    """各智能体独立地按类别分布采样，返回扁平联合动作索引"""
    _check_state(policy.n_states, state)
    per_agent = [int(rng.choice(agent.n_actions, p=agent_probs(agent, state)))
                 for agent in policy.agents]
    return action_space(tuple(policy.dims)).encode(per_agent)


def agent_kl(pi_i: AgentPolicy, rho_i: AgentPolicy, state: int) -> float:
    """D_KL(π_i(·|s) ‖ ρ_i(·|s))"""
    return float(np.sum(rel_entr(agent_probs(pi_i, state), agent_probs(rho_i, state))))


def joint_kl(pi: JointPolicy, rho: JointPolicy, state: int) -> float:
    """乘积策略的 KL 等于各智能体 KL 之和"""
    if pi.dims != rho.dims:
        raise InvalidArgumentError("policy shapes differ")
    return float(sum(agent_kl(p, r, state) for p, r in zip(pi.agents, rho.agents)))


def table_kl(pi_table: np.ndarray, rho_table: np.ndarray) -> np.ndarray:
    """逐状态 KL，输入为 [state][action] 概率表；0·log0 记为 0"""
    return np.sum(rel_entr(pi_table, rho_table), axis=-1)


def soft_update_params(target: JointPolicy, online: JointPolicy, tau: float) -> JointPolicy:
    """θ̃_i ← (1-τ)θ̃_i + τθ_i，返回新的目标策略"""
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgumentError(f"tau must lie in [0, 1], got {tau}")
    if target.dims != online.dims or target.n_states != online.n_states:
        raise InvalidArgumentError("target and online policies have different shapes")
    return JointPolicy([
        AgentPolicy((1.0 - tau) * t.logits + tau * o.logits, t.agent_id)
        for t, o in zip(target.agents, online.agents)
    ])


ProbabilityTables = Union[List[np.ndarray], np.ndarray]


def _as_distributions(policy) -> ProbabilityTables:
    if isinstance(policy, JointPolicy):
        return policy.agent_tables()
    if isinstance(policy, np.ndarray):
        return policy
    return [np.asarray(t, dtype=np.float64) for t in policy]


def mix_probability(rho_prev, pi_prev, tau: float) -> ProbabilityTables:
    """
    概率空间的滑动平均 ρ^t = (1-τ)ρ^{t-1} + τπ^{t-1}

    输入可以是 JointPolicy（按智能体逐表混合）、概率表列表，或联合概率表 ndarray。
    混合结果不是 logits，所以以显式概率表返回。
    """
    if not 0.0 < tau <= 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1], got {tau}")
    rho_tables = _as_distributions(rho_prev)
    pi_tables = _as_distributions(pi_prev)
    if isinstance(rho_tables, np.ndarray) or isinstance(pi_tables, np.ndarray):
        rho_arr, pi_arr = np.asarray(rho_tables), np.asarray(pi_tables)
        if rho_arr.shape != pi_arr.shape:
            raise InvalidArgumentError("distribution shapes differ")
        return (1.0 - tau) * rho_arr + tau * pi_arr
    if len(rho_tables) != len(pi_tables):
        raise InvalidArgumentError("agent counts differ")
    mixed = []
    for r, p in zip(rho_tables, pi_tables):
        if r.shape != p.shape:
            raise InvalidArgumentError("distribution shapes differ")
        mixed.append((1.0 - tau) * r + tau * p)
    return mixed


def as_table(policy: PolicyLike) -> np.ndarray:
    """JointPolicy 或 [state][joint_action] 概率表统一为概率表"""
    if isinstance(policy, JointPolicy):
        return policy.joint_table()
    table = np.asarray(policy, dtype=np.float64)
    if table.ndim != 2:
        raise InvalidArgumentError("a policy table must be [state][joint_action]")
    return table


def tables_to_joint(agent_tables: Sequence[np.ndarray]) -> np.ndarray:
    """按智能体的概率表合成联合概率表"""
    return _outer_product([np.asarray(t, dtype=np.float64) for t in agent_tables], np.multiply)


def uniform_table(n_states: int, n_joint: int) -> np.ndarray:
    return np.full((n_states, n_joint), 1.0 / n_joint)


def joint_log_ratio_table(pi: PolicyLike, rho: PolicyLike) -> np.ndarray:
    """log(π(a|s)/ρ(a|s))，形状 [state][joint_action]；π(a|s)=0 处为 -inf"""
    pi_table, rho_table = as_table(pi), as_table(rho)
    if pi_table.shape != rho_table.shape:
        raise InvalidArgumentError("policy shapes differ")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(pi_table) - np.log(rho_table)
