"""
数据模型定义
"""
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple
import hashlib
import json

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import GameValidationError, InvalidArgumentError

VERSION = "dmac-desk 1.0.0"

PROB_ATOL = 1e-12
TAIL_FRACTION = 0.1                 # 终值取最后 10% 的评估点


class TargetMode(Enum):
    """镜像迭代中目标策略的更新方式"""
    HARD_REPLACE = "hard_replace"        # ρ^k = π^{k-1}
    MOVING_AVERAGE = "moving_average"    # ρ^k = (1-τ)ρ^{k-1} + τπ^{k-1}


class CriticKind(Enum):
    """评论家结构"""
    JOINT = "joint"
    LVD = "lvd"


class NextActionMode(Enum):
    """评论家目标中 a' 的取法"""
    SAMPLED = "sampled"
    EXPECTED = "expected"


class Regularizer(Enum):
    """正则化方式"""
    DIVERGENCE = "divergence"   # ρ 随 π 软更新
    ENTROPY = "entropy"         # ρ 冻结为均匀分布


class RunMode(Enum):
    """扫描实验中的对比组"""
    DMAC = "dmac"
    OMEGA_ZERO = "omega_zero"
    ENTROPY = "entropy"


class RunStatus(Enum):
    """扫描单元状态"""
    PENDING = "pending"      # 等待中
    RUNNING = "running"      # 执行中
    COMPLETED = "completed"  # 已完成
    FAILED = "failed"        # 失败


class JointActionSpace:
    """联合动作的混合进制编码，agent 0 为最高位（与 numpy C 顺序一致）"""

    def __init__(self, n_actions_per_agent: Sequence[int]):
        self.dims = tuple(int(a) for a in n_actions_per_agent)
        if not self.dims or min(self.dims) < 1:
            raise InvalidArgumentError(f"action counts must be >= 1, got {self.dims}")
        self.n_joint = int(np.prod(self.dims))
        self._table = np.array(np.unravel_index(np.arange(self.n_joint), self.dims)).T

    @property
    def n_agents(self) -> int:
        return len(self.dims)

    def encode(self, per_agent: Sequence[int]) -> int:
        if len(per_agent) != self.n_agents:
            raise InvalidArgumentError(f"expected {self.n_agents} agent actions, got {len(per_agent)}")
        for i, (a, d) in enumerate(zip(per_agent, self.dims)):
            if not 0 <= int(a) < d:
                raise InvalidArgumentError(f"agent {i} action {a} out of range [0, {d})")
        return int(np.ravel_multi_index(tuple(int(a) for a in per_agent), self.dims))

    def decode(self, flat: int) -> Tuple[int, ...]:
        self.check(flat)
        return tuple(int(a) for a in self._table[int(flat)])

    def per_agent_table(self) -> np.ndarray:
        """[n_joint, n_agents] 每个联合动作对应的各智能体动作"""
        return self._table

    def agent_variants(self, flat: int, agent: int) -> np.ndarray:
        """固定其他智能体动作、遍历 agent 的全部动作得到的联合动作索引"""
        per_agent = list(self.decode(flat))
        variants = []
        for a_i in range(self.dims[agent]):
            per_agent[agent] = a_i
            variants.append(np.ravel_multi_index(tuple(per_agent), self.dims))
        return np.asarray(variants, dtype=np.int64)

    def check(self, flat: int):
        if not 0 <= int(flat) < self.n_joint:
            raise InvalidArgumentError(f"joint action {flat} out of range [0, {self.n_joint})")


@dataclass(eq=False)
class MarkovGame:
    """有限合作随机博弈（共享奖励、完全可观测）"""
    n_states: int
    n_agents: int
    n_actions_per_agent: List[int]
    transition: np.ndarray          # [state][joint_action][next_state]
    reward: np.ndarray              # [state][joint_action]
    gamma: float
    horizon: int
    initial_state_dist: np.ndarray  # [state]

    def __post_init__(self):
        self.n_actions_per_agent = [int(a) for a in self.n_actions_per_agent]
        self.transition = np.array(self.transition, dtype=np.float64)
        self.reward = np.array(self.reward, dtype=np.float64)
        self.initial_state_dist = np.array(self.initial_state_dist, dtype=np.float64)
        self.validate()
        for arr in (self.transition, self.reward, self.initial_state_dist):
            arr.setflags(write=False)

    @property
    def action_space(self) -> JointActionSpace:
        return JointActionSpace(self.n_actions_per_agent)

    @property
    def n_joint_actions(self) -> int:
        return int(np.prod(self.n_actions_per_agent))

    def validate(self):
        """检查全部不变量，违反时抛出 GameValidationError"""
        if self.n_states < 1 or self.n_agents < 1 or self.horizon < 1:
            raise GameValidationError("n_states, n_agents and horizon must be >= 1")
        if len(self.n_actions_per_agent) != self.n_agents:
            raise GameValidationError("n_actions_per_agent length differs from n_agents")
        if min(self.n_actions_per_agent) < 1:
            raise GameValidationError("every agent needs at least one action")
        if not 0.0 <= self.gamma < 1.0:
            raise GameValidationError(f"gamma must lie in [0, 1), got {self.gamma}")
        n_joint = self.n_joint_actions
        if self.transition.shape != (self.n_states, n_joint, self.n_states):
            raise GameValidationError(f"transition shape {self.transition.shape} != "
                                      f"{(self.n_states, n_joint, self.n_states)}")
        if self.reward.shape != (self.n_states, n_joint):
            raise GameValidationError(f"reward shape {self.reward.shape} != {(self.n_states, n_joint)}")
        if self.initial_state_dist.shape != (self.n_states,):
            raise GameValidationError("initial_state_dist must have one entry per state")
        if not np.all(np.isfinite(self.reward)):
            raise GameValidationError("reward entries must be finite")
        if not np.all(np.isfinite(self.transition)):
            raise GameValidationError("transition entries must be finite")
        if not np.all(np.isfinite(self.initial_state_dist)):
            raise GameValidationError("initial_state_dist entries must be finite")
        if np.any(self.transition < 0.0) or np.any(self.transition > 1.0):
            raise GameValidationError("transition entries must lie in [0, 1]")
        row_sums = self.transition.sum(axis=2)
        bad = np.argwhere(np.abs(row_sums - 1.0) > PROB_ATOL)
        if bad.size:
            s, a = bad[0]
            raise GameValidationError(f"transition row (state={s}, joint_action={a}) "
                                      f"sums to {row_sums[s, a]!r}")
        if np.any(self.initial_state_dist < 0.0) or \
                abs(self.initial_state_dist.sum() - 1.0) > PROB_ATOL:
            raise GameValidationError("initial_state_dist must be a probability vector")

    def summary(self) -> str:
        return (f"{self.n_states} states, {self.n_agents} agents, actions {self.n_actions_per_agent}, "
                f"{self.n_joint_actions} joint actions, gamma={self.gamma}, horizon={self.horizon}")

    def to_dict(self) -> dict:
        """转换为字典（数组展开为嵌套列表）"""
        return {
            "n_states": self.n_states,
            "n_agents": self.n_agents,
            "n_actions_per_agent": list(self.n_actions_per_agent),
            "gamma": float(self.gamma),
            "horizon": self.horizon,
            "initial_state_dist": self.initial_state_dist.tolist(),
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MarkovGame":
        """从字典创建对象"""
        return cls(**data)


@dataclass
class Transition:
    """一步交互 (s, a, r, s')"""
    state: int
    joint_action: int
    reward: float
    next_state: int


@dataclass(eq=False)
class QTable:
    """联合 Q 表 [state][joint_action]，residuals 记录迭代残差"""
    values: np.ndarray
    residuals: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residuals)


@dataclass(eq=False)
class VTable:
    """状态值 [state]"""
    values: np.ndarray
    residuals: List[float] = field(default_factory=list)


@dataclass(eq=False)
class OccupancyTable:
    """折扣状态分布 d^π 与状态-动作占用 μ_π"""
    state_occupancy: np.ndarray   # [state]
    state_action: np.ndarray      # [state][joint_action]


@dataclass
class MetricPoint:
    """一次评估的指标"""
    step: int
    episode: int
    mean_episode_reward: float
    exact_return: float
    cover_rate: float


@dataclass
class RunMetrics:
    """单次训练的完整日志"""
    omega: float
    seed: int
    mode: str
    config: Dict[str, Any]
    points: List[MetricPoint] = field(default_factory=list)
    version: str = VERSION

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def append(self, point: MetricPoint):
        if self.points and point.step <= self.points[-1].step:
            raise InvalidArgumentError("metric steps must be strictly increasing")
        self.points.append(point)

    def tail(self, fraction: float = TAIL_FRACTION) -> List[MetricPoint]:
        """最后 10% 的评估点（至少一个）"""
        if not self.points:
            return []
        n = max(1, int(np.ceil(len(self.points) * fraction)))
        return self.points[-n:]

    @property
    def final_reward(self) -> float:
        tail = self.tail()
        return float(np.mean([p.mean_episode_reward for p in tail])) if tail else float("nan")

    @property
    def final_exact_return(self) -> float:
        tail = self.tail()
        return float(np.mean([p.exact_return for p in tail])) if tail else float("nan")

    @property
    def final_cover_rate(self) -> float:
        tail = self.tail()
        return float(np.mean([p.cover_rate for p in tail])) if tail else float("nan")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["config_hash"] = self.config_hash
        return data


def config_hash(config: Dict[str, Any]) -> str:
    """配置的稳定哈希（键排序后的 JSON）"""
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class _FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)

    def to_dict(self) -> dict:
        """转换为可 JSON 序列化的字典"""
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: dict):
        """从字典创建对象"""
        return cls.model_validate(data)

    def with_overrides(self, **overrides):
        """返回覆盖部分字段后的新配置（重新校验）"""
        data = self.model_dump()
        data.update(overrides)
        return type(self).model_validate(data)


class SolverConfig(_FrozenModel):
    """精确求解器配置"""
    omega: float = Field(0.2, ge=0.0)               # 正则系数 ω
    tol: float = Field(1e-10, gt=0.0)               # 策略评估的 sup-norm 收敛阈值
    vi_tol: float = Field(1e-8, gt=0.0)             # 值迭代的收敛阈值
    max_iters: int = Field(1_000_000, ge=1)
    tie_tol: float = Field(1e-6, gt=0.0)            # U_s 判定容差（相对每个状态的最大值）
    mirror_tv_tol: float = Field(1e-9, gt=0.0)      # 镜像迭代的策略变化阈值
    mirror_patience: int = Field(3, ge=1)           # 连续满足阈值的次数


class TrainerConfig(_FrozenModel):
    """训练器超参数"""
    omega: float = Field(0.2, ge=0.0)               # ω
    tau: float = Field(0.01, gt=0.0, le=1.0)        # 目标策略 / 目标评论家软更新 τ
    critic_lr: float = Field(1e-3, gt=0.0)          # α
    actor_lr: float = Field(1e-4, gt=0.0)           # β
    batch_size: int = Field(64, ge=1)
    buffer_capacity: int = Field(100_000, ge=1)
    episodes: int = Field(2000, ge=1)
    eval_every: int = Field(20, ge=1)
    eval_episodes: int = Field(10, ge=1)
    seed: int = Field(0, ge=0)
    critic_kind: CriticKind = CriticKind.JOINT
    next_action_mode: NextActionMode = NextActionMode.EXPECTED
    regularizer: Regularizer = Regularizer.DIVERGENCE

    @model_validator(mode="after")
    def _batch_fits_buffer(self):
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")
        return self


class GameSpec(_FrozenModel):
    """随机博弈的生成参数"""
    seed: int = Field(7, ge=0)
    n_states: int = Field(30, ge=1)
    n_agents: int = Field(3, ge=1)
    n_actions: int = Field(5, ge=1)
    horizon: int = Field(30, ge=1)
    gamma: float = Field(0.99, ge=0.0, lt=1.0)


DEFAULT_OMEGAS = (0.001, 0.01, 0.1, 0.2, 1.0, 10.0, 100.0)


class SweepSpec(_FrozenModel):
    """ω 扫描实验描述"""
    game_path: Optional[str] = None
    game: GameSpec = GameSpec()
    omegas: Tuple[float, ...] = DEFAULT_OMEGAS
    modes: Tuple[RunMode, ...] = (RunMode.DMAC,)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    trainer: TrainerConfig = TrainerConfig()

    @field_validator("omegas")
    @classmethod
    def _check_omegas(cls, value):
        if not value:
            raise ValueError("omega list must be nonempty")
        if any(w < 0 for w in value):
            raise ValueError("omegas must be >= 0")
        return value

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, value):
        if not value:
            raise ValueError("seed list must be nonempty")
        return value

    @field_validator("modes")
    @classmethod
    def _check_modes(cls, value):
        if not value:
            raise ValueError("mode list must be nonempty")
        return value


@dataclass
class SweepCell:
    """扫描中的一个 (mode, ω, seed) 单元"""
    mode: RunMode
    omega: float
    seed: int
    status: RunStatus = RunStatus.PENDING
    result_message: str = ""

    @property
    def cell_name(self) -> str:
        return f"{self.mode.value}_omega{self.omega:g}"

    @property
    def key(self) -> Tuple[str, float, int]:
        return (self.mode.value, self.omega, self.seed)

    def mark_running(self):
        """标记为执行中"""
        self.status = RunStatus.RUNNING

    def mark_completed(self, message: str = "完成"):
        """标记为完成"""
        self.status = RunStatus.COMPLETED
        self.result_message = message

    def mark_failed(self, message: str):
        """标记为失败"""
        self.status = RunStatus.FAILED
        self.result_message = message
