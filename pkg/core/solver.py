"""
精确动态规划层

散度正则 MDP 的策略评估 / 改进 / 迭代、正则最优解的闭式形式、两种目标策略更新方式下的
镜像迭代、占用测度与 Bregman 散度、标准值迭代，以及最优性间隙上界的检查。
所有策略在这里都以 [state][joint_action] 概率表参与计算（正则最优策略一般不是乘积形式）。
"""
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.special import logsumexp, softmax

from .errors import InvalidArgumentError, NonConvergenceError, SolverInternalError
from .models import MarkovGame, OccupancyTable, QTable, SolverConfig, TargetMode, VTable
from .policy import JointPolicy, PolicyLike, as_table, mix_probability, table_kl

QLike = Union[QTable, np.ndarray]


def _q_values(q: QLike) -> np.ndarray:
    return q.values if isinstance(q, QTable) else np.asarray(q, dtype=np.float64)


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


def _check_policy(game: MarkovGame, table: np.ndarray, name: str):
    if table.shape != (game.n_states, game.n_joint_actions):
        raise InvalidArgumentError(f"{name} has shape {table.shape}, expected "
                                   f"{(game.n_states, game.n_joint_actions)}")


def _policy_kernel(game: MarkovGame, pi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """策略诱导的状态转移矩阵 P_π 与期望奖励 r_π"""
    p_pi = np.einsum("sa,sat->st", pi, game.transition)
    r_pi = np.sum(pi * game.reward, axis=1)
    return p_pi, r_pi


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as e:
        raise SolverInternalError(f"linear solve failed: {e}") from e


def _penalty(omega: float, pi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """ω·KL(π‖ρ) 逐状态；ω = 0 时恒为 0（不计算 log 比值）"""
    if omega == 0.0:
        return np.zeros(pi.shape[0])
    return omega * table_kl(pi, rho)


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """逐状态全变差距离 ½Σ|p-q|"""
    return 0.5 * np.sum(np.abs(np.asarray(p) - np.asarray(q)), axis=-1)


# ---------------------------------------------------------------------------
# 策略评估
# ---------------------------------------------------------------------------

def evaluate_policy(game: MarkovGame, pi: PolicyLike) -> Tuple[np.ndarray, np.ndarray]:
    """原始（无正则）MDP 中的精确策略评估，直接线性求解，返回 (V^π, Q^π)"""
    table = as_table(pi)
    _check_policy(game, table, "pi")
    p_pi, r_pi = _policy_kernel(game, table)
    v = _solve(np.eye(game.n_states) - game.gamma * p_pi, r_pi)
    q = game.reward + game.gamma * (game.transition @ v)
    return v, q


def regularized_evaluation(game: MarkovGame, pi: PolicyLike, rho: PolicyLike,
                           omega: float) -> Tuple[np.ndarray, np.ndarray]:
    """散度正则 MDP 中的精确策略评估，返回 (V^π_ρ, Q^π_ρ)"""
    pi_t, rho_t = as_table(pi), as_table(rho)
    _check_policy(game, pi_t, "pi")
    _check_policy(game, rho_t, "rho")
    p_pi, r_pi = _policy_kernel(game, pi_t)
    v = _solve(np.eye(game.n_states) - game.gamma * p_pi, r_pi - _penalty(omega, pi_t, rho_t))
    q = game.reward + game.gamma * (game.transition @ v)
    return v, q


def divergence_policy_evaluation(game: MarkovGame, pi: PolicyLike, rho: PolicyLike,
                                 cfg: SolverConfig, q0: Optional[np.ndarray] = None) -> QTable:
    """
    迭代 Γ^π_ρ 直到 sup-norm 残差 ≤ cfg.tol

    Q(s,a) = r(s,a) + γ·E_{s'} E_{a'~π}[Q(s',a') - ω·log(π(a'|s')/ρ(a'|s'))]
    ω = 0 时退化为标准策略评估。
    """
    pi_t, rho_t = as_table(pi), as_table(rho)
    _check_policy(game, pi_t, "pi")
    _check_policy(game, rho_t, "rho")
    penalty = _penalty(cfg.omega, pi_t, rho_t)
    q = np.zeros_like(game.reward) if q0 is None else np.array(q0, dtype=np.float64)
    residuals: List[float] = []
    for _ in range(cfg.max_iters):
        v = np.sum(pi_t * q, axis=1) - penalty
        q_next = game.reward + game.gamma * (game.transition @ v)
        residual = float(np.max(np.abs(q_next - q)))
        residuals.append(residual)
        q = q_next
        if residual <= cfg.tol:
            return QTable(q, residuals)
    raise NonConvergenceError("divergence policy evaluation did not converge",
                              residuals[-1], len(residuals))


def v_from_q(q: QLike, pi: PolicyLike, rho: PolicyLike, omega: float) -> VTable:
    """V(s) = E_{a~π}[Q(s,a)] - ω·D_KL(π(·|s)‖ρ(·|s))"""
    values = _q_values(q)
    pi_t, rho_t = as_table(pi), as_table(rho)
    return VTable(np.sum(pi_t * values, axis=1) - _penalty(omega, pi_t, rho_t))


def exact_return(game: MarkovGame, pi: PolicyLike) -> float:
    """J(π) = Σ_s d0(s)·V^π(s)"""
    v, _ = evaluate_policy(game, pi)
    return float(game.initial_state_dist @ v)


def regularized_return(game: MarkovGame, pi: PolicyLike, rho: PolicyLike, omega: float) -> float:
    """J_ρ(π) = Σ_s d0(s)·V^π_ρ(s)"""
    v, _ = regularized_evaluation(game, pi, rho, omega)
    return float(game.initial_state_dist @ v)


def occupancy(game: MarkovGame, pi: PolicyLike) -> OccupancyTable:
    """求解 d = d0 + γ·P_π^T d，μ_π(s,a) = d^π(s)·π(a|s)"""
    table = as_table(pi)
    _check_policy(game, table, "pi")
    p_pi, _ = _policy_kernel(game, table)
    d = _solve((np.eye(game.n_states) - game.gamma * p_pi).T, game.initial_state_dist)
    return OccupancyTable(state_occupancy=d, state_action=d[:, None] * table)


def bregman_divergence(mu_pi: OccupancyTable, pi: PolicyLike, rho: PolicyLike) -> float:
    """D_C = Σ_{s,a} μ_π(s,a)·log(π(a|s)/ρ(a|s)) = Σ_s d^π(s)·KL(s)"""
    return float(mu_pi.state_occupancy @ table_kl(as_table(pi), as_table(rho)))


# ---------------------------------------------------------------------------
# 正则最优解
# ---------------------------------------------------------------------------

def _require_positive_omega(omega: float):
    if not omega > 0.0:
        raise InvalidArgumentError(f"omega must be > 0, got {omega}")


def soft_bellman_backup(game: MarkovGame, v: np.ndarray, rho: PolicyLike,
                        omega: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Γ_ω 作用一次：V'(s) = ω·log Σ_a ρ(a|s)·exp((r + γE[V(s')])/ω)

    log-sum-exp 先减最大值，ω 很小时也不会溢出；ρ 中的 0 概率项直接丢弃。
    返回 (V', Q)。
    """
    _require_positive_omega(omega)
    rho_t = as_table(rho)
    q = game.reward + game.gamma * (game.transition @ np.asarray(v, dtype=np.float64))
    v_next = omega * logsumexp(q / omega, b=rho_t, axis=1)
    return v_next, q


def divergence_policy_improvement(q: QLike, rho: PolicyLike, omega: float) -> np.ndarray:
    """π_new(·|s) ∝ ρ(·|s)·exp(Q(s,·)/ω)，即 KL 投影的精确解"""
    _require_positive_omega(omega)
    values = _q_values(q)
    return softmax(values / omega + _log(as_table(rho)), axis=1)


def solve_optimal_regularized(game: MarkovGame, rho: PolicyLike, cfg: SolverConfig,
                              v0: Optional[np.ndarray] = None
                              ) -> Tuple[QTable, VTable, np.ndarray]:
    """
    软值迭代求 (Q*_ρ, V*_ρ, π*_ρ)

    收敛后 Q*_ρ = r + γE[V*_ρ(s')]，π*_ρ = ρ·exp(Q*_ρ/ω)/Z，V*_ρ = ω·log Z。
    返回的 V 由最终 Q 重新算出，保证 Q - ω·log(π/ρ) ≡ V 在每个动作上成立。
    """
    _require_positive_omega(cfg.omega)
    rho_t = as_table(rho)
    _check_policy(game, rho_t, "rho")
    v = np.zeros(game.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    residuals: List[float] = []
    for _ in range(cfg.max_iters):
        v_next, _ = soft_bellman_backup(game, v, rho_t, cfg.omega)
        residual = float(np.max(np.abs(v_next - v)))
        residuals.append(residual)
        v = v_next
        if residual <= cfg.vi_tol:
            break
    else:
        raise NonConvergenceError("soft value iteration did not converge",
                                  residuals[-1], len(residuals))

    q = game.reward + game.gamma * (game.transition @ v)
    log_w = q / cfg.omega + _log(rho_t)
    log_z = logsumexp(log_w, axis=1)
    pi = np.exp(log_w - log_z[:, None])
    return QTable(q, residuals), VTable(cfg.omega * log_z, residuals), pi


def lvd_policy_improvement(q_agents: Sequence[np.ndarray], k: np.ndarray, b: np.ndarray,
                           rho: Union[JointPolicy, Sequence[np.ndarray]],
                           omega: float) -> List[np.ndarray]:
    """
    线性值分解下的逐智能体改进

    Q = Σ_i k_i(s)·Q_i(s,a_i) + b(s) 时，π_new^i(·|s) ∝ ρ_i(·|s)·exp(k_i(s)·Q_i(s,·)/ω)。
    b(s) 与动作无关，在归一化中消去。
    """
    _require_positive_omega(omega)
    k = np.asarray(k, dtype=np.float64)
    if np.any(k <= 0.0):
        raise InvalidArgumentError("LVD weights k_i(s) must be positive")
    rho_tables = rho.agent_tables() if isinstance(rho, JointPolicy) else list(rho)
    if len(rho_tables) != len(q_agents) or k.shape[0] != len(q_agents):
        raise InvalidArgumentError("one Q_i, k_i and rho_i is required per agent")
    return [softmax(k[i][:, None] * np.asarray(q_i) / omega + _log(rho_tables[i]), axis=1)
            for i, q_i in enumerate(q_agents)]


class PolicyIterationResult(NamedTuple):
    q: QTable
    policy: np.ndarray
    value_history: List[np.ndarray]


def divergence_policy_iteration(game: MarkovGame, rho: PolicyLike,
                                cfg: SolverConfig) -> PolicyIterationResult:
    """
    交替精确评估与改进，直到相邻两次评估的 Q 之差 ≤ cfg.vi_tol

    从 π = ρ 出发；每轮的 V^k 单调不减。
    """
    _require_positive_omega(cfg.omega)
    rho_t = as_table(rho)
    pi = rho_t.copy()
    v, q = regularized_evaluation(game, pi, rho_t, cfg.omega)
    history = [v]
    residuals: List[float] = []
    for _ in range(cfg.max_iters):
        pi = divergence_policy_improvement(q, rho_t, cfg.omega)
        v, q_next = regularized_evaluation(game, pi, rho_t, cfg.omega)
        history.append(v)
        residual = float(np.max(np.abs(q_next - q)))
        residuals.append(residual)
        q = q_next
        if residual <= cfg.vi_tol:
            return PolicyIterationResult(QTable(q, residuals), pi, history)
    raise NonConvergenceError("divergence policy iteration did not converge",
                              residuals[-1], len(residuals))


# ---------------------------------------------------------------------------
# 无正则的值迭代与极限策略
# ---------------------------------------------------------------------------

def standard_value_iteration(game: MarkovGame, cfg: SolverConfig) -> Tuple[VTable, QTable]:
    """Bellman 最优算子 Γ 的不动点 (V*, Q*)"""
    v = np.zeros(game.n_states)
    residuals: List[float] = []
    for _ in range(cfg.max_iters):
        q = game.reward + game.gamma * (game.transition @ v)
        v_next = q.max(axis=1)
        residual = float(np.max(np.abs(v_next - v)))
        residuals.append(residual)
        v = v_next
        if residual <= cfg.vi_tol:
            q = game.reward + game.gamma * (game.transition @ v)
            return VTable(v, residuals), QTable(q, residuals)
    raise NonConvergenceError("value iteration did not converge", residuals[-1], len(residuals))


def greedy_policy(q: QLike) -> np.ndarray:
    """每个状态取第一个最大值动作的确定性策略表"""
    values = _q_values(q)
    pi = np.zeros_like(values)
    pi[np.arange(values.shape[0]), values.argmax(axis=1)] = 1.0
    return pi


@dataclass(eq=False)
class ActionSet:
    """每个状态的最优动作集合 U_s"""
    members: List[np.ndarray]
    mask: np.ndarray


def optimal_action_set(q: QLike, tie_tol: float) -> ActionSet:
    """与每个状态最大 Q 值相差不超过 tie_tol·max(1,|max|) 的动作"""
    values = _q_values(q)
    best = values.max(axis=1, keepdims=True)
    mask = (best - values) <= tie_tol * np.maximum(1.0, np.abs(best))
    return ActionSet([np.flatnonzero(row) for row in mask], mask)


def limit_policy_prediction(pi0: PolicyLike, q_tilde_star: QLike, tie_tol: float) -> np.ndarray:
    """π̃*(a|s) = 1{a∈U_s}·π0(a|s) / Σ_{a'∈U_s} π0(a'|s)"""
    pi0_t = as_table(pi0)
    action_set = optimal_action_set(q_tilde_star, tie_tol)
    masked = np.where(action_set.mask, pi0_t, 0.0)
    mass = masked.sum(axis=1, keepdims=True)
    if np.any(mass <= 0.0):
        raise InvalidArgumentError("pi0 puts no mass on the optimal actions of some state")
    return masked / mass


# ---------------------------------------------------------------------------
# 镜像迭代
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MirrorIterate:
    """镜像迭代第 k 步的记录"""
    index: int
    policy: np.ndarray
    rho: np.ndarray
    exact_return: float                 # J(π^k)
    regularized_return: float           # J_{ρ^k}(π^k)
    q_tilde: Optional[np.ndarray] = None   # Q̃^k = Q*_{ρ^k}
    log_z: Optional[np.ndarray] = None     # log Z^k(s) = Ṽ^k(s)/ω
    tv_change: float = float("nan")


@dataclass(eq=False)
class MirrorTrace:
    """整条镜像迭代轨迹"""
    mode: TargetMode
    omega: float
    tau: float
    iterates: List[MirrorIterate] = field(default_factory=list)
    converged: bool = False

    @property
    def final(self) -> MirrorIterate:
        return self.iterates[-1]

    @property
    def final_policy(self) -> np.ndarray:
        return self.final.policy

    @property
    def q_tilde_star(self) -> np.ndarray:
        return self.final.q_tilde

    def j_values(self) -> List[float]:
        return [it.exact_return for it in self.iterates]

    def j_reg_values(self) -> List[float]:
        return [it.regularized_return for it in self.iterates]

    def j_monotone(self, atol: float = 1e-9) -> bool:
        return _nondecreasing(self.j_values(), atol)

    def j_reg_monotone(self, atol: float = 1e-9) -> bool:
        return _nondecreasing(self.j_reg_values(), atol)

    def z_monotone(self, atol: float = 1e-9) -> bool:
        """log Z^t(s) 逐状态不减"""
        logs = [it.log_z for it in self.iterates if it.log_z is not None]
        return all(np.all(b >= a - atol) for a, b in zip(logs, logs[1:]))


def _nondecreasing(values: Sequence[float], atol: float) -> bool:
    return all(b >= a - atol for a, b in zip(values, values[1:]))


def moving_average_rho_step(rho: np.ndarray, q_tilde: np.ndarray, v_tilde: np.ndarray,
                            omega: float, tau: float) -> np.ndarray:
    """ρ^{t+1} = (1 - τ + τ·f^t/Z^t)·ρ^t，其中 f^t/Z^t = exp((Q̃^t - Ṽ^t)/ω)"""
    ratio = np.exp((q_tilde - v_tilde[:, None]) / omega)
    return (1.0 - tau + tau * ratio) * rho


def mirror_iteration(game: MarkovGame, pi0: PolicyLike, omega: float,
                     mode: TargetMode = TargetMode.HARD_REPLACE, k_max: int = 1000,
                     cfg: Optional[SolverConfig] = None, tau: float = 0.1) -> MirrorTrace:
    """
    镜像迭代

    hard_replace: ρ^k = π^{k-1}；moving_average: ρ^k = (1-τ)ρ^{k-1} + τπ^{k-1}（概率空间，ρ^0 = π^0）。
    每步 π^k = π*_{ρ^k}，并记录 J(π^k) 与 J_{ρ^k}(π^k)。第 0 步记录 π^0 本身（ρ^0 = π^0）。
    连续 cfg.mirror_patience 步逐状态 TV 变化 ≤ cfg.mirror_tv_tol 即视为收敛。
    """
    cfg = (cfg or SolverConfig()).with_overrides(omega=omega)
    _require_positive_omega(omega)
    if k_max < 1:
        raise InvalidArgumentError(f"k_max must be >= 1, got {k_max}")
    if not 0.0 < tau <= 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1], got {tau}")
    mode = TargetMode(mode)
    pi = as_table(pi0).copy()
    _check_policy(game, pi, "pi0")
    rho = pi.copy()
    j0 = exact_return(game, pi)
    trace = MirrorTrace(mode=mode, omega=omega, tau=tau)
    trace.iterates.append(MirrorIterate(0, pi, rho, j0, j0))

    v_warm = None
    streak = 0
    for k in range(1, k_max + 1):
        if mode is TargetMode.HARD_REPLACE:
            rho = pi
        else:
            rho = mix_probability(rho, pi, tau)
        try:
            q_tilde, v_tilde, pi_next = solve_optimal_regularized(game, rho, cfg, v0=v_warm)
        except NonConvergenceError as e:
            raise e.at_iterate(k) from e
        v_warm = v_tilde.values
        tv = float(np.max(total_variation(pi_next, pi)))
        pi = pi_next
        trace.iterates.append(MirrorIterate(
            index=k,
            policy=pi,
            rho=rho,
            exact_return=exact_return(game, pi),
            regularized_return=regularized_return(game, pi, rho, omega),
            q_tilde=q_tilde.values,
            log_z=v_tilde.values / omega,
            tv_change=tv,
        ))
        streak = streak + 1 if tv <= cfg.mirror_tv_tol else 0
        if streak >= cfg.mirror_patience:
            trace.converged = True
            break

    logger.debug(f"🔁 镜像迭代 mode={mode.value} ω={omega}: {len(trace.iterates) - 1} 步, "
                 f"converged={trace.converged}, J={trace.final.exact_return:.6f}")
    return trace


# ---------------------------------------------------------------------------
# 理论性质检查
# ---------------------------------------------------------------------------

class BoundCheck(NamedTuple):
    gap: float
    bound: float
    holds: bool
    converged: bool
    iterations: int


def optimality_bound(game: MarkovGame, omega: float) -> float:
    """ω·log|A|/(1-γ)，|A| 为联合动作数"""
    return omega * np.log(game.n_joint_actions) / (1.0 - game.gamma)


def optimality_gap_check(game: MarkovGame, omega: float, cfg: Optional[SolverConfig] = None,
                         k_max: int = 200,
                         mode: TargetMode = TargetMode.HARD_REPLACE) -> BoundCheck:
    """
    从均匀 π0 出发做镜像迭代，检查 ‖V^{π̃*} - V*‖∞ ≤ ω·log|A|/(1-γ)

    V^{π̃*} 是最终策略在原始 MDP 中的值，V* 来自标准值迭代。
    """
    cfg = cfg or SolverConfig()
    pi0 = np.full((game.n_states, game.n_joint_actions), 1.0 / game.n_joint_actions)
    trace = mirror_iteration(game, pi0, omega, mode=mode, k_max=k_max, cfg=cfg)
    v_pi, _ = evaluate_policy(game, trace.final_policy)
    v_star, _ = standard_value_iteration(game, cfg)
    gap = float(np.max(np.abs(v_pi - v_star.values)))
    bound = float(optimality_bound(game, omega))
    return BoundCheck(gap, bound, gap <= bound + 1e-6, trace.converged, len(trace.iterates) - 1)


def verify_q_equals_original(game: MarkovGame, converged: Tuple[QLike, PolicyLike],
                             cfg: Optional[SolverConfig] = None) -> bool:
    """
    收敛后的 Q̃* 是否等于 π̃* 在原始 MDP 中的 Q 函数

    允许误差 10·max(tol, vi_tol)/(1-γ)：Q̃* 来自值迭代，其误差以 vi_tol·γ/(1-γ) 为界。
    """
    cfg = cfg or SolverConfig()
    q_tilde, policy = converged
    _, q_original = evaluate_policy(game, policy)
    tol = 10.0 * max(cfg.tol, cfg.vi_tol) / (1.0 - game.gamma)
    return bool(np.max(np.abs(q_original - _q_values(q_tilde))) <= tol)
