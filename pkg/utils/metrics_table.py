"""
指标汇总表工具
把多次训练的 RunMetrics 汇总成按 (mode, ω) 分组的 pandas 表
"""
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from core.models import TAIL_FRACTION, RunMetrics

AGGREGATE_COLUMNS = [
    "mode", "omega", "n_runs", "n_failed",
    "mean_final_reward", "mean_final_cover_rate", "mean_final_exact_return",
    "seeds", "final_reward_per_seed", "final_cover_rate_per_seed", "final_exact_return_per_seed",
    "tail_fraction", "errors",
]

def _join(values: Sequence) -> str:
    return ";".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(v)
                    for v in values)


def aggregate_runs(runs: Sequence[RunMetrics],
                   failures: Sequence[Tuple[str, float, int, str]] = ()) -> pd.DataFrame:
    """
    按 (mode, ω) 汇总终值（最后 10% 评估点的均值）

    组内先按 seed 排序再求均值，结果与各次训练的完成顺序无关。
    failures 为 (mode, ω, seed, 错误说明)，失败的训练只计数并记录说明。
    """
    groups: Dict[Tuple[str, float], List[RunMetrics]] = {}
    for run in runs:
        groups.setdefault((run.mode, float(run.omega)), []).append(run)
    errors: Dict[Tuple[str, float], List[Tuple[int, str]]] = {}
    for mode, omega, seed, message in failures:
        errors.setdefault((mode, float(omega)), []).append((seed, message))

    rows = []
    for key in sorted(set(groups) | set(errors)):
        members = sorted(groups.get(key, []), key=lambda r: r.seed)
        notes = sorted(errors.get(key, []))
        rewards = [r.final_reward for r in members]
        covers = [r.final_cover_rate for r in members]
        returns = [r.final_exact_return for r in members]
        rows.append({
            "mode": key[0],
            "omega": key[1],
            "n_runs": len(members),
            "n_failed": len(notes),
            "mean_final_reward": float(np.mean(rewards)) if members else float("nan"),
            "mean_final_cover_rate": float(np.mean(covers)) if members else float("nan"),
            "mean_final_exact_return": float(np.mean(returns)) if members else float("nan"),
            "seeds": _join([r.seed for r in members]),
            "final_reward_per_seed": _join(rewards),
            "final_cover_rate_per_seed": _join(covers),
            "final_exact_return_per_seed": _join(returns),
            "tail_fraction": TAIL_FRACTION,
            "errors": " | ".join(f"seed {s}: {m}" for s, m in notes),
        })
    if any(row["n_failed"] for row in rows):
        logger.warning(f"⚠️ 汇总中包含失败的训练: {sum(row['n_failed'] for row in rows)} 次")
    return pd.DataFrame(rows, columns=AGGREGATE_COLUMNS)
