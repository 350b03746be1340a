"""
实验调度器
把 ω 扫描拆成独立的 (mode, ω, seed) 单元，交给进程池执行，再由父进程统一写出结果
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd
from loguru import logger

from utils.metrics_table import aggregate_runs

from .game import generate_random_game
from .models import (MarkovGame, Regularizer, RunMetrics, RunMode, RunStatus, SweepCell,
                     SweepSpec, TrainerConfig)
from .process_manager import ProcessManager
from .storage import header_lines, load_game, write_csv, write_json, write_metrics_csv
from .trainer import train


def resolve_game(spec: SweepSpec) -> MarkovGame:
    """game_path 优先，否则按 GameSpec 生成"""
    if spec.game_path:
        return load_game(spec.game_path)
    g = spec.game
    return generate_random_game(g.seed, g.n_states, g.n_agents, g.n_actions, g.horizon, g.gamma)


def cell_config(base: TrainerConfig, cell: SweepCell) -> TrainerConfig:
    """单元对应的训练配置：ω=0 对照组把 ω 置零，熵正则对照组冻结 ρ 为均匀分布"""
    regularizer = Regularizer.ENTROPY if cell.mode is RunMode.ENTROPY else Regularizer.DIVERGENCE
    return base.with_overrides(omega=cell.omega, seed=cell.seed, regularizer=regularizer)


def build_cells(spec: SweepSpec) -> List[SweepCell]:
    """展开全部单元；ω=0 对照组与 ω 无关，每个 seed 只跑一次"""
    cells: List[SweepCell] = []
    for mode in spec.modes:
        omegas = (0.0,) if mode is RunMode.OMEGA_ZERO else spec.omegas
        for omega in omegas:
            for seed in spec.seeds:
                cells.append(SweepCell(mode=mode, omega=float(omega), seed=int(seed)))
    return cells


def _run_cell(game: MarkovGame, cfg_data: dict, mode: str) -> RunMetrics:
    """工作进程入口（模块级函数，可被 pickle）"""
    return train(game, TrainerConfig.from_dict(cfg_data), mode)


@dataclass
class SweepResult:
    cells: List[SweepCell]
    runs: List[RunMetrics]
    aggregate: pd.DataFrame
    out_dir: Optional[Path] = None

    @property
    def failed_cells(self) -> List[SweepCell]:
        return [c for c in self.cells if c.status is RunStatus.FAILED]


def run_sweep(spec: SweepSpec, out_dir: Optional[Union[str, Path]] = None,
              max_processes: Optional[int] = None) -> SweepResult:
    """
    执行 ω 扫描

    写出 runs/<cell>/<seed>.csv、aggregate.csv 与 resolved_config.json。
    失败的单元记录错误说明，扫描继续进行。
    """
    game = resolve_game(spec)
    cells = build_cells(spec)
    logger.info(f"🚀 开始扫描: {len(cells)} 个单元, modes={[m.value for m in spec.modes]}, "
                f"ω={list(spec.omegas)}, seeds={list(spec.seeds)}")

    manager = ProcessManager(max_processes=max_processes)
    by_id = {}
    for cell in cells:
        task_id = f"{cell.cell_name}/{cell.seed}"
        by_id[task_id] = cell
        cell.mark_running()
        manager.submit(task_id, _run_cell, game, cell_config(spec.trainer, cell).to_dict(),
                       cell.mode.value)

    runs: List[RunMetrics] = []
    failures = []
    for outcome in manager.run_all():
        cell = by_id[outcome.task_id]
        if outcome.ok:
            cell.mark_completed()
            runs.append(outcome.result)
        else:
            cell.mark_failed(outcome.error)
            failures.append((cell.mode.value, cell.omega, cell.seed, outcome.error))

    aggregate = aggregate_runs(runs, failures)
    result = SweepResult(cells, runs, aggregate)

    if out_dir is not None:
        out = Path(out_dir)
        for cell, run in zip([c for c in cells if c.status is RunStatus.COMPLETED], runs):
            write_metrics_csv(run, out / "runs" / cell.cell_name / f"{cell.seed}.csv")
        resolved = spec.to_dict()
        write_csv(aggregate, out / "aggregate.csv", header_lines(resolved))
        write_json(out / "resolved_config.json", resolved)
        result.out_dir = out
        logger.info(f"💾 扫描结果已写入 {out}")

    logger.info(f"✅ 扫描完成: 成功 {len(runs)}，失败 {len(failures)}")
    return result
