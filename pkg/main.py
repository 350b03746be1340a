#!/usr/bin/env python3
"""
DMAC 桌面规模实验工具
主程序入口
"""
import argparse
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from loguru import logger

# 添加项目路径
sys.path.insert(0, str(Path(__file__).parent))

from core.errors import UsageError
from core.game import demo_game, generate_random_game
from core.models import (VERSION, GameSpec, RunMode, SolverConfig, SweepSpec, TargetMode,
                         TrainerConfig)
from core.report import compare_trained_vs_exact, exact_report
from core.scheduler import run_sweep
from core.storage import ConfigStorage, load_game, save_game, save_policy, write_json, \
    write_metrics_csv
from core.trainer import train_policy
from utils.operation_guard import cli_guard

GAME_KEYS = {"seed": "seed", "states": "n_states", "agents": "n_agents", "actions": "n_actions",
             "horizon": "horizon", "gamma": "gamma"}
TRAINER_KEYS = set(TrainerConfig.model_fields)
SOLVER_KEYS = set(SolverConfig.model_fields)
OTHER_KEYS = {"game", "game_seed", "demo", "omegas", "seeds", "modes", "mode", "target_mode",
              "k_max", "output", "out_dir", "jobs", "save_policy"}
KNOWN_KEYS = set(GAME_KEYS) | TRAINER_KEYS | SOLVER_KEYS | OTHER_KEYS
GLOBAL_KEYS = ("out_dir", "jobs", "config", "debug", "log_file")


def setup_logging(debug: bool = False, log_file: Optional[str] = None):
    """设置日志"""
    logger.remove()  # 移除默认处理器

    # 控制台日志
    log_level = "DEBUG" if debug else "INFO"
    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan> | <level>{message}</level>",
        colorize=True
    )

    # 文件日志
    if log_file:
        logger.add(
            log_file,
            level="DEBUG",
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function} | {message}",
            rotation="10 MB",
            retention="7 days",
            encoding="utf-8"
        )


# ---------------------------------------------------------------------------
# 参数解析
# ---------------------------------------------------------------------------

def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as e:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from e


def _seed_list(value: Any) -> List[int]:
    """'5' 表示 seed 0..4，'1,3,7' 表示显式列表"""
    text = str(value)
    try:
        if "," in text:
            return [int(x) for x in text.split(",") if x.strip()]
        count = int(text)
    except ValueError as e:
        raise UsageError(f"invalid seed list {text!r}") from e
    if count < 1:
        raise UsageError("seed count must be >= 1")
    return list(range(count))


def _run_modes(text: str) -> tuple:
    try:
        return tuple(RunMode(m.strip()) for m in str(text).split(",") if m.strip())
    except ValueError as e:
        raise UsageError(f"unknown mode in {text!r}; expected dmac, omega_zero or entropy") from e


def _global_flags(parser: argparse.ArgumentParser):
    suppress = argparse.SUPPRESS
    parser.add_argument("--out-dir", default=suppress, help="输出目录（默认 ./out）")
    parser.add_argument("--jobs", type=int, default=suppress, help="并发进程数上限（默认 CPU 数）")
    parser.add_argument("--config", default=suppress, help="key=value 配置文件")
    parser.add_argument("--debug", action="store_true", default=suppress, help="启用调试日志")
    parser.add_argument("--log-file", default=suppress, help="额外写入的日志文件")


def _game_source_flags(parser: argparse.ArgumentParser, demo: bool = False):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--game", help="博弈 JSON 文件")
    if demo:
        group.add_argument("--demo", action="store_true", default=None, help="使用内置 2 状态小博弈")
    parser.add_argument("--game-seed", type=int, help="未给出 --game 时生成随机博弈的种子")
    parser.add_argument("--states", type=int)
    parser.add_argument("--agents", type=int)
    parser.add_argument("--actions", type=int)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--gamma", type=float)


def _trainer_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--tau", type=float, help="目标策略 / 目标评论家软更新系数")
    parser.add_argument("--critic-lr", type=float)
    parser.add_argument("--actor-lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--buffer-capacity", type=int)
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--eval-episodes", type=int)
    parser.add_argument("--critic-kind", choices=["joint", "lvd"])
    parser.add_argument("--next-action-mode", choices=["sampled", "expected"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="DMAC 桌面规模实验工具",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例用法:
  python main.py gen-game --seed 7 --states 30 --agents 3 --actions 5 --horizon 30 --gamma 0.99 -o game.json
  python main.py solve --game game.json --omega 0.2 --mode both
  python main.py solve --demo
  python main.py train --game game.json --omega 0.2 --seed 1
  python main.py sweep --game game.json --omegas 0.001,0.2,100 --seeds 5 --jobs 4
  python main.py compare --game game.json --omega 0.2
        """
    )
    _global_flags(parser)
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common)

    p = sub.add_parser("gen-game", parents=[common], help="生成随机合作博弈")
    p.add_argument("-o", "--output", required=True, help="输出的博弈 JSON")
    p.add_argument("--seed", type=int)
    for name in ("states", "agents", "actions", "horizon"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--gamma", type=float)

    p = sub.add_parser("solve", parents=[common], help="精确求解并写出 exact_report.json")
    _game_source_flags(p, demo=True)
    p.add_argument("--omega", help="正则系数 ω，可用逗号给出多个")
    p.add_argument("--mode", dest="target_mode", choices=["hard", "moving", "both"])
    p.add_argument("--tau", type=float, help="moving 模式的混合系数")
    p.add_argument("--tol", type=float)
    p.add_argument("--vi-tol", type=float)
    p.add_argument("--k-max", type=int)

    p = sub.add_parser("train", parents=[common], help="训练一次并写出学习曲线 CSV")
    _game_source_flags(p)
    p.add_argument("--omega", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=[m.value for m in RunMode])
    p.add_argument("--save-policy", help="保存训练后的策略快照")
    _trainer_flags(p)

    p = sub.add_parser("sweep", parents=[common], help="ω 扫描实验")
    _game_source_flags(p)
    p.add_argument("--omegas", help="逗号分隔的 ω 列表")
    p.add_argument("--seeds", help="seed 数量，或逗号分隔的 seed 列表")
    p.add_argument("--modes", help="逗号分隔: dmac,omega_zero,entropy")
    _trainer_flags(p)

    p = sub.add_parser("compare", parents=[common], help="训练策略与精确解对照")
    _game_source_flags(p, demo=True)
    p.add_argument("--omega", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=[m.value for m in RunMode])
    _trainer_flags(p)
    return parser


def resolve_options(args: argparse.Namespace) -> Dict[str, Any]:
    """配置文件在下、命令行在上合并；配置文件中的未知键视为用法错误"""
    storage = ConfigStorage(getattr(args, "config", None))
    unknown = sorted(set(storage.values) - KNOWN_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    return storage.resolve(flags)


def _pick(options: Dict[str, Any], keys) -> Dict[str, Any]:
    return {k: options[k] for k in keys if k in options and options[k] is not None}


def _default(options: Dict[str, Any], key: str, fallback: Any) -> Any:
    value = options.get(key)
    return fallback if value is None else value


def _game_spec(options: Dict[str, Any], seed_key: str = "game_seed") -> GameSpec:
    data = {GAME_KEYS[k]: options[k] for k in GAME_KEYS if k != "seed" and options.get(k) is not None}
    if options.get(seed_key) is not None:
        data["seed"] = options[seed_key]
    return GameSpec(**data)


def _load_game(options: Dict[str, Any]):
    if options.get("demo"):
        return demo_game(), {"demo": True}
    if options.get("game"):
        return load_game(options["game"]), {"game_path": str(options["game"])}
    spec = _game_spec(options)
    return (generate_random_game(spec.seed, spec.n_states, spec.n_agents, spec.n_actions,
                                 spec.horizon, spec.gamma), {"game": spec.to_dict()})


def _trainer_config(options: Dict[str, Any], mode: RunMode) -> TrainerConfig:
    data = _pick(options, TRAINER_KEYS)
    if mode is RunMode.OMEGA_ZERO:
        data["omega"] = 0.0
    elif mode is RunMode.ENTROPY:
        data["regularizer"] = "entropy"
    return TrainerConfig(**data)


def _out_dir(options: Dict[str, Any]) -> Path:
    return Path(options.get("out_dir") or "out")


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

@cli_guard("gen-game")
def cmd_gen_game(options: Dict[str, Any]):
    spec = _game_spec(options, seed_key="seed")
    game = generate_random_game(spec.seed, spec.n_states, spec.n_agents, spec.n_actions,
                                spec.horizon, spec.gamma)
    save_game(game, options["output"])
    print(f"{options['output']}: {game.summary()}")


TARGET_MODES = {
    "hard": [TargetMode.HARD_REPLACE],
    "moving": [TargetMode.MOVING_AVERAGE],
    "both": [TargetMode.HARD_REPLACE, TargetMode.MOVING_AVERAGE],
}


@cli_guard("solve")
def cmd_solve(options: Dict[str, Any]):
    omegas = _float_list(_default(options, "omega", "0.2"))
    if not omegas or any(w <= 0.0 for w in omegas):
        raise UsageError(f"omega must be > 0, got {options.get('omega')}")
    game, source = _load_game(options)
    cfg = SolverConfig(**_pick(options, SOLVER_KEYS - {"omega"}))
    modes = TARGET_MODES[options.get("target_mode") or "both"]
    report = exact_report(game, omegas, modes, cfg,
                          k_max=int(_default(options, "k_max", 1000)),
                          tau=float(_default(options, "tau", 0.1)))
    report["config"].update(source)
    path = _out_dir(options) / "exact_report.json"
    write_json(path, report)
    holds = all(row["bound_check"]["holds"] for row in report["rows"])
    print(f"{path}: {len(report['rows'])} rows, bound holds={holds}")


@cli_guard("train")
def cmd_train(options: Dict[str, Any]):
    mode = RunMode(options.get("mode") or "dmac")
    game, source = _load_game(options)
    cfg = _trainer_config(options, mode)
    metrics, policy = train_policy(game, cfg, mode.value)
    cell = f"{mode.value}_omega{cfg.omega:g}"
    out = _out_dir(options)
    path = out / "runs" / cell / f"{cfg.seed}.csv"
    write_metrics_csv(metrics, path)
    write_json(out / "resolved_config.json", {"mode": mode.value, **source, "trainer": cfg.to_dict()})
    if options.get("save_policy"):
        save_policy(policy, options["save_policy"], game)
    print(f"{path}: final_reward={metrics.final_reward:.6f} "
          f"final_exact_return={metrics.final_exact_return:.6f} "
          f"final_cover_rate={metrics.final_cover_rate:.6f}")


@cli_guard("sweep")
def cmd_sweep(options: Dict[str, Any]):
    modes = _run_modes(options.get("modes") or "dmac")
    data: Dict[str, Any] = {
        "modes": modes,
        "trainer": _pick(options, TRAINER_KEYS - {"omega", "seed", "regularizer"}),
    }
    if options.get("game"):
        data["game_path"] = str(options["game"])
    else:
        data["game"] = _game_spec(options)
    if options.get("omegas") is not None:
        data["omegas"] = tuple(_float_list(options["omegas"]))
    if options.get("seeds") is not None:
        data["seeds"] = tuple(_seed_list(options["seeds"]))
    spec = SweepSpec.model_validate(data)
    result = run_sweep(spec, _out_dir(options), options.get("jobs"))
    for run in result.runs:
        print(f"{run.mode} ω={run.omega:g} seed={run.seed}: final_reward={run.final_reward:.6f} "
              f"final_cover_rate={run.final_cover_rate:.6f}")
    if result.failed_cells:
        raise RuntimeError(f"{len(result.failed_cells)} sweep runs failed")


@cli_guard("compare")
def cmd_compare(options: Dict[str, Any]):
    mode = RunMode(options.get("mode") or "dmac")
    game, source = _load_game(options)
    cfg = _trainer_config(options, mode)
    report = compare_trained_vs_exact(game, cfg, mode=mode.value)
    report["config"].update(source)
    path = _out_dir(options) / "compare_report.json"
    write_json(path, report)
    print(f"{path}: j_trained={report['j_trained']:.6f} j_reference={report['j_reference']:.6f} "
          f"tv_max={report['tv_max']:.6f}")


COMMANDS = {
    "gen-game": cmd_gen_game,
    "solve": cmd_solve,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(bool(getattr(args, "debug", False)), getattr(args, "log_file", None))
    try:
        options = resolve_options(args)
    except (UsageError, ValueError) as e:
        logger.error(f"❌ 配置错误: {e}")
        return 2
    except OSError as e:
        logger.error(f"❌ 读取配置文件失败: {e}")
        return 1
    if options.get("jobs") is not None and int(options["jobs"]) < 1:
        logger.error("❌ --jobs must be >= 1")
        return 2
    options.setdefault("jobs", os.cpu_count())
    return COMMANDS[args.command](options)


if __name__ == "__main__":
    sys.exit(main())
