"""
数据存储管理

博弈 JSON、策略快照、key=value 配置文件，以及带配置头注释的指标 CSV。
所有输出不含墙钟时间，同样的输入写出逐字节相同的文件。
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger

from .errors import GameParseError, InvalidArgumentError
from .models import VERSION, MarkovGame, RunMetrics, config_hash
from .policy import JointPolicy

PathLike = Union[str, Path]

GAME_FIELDS = ("n_states", "n_agents", "n_actions_per_agent", "gamma", "horizon",
               "initial_state_dist", "reward", "transition")

METRIC_COLUMNS = ["step", "episode", "mean_episode_reward", "exact_return", "cover_rate",
                  "omega", "seed"]


def _prepare_parent(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)


def write_json(path: PathLike, data: Dict[str, Any]):
    """写 JSON；浮点数以 repr 写出，可逐位读回"""
    path = Path(path)
    _prepare_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, allow_nan=True)
        f.write("\n")
    logger.debug(f"💾 写入 {path}")


def read_json(path: PathLike) -> Any:
    with open(Path(path), "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# 博弈文件
# ---------------------------------------------------------------------------

def save_game(game: MarkovGame, path: PathLike):
    """保存博弈为 JSON（数组按 [state][joint_action][next_state] 行优先展开）"""
    write_json(path, game.to_dict())
    logger.info(f"💾 博弈已保存: {path} ({game.summary()})")


def _int_field(data: dict, name: str) -> int:
    value = data[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise GameParseError(name, f"expected an integer, got {value!r}")
    return value


def _array_field(data: dict, name: str, ndim: int) -> np.ndarray:
    value = data[name]
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise GameParseError(name, f"not a rectangular numeric array: {e}") from e
    if arr.ndim != ndim:
        raise GameParseError(name, f"expected a {ndim}-d array, got {arr.ndim}-d")
    return arr


def game_from_document(data: Any) -> MarkovGame:
    """
    从已解析的 JSON 文档构造博弈

    缺字段或类型不符时抛出 GameParseError（带字段名）；
    结构正确但违反不变量（如转移行和不为 1）时由 MarkovGame 抛出 GameValidationError。
    """
    if not isinstance(data, dict):
        raise GameParseError("<document>", "top level must be a JSON object")
    for name in GAME_FIELDS:
        if name not in data:
            raise GameParseError(name, "missing required field")
    unknown = sorted(set(data) - set(GAME_FIELDS))
    if unknown:
        raise GameParseError(unknown[0], "unknown field")

    actions = data["n_actions_per_agent"]
    if not isinstance(actions, list) or not all(
            isinstance(a, int) and not isinstance(a, bool) for a in actions):
        raise GameParseError("n_actions_per_agent", "expected a list of integers")
    gamma = data["gamma"]
    if isinstance(gamma, bool) or not isinstance(gamma, (int, float)):
        raise GameParseError("gamma", f"expected a number, got {gamma!r}")

    return MarkovGame(
        n_states=_int_field(data, "n_states"),
        n_agents=_int_field(data, "n_agents"),
        n_actions_per_agent=actions,
        transition=_array_field(data, "transition", 3),
        reward=_array_field(data, "reward", 2),
        gamma=float(gamma),
        horizon=_int_field(data, "horizon"),
        initial_state_dist=_array_field(data, "initial_state_dist", 1),
    )


def load_game(path: PathLike) -> MarkovGame:
    """读取博弈 JSON 并校验"""
    try:
        data = read_json(path)
    except json.JSONDecodeError as e:
        raise GameParseError("<document>", f"invalid JSON at line {e.lineno}: {e.msg}") from e
    game = game_from_document(data)
    logger.debug(f"📂 读取博弈 {path}: {game.summary()}")
    return game


# ---------------------------------------------------------------------------
# 策略快照
# ---------------------------------------------------------------------------

def save_policy(policy: JointPolicy, path: PathLike, game: Optional[MarkovGame] = None):
    """保存各智能体 logits，并标注博弈维度以便读回时核对"""
    data = {
        "n_states": policy.n_states,
        "n_actions_per_agent": policy.dims,
        "logits": [agent.logits.tolist() for agent in policy.agents],
    }
    if game is not None:
        data["gamma"] = float(game.gamma)
    write_json(path, data)


def load_policy(path: PathLike, game: Optional[MarkovGame] = None) -> JointPolicy:
    """读取策略快照；给定 game 时核对状态数与动作维度"""
    try:
        data = read_json(path)
    except json.JSONDecodeError as e:
        raise GameParseError("<document>", f"invalid JSON at line {e.lineno}: {e.msg}") from e
    for name in ("n_states", "n_actions_per_agent", "logits"):
        if name not in data:
            raise GameParseError(name, "missing required field")
    logits = []
    for i, matrix in enumerate(data["logits"]):
        try:
            logits.append(np.array(matrix, dtype=np.float64))
        except (TypeError, ValueError) as e:
            raise GameParseError("logits", f"agent {i}: {e}") from e
    policy = JointPolicy.from_logits(logits)
    if policy.n_states != data["n_states"] or policy.dims != list(data["n_actions_per_agent"]):
        raise GameParseError("logits", "logit shapes disagree with the recorded dimensions")
    if game is not None and (policy.n_states != game.n_states
                             or policy.dims != game.n_actions_per_agent):
        raise InvalidArgumentError(
            f"policy dims {policy.n_states}x{policy.dims} do not match game "
            f"{game.n_states}x{game.n_actions_per_agent}")
    return policy


# ---------------------------------------------------------------------------
# 指标 CSV
# ---------------------------------------------------------------------------

def metrics_frame(metrics: RunMetrics) -> pd.DataFrame:
    """RunMetrics → DataFrame，列顺序固定"""
    rows = [{
        "step": p.step,
        "episode": p.episode,
        "mean_episode_reward": p.mean_episode_reward,
        "exact_return": p.exact_return,
        "cover_rate": p.cover_rate,
        "omega": metrics.omega,
        "seed": metrics.seed,
    } for p in metrics.points]
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def header_lines(config: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> List[str]:
    """CSV 头部的 `# key: value` 注释行（嵌入完整配置）"""
    lines = [f"# version: {VERSION}", f"# config_hash: {config_hash(config)}"]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append(f"# config: {json.dumps(config, sort_keys=True, default=str)}")
    return lines


def write_csv(frame: pd.DataFrame, path: PathLike, comments: Sequence[str] = ()):
    path = Path(path)
    _prepare_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in comments:
            f.write(line + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")


def write_metrics_csv(metrics: RunMetrics, path: PathLike):
    """写单次训练的学习曲线 CSV"""
    write_csv(metrics_frame(metrics), path,
              header_lines(metrics.config, {"mode": metrics.mode}))
    logger.debug(f"💾 指标已写入 {path}")


def read_metrics_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(Path(path), comment="#")


# ---------------------------------------------------------------------------
# key=value 配置文件
# ---------------------------------------------------------------------------

def _coerce(raw: str) -> Any:
    """数字 / 布尔按 JSON 解析，其余保持字符串（如枚举值、逗号列表）"""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


class ConfigStorage:
    """扁平 key=value 配置文件；# 开头为注释，后出现的键覆盖先出现的"""

    def __init__(self, file_path: Optional[PathLike] = None):
        self.file_path = Path(file_path) if file_path else None
        self.values: Dict[str, Any] = self.load_config() if self.file_path else {}

    def load_config(self) -> Dict[str, Any]:
        values: Dict[str, Any] = {}
        with open(self.file_path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                if "=" not in text:
                    raise InvalidArgumentError(f"{self.file_path}:{lineno}: expected key=value")
                key, raw = (part.strip() for part in text.split("=", 1))
                if not key:
                    raise InvalidArgumentError(f"{self.file_path}:{lineno}: empty key")
                values[key.replace("-", "_")] = _coerce(raw)
        logger.debug(f"⚙️ 读取配置文件 {self.file_path}: {len(values)} 项")
        return values

    def get_config(self) -> Dict[str, Any]:
        return dict(self.values)

    def resolve(self, flags: Dict[str, Any]) -> Dict[str, Any]:
        """文件值在下，命令行显式给出的值（非 None）覆盖在上"""
        resolved = dict(self.values)
        resolved.update({k: v for k, v in flags.items() if v is not None})
        return resolved
