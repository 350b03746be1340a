"""
异常定义
"""
from typing import Optional


class DmacError(Exception):
    """所有库内异常的基类"""


class InvalidArgumentError(DmacError, ValueError):
    """参数不合法（维度为0、折扣因子越界、索引越界等）"""


class GameValidationError(DmacError, ValueError):
    """博弈数据违反不变量（转移概率行和不为1等）"""


class GameParseError(DmacError, ValueError):
    """文件格式错误，field 指出出错的字段"""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NonConvergenceError(DmacError, RuntimeError):
    """迭代在 max_iters 内未收敛"""

    def __init__(self, message: str, residual: float, iterations: int,
                 iterate: Optional[int] = None):
        self.base_message = message
        if iterate is not None:
            message = f"{message} (mirror iterate {iterate})"
        super().__init__(f"{message}: residual={residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations
        self.iterate = iterate

    def at_iterate(self, iterate: int) -> "NonConvergenceError":
        """附加外层迭代序号后重新抛出"""
        return NonConvergenceError(self.base_message, self.residual, self.iterations, iterate)


class SolverInternalError(DmacError, RuntimeError):
    """线性求解等内部失败"""


class UsageError(DmacError):
    """命令行用法错误（参数缺失、取值非法）"""
