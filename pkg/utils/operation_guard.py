"""
命令行操作防护
把异常统一映射为稳定的退出码：0 成功，1 运行 / I/O 失败，2 用法错误
"""
import functools
from typing import Callable

from loguru import logger
from pydantic import ValidationError

from core.errors import DmacError, InvalidArgumentError, NonConvergenceError, UsageError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def exit_code_for(error: BaseException) -> int:
    """异常 → 退出码"""
    if isinstance(error, (UsageError, InvalidArgumentError, ValidationError)):
        return EXIT_USAGE
    return EXIT_FAILURE


def cli_guard(operation: str):
    """
    子命令装饰器

    被装饰函数正常返回即退出码 0；异常记录日志后按 exit_code_for 转换，不向外抛出。
    """
    def decorator(func: Callable[..., None]) -> Callable[..., int]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> int:
            try:
                func(*args, **kwargs)
                return EXIT_OK
            except (UsageError, InvalidArgumentError, ValidationError) as e:
                logger.error(f"❌ {operation} 参数错误: {e}")
                return EXIT_USAGE
            except PermissionError as e:
                logger.error(f"❌ {operation} 权限不足: {e}")
                return EXIT_FAILURE
            except OSError as e:
                logger.error(f"❌ {operation} 文件读写失败: {e}")
                return EXIT_FAILURE
            except NonConvergenceError as e:
                logger.error(f"❌ {operation} 迭代未收敛: {e}")
                return EXIT_FAILURE
            except DmacError as e:
                logger.error(f"❌ {operation} 失败: {e}")
                return exit_code_for(e)
            except Exception as e:
                logger.exception(f"❌ {operation} 未知错误: {e}")
                return EXIT_FAILURE
        return wrapper
    return decorator


__all__ = ["cli_guard", "exit_code_for", "EXIT_OK", "EXIT_FAILURE", "EXIT_USAGE"]
