"""
进程池管理器
独立任务交给 ProcessPoolExecutor 并发执行，结果由父进程按提交顺序统一收集
"""
import os
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

from loguru import logger

from .errors import InvalidArgumentError


@dataclass
class TaskOutcome:
    """单个任务的执行结果；error 非空表示失败"""
    task_id: str
    result: Any = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


class ProcessManager:
    """进程池管理器"""

    def __init__(self, max_processes: Optional[int] = None,
                 on_finished: Optional[Callable[[str, Any], None]] = None,
                 on_failed: Optional[Callable[[str, str], None]] = None):
        max_processes = max_processes or os.cpu_count() or 1
        if max_processes < 1:
            raise InvalidArgumentError(f"max_processes must be >= 1, got {max_processes}")
        self.max_processes = max_processes
        self.on_finished = on_finished
        self.on_failed = on_failed
        self.pending_tasks: List[Tuple[str, Callable, tuple]] = []   # 等待队列
        self.finished: Dict[str, Any] = {}
        self.failed: Dict[str, str] = {}
        logger.info(f"✅ 进程管理器初始化完成，最大并发数: {max_processes}")

    def submit(self, task_id: str, fn: Callable, *args):
        """加入等待队列；fn 与参数须可被 pickle"""
        if any(tid == task_id for tid, _, _ in self.pending_tasks) or task_id in self.finished:
            raise InvalidArgumentError(f"duplicate task id: {task_id}")
        self.pending_tasks.append((task_id, fn, args))

    def _record_success(self, task_id: str, result: Any):
        self.finished[task_id] = result
        logger.debug(f"✅ 任务完成: {task_id}")
        if self.on_finished:
            self.on_finished(task_id, result)

    def _record_failure(self, task_id: str, error: BaseException):
        message = f"{type(error).__name__}: {error}"
        self.failed[task_id] = message
        logger.error(f"❌ 任务失败: {task_id}, 错误: {message}")
        if self.on_failed:
            self.on_failed(task_id, message)

    def run_all(self) -> List[TaskOutcome]:
        """
        执行队列中的全部任务

        单个任务失败只记录错误，不影响其余任务。返回值按提交顺序排列，与完成先后无关。
        """
        queue, self.pending_tasks = self.pending_tasks, []
        order = [task_id for task_id, _, _ in queue]
        logger.info(f"🚀 开始执行 {len(queue)} 个任务，并发数 {min(self.max_processes, len(queue) or 1)}")

        if self.max_processes == 1:
            for task_id, fn, args in queue:
                try:
                    self._record_success(task_id, fn(*args))
                except Exception as e:
                    self._record_failure(task_id, e)
        else:
            self._run_pool(queue)

        logger.info(f"📊 任务执行结束: 成功 {len(self.finished)}，失败 {len(self.failed)}")
        return [TaskOutcome(tid, self.finished.get(tid), self.failed.get(tid, "")) for tid in order]

    def _run_pool(self, queue: List[Tuple[str, Callable, tuple]]):
        with ProcessPoolExecutor(max_workers=self.max_processes) as pool:
            active: Dict[Future, str] = {}
            backlog = list(queue)
            while backlog or active:
                while backlog and len(active) < self.max_processes:
                    task_id, fn, args = backlog.pop(0)
                    active[pool.submit(fn, *args)] = task_id
                done, _ = wait(active, return_when=FIRST_COMPLETED)
                for future in done:
                    task_id = active.pop(future)
                    try:
                        self._record_success(task_id, future.result())
                    except Exception as e:
                        self._record_failure(task_id, e)

    def get_process_status(self) -> Dict[str, int]:
        return {
            "max_processes": self.max_processes,
            "pending_count": len(self.pending_tasks),
            "finished_count": len(self.finished),
            "failed_count": len(self.failed),
        }
