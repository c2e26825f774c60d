import os
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

import psutil

from .debug_logger import debug_logger


class PerformanceMonitor:
    """Monitor run time and resource usage of long operations"""

    def __init__(self) -> None:
        self.start_time = time.perf_counter()
        self.operation_times: Dict[str, float] = {}

    def start_operation(self, operation_name: str) -> None:
        """Start timing an operation"""
        self.operation_times[operation_name] = time.perf_counter()
        debug_logger.log_function_entry(f"PERF_START: {operation_name}")

    def end_operation(self, operation_name: str, details: Optional[Dict[str, Any]] = None) -> float:
        """End timing an operation and log results"""
        if operation_name not in self.operation_times:
            return 0.0
        duration = time.perf_counter() - self.operation_times.pop(operation_name)
        payload = dict(details or {})
        payload['memory_used_mb'] = round(self.get_system_metrics().get('memory_used_mb', 0.0), 1)
        debug_logger.log_performance(operation_name, duration, payload)
        debug_logger.log_function_exit(f"PERF_END: {operation_name}", duration)
        return duration

    @contextmanager
    def track(self, operation_name: str, **details: Any) -> Iterator[None]:
        self.start_operation(operation_name)
        try:
            yield
        finally:
            self.end_operation(operation_name, details)

    def get_system_metrics(self) -> Dict[str, float]:
        """Get current process metrics"""
        try:
            process = psutil.Process(os.getpid())
            return {
                'memory_used_mb': process.memory_info().rss / 1024 / 1024,
                'memory_percent': psutil.virtual_memory().percent,
                'cpu_count': float(psutil.cpu_count(logical=True) or 1),
                'uptime_seconds': time.perf_counter() - self.start_time,
            }
        except Exception as e:
            debug_logger.log_error(e, "Failed to get system metrics")
            return {}


# Global performance monitor instance
perf_monitor = PerformanceMonitor()
