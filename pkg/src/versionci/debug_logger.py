import sys
import traceback
from datetime import datetime
from typing import Any, Dict, List, Optional

from loguru import logger

PACKAGE = "versionci"


def setup_logging(level: str = "WARNING", log_file: Optional[str] = None) -> None:
    """Enable package logging: stderr sink at ``level`` plus an optional file sink.

    Nothing is ever written to stdout so CLI artifacts stay byte-stable.
    """
    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        format="{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}",
    )
    if log_file:
        logger.add(log_file, level="DEBUG", rotation="10 MB", encoding="utf-8")
    logger.enable(PACKAGE)


class DebugLogger:
    """Structured debug logging for versionci"""

    def log_function_entry(self, func_name: str, **kwargs: Any) -> None:
        logger.debug(f"ENTERING: {func_name} with params: {kwargs}")

    def log_function_exit(self, func_name: str, result: Any = None) -> None:
        logger.debug(f"EXITING: {func_name} with result: {type(result).__name__}")

    def log_error(self, error: BaseException, context: str = "") -> Dict[str, Any]:
        """Log detailed error information and return it"""
        error_info = {
            'error_type': type(error).__name__,
            'error_message': str(error),
            'context': context,
            'traceback': ''.join(traceback.format_exception(type(error), error, error.__traceback__)),
            'timestamp': datetime.now().isoformat(),
        }
        logger.error(f"ERROR: {error_info['error_type']}: {error_info['error_message']} - Context: {context}")
        logger.debug(error_info['traceback'])
        return error_info

    def log_warning(self, message: str, context: str = "") -> None:
        logger.warning(f"WARNING: {message} - Context: {context}")

    def log_performance(self, operation: str, duration: float, details: Optional[Dict[str, Any]] = None) -> None:
        perf_info = {
            'operation': operation,
            'duration_seconds': round(duration, 4),
            'details': details or {},
        }
        logger.info(f"PERFORMANCE: {perf_info}")

    def log_data_validation(self, data_type: str, validation_result: bool,
                            errors: Optional[List[str]] = None) -> None:
        validation_info = {
            'data_type': data_type,
            'valid': validation_result,
            'errors': errors or [],
        }
        if validation_result:
            logger.info(f"VALIDATION: {validation_info}")
        else:
            logger.warning(f"VALIDATION: {validation_info}")


# Global debug logger instance
debug_logger = DebugLogger()
