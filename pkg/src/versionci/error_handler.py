import functools
import json
import os
from typing import Any, Callable, Dict, Iterable, Optional, Tuple, TypeVar

import typer
from rich.console import Console

from .debug_logger import debug_logger

F = TypeVar('F', bound=Callable[..., Any])

stderr_console = Console(stderr=True, highlight=False, soft_wrap=True)


class VersionCIError(Exception):
    """Base class for every error versionci reports to its caller"""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': type(self).__name__,
            'message': self.message,
            'details': self.details,
        }


class InputFileError(VersionCIError):
    exit_code = 3


class CohortValidationError(VersionCIError):
    exit_code = 4


class InfeasibleMatchError(VersionCIError):
    exit_code = 5


class NonMonotoneInversionError(VersionCIError):
    exit_code = 6


class EnumerationLimitError(VersionCIError):
    exit_code = 7


class DomainError(VersionCIError):
    exit_code = 8


class ErrorHandler:
    """Error handling for the command line surface"""

    @staticmethod
    def handle_cli(func: F) -> F:
        """Turn library errors into a JSON diagnostic on stderr and a distinct exit code"""
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return func(*args, **kwargs)
            except typer.Exit:
                raise
            except VersionCIError as e:
                debug_logger.log_error(e, f"Command failed: {func.__name__}")
                ErrorHandler.report(e.to_dict())
                raise typer.Exit(code=e.exit_code)
            except Exception as e:
                debug_logger.log_error(e, f"Unexpected failure in {func.__name__}")
                ErrorHandler.report({'error': type(e).__name__, 'message': str(e), 'details': {}})
                raise typer.Exit(code=1)
        return wrapper  # type: ignore[return-value]

    @staticmethod
    def report(payload: Dict[str, Any]) -> None:
        stderr_console.print(json.dumps(payload, sort_keys=True, default=str), markup=False)

    @staticmethod
    def validate_input_file(path: str, allowed_extensions: Optional[Iterable[str]] = None,
                            max_size_mb: float = 512) -> Tuple[bool, str]:
        """Validate an input file before parsing it"""
        if not path:
            return False, "No file given"

        if not os.path.isfile(path):
            return False, f"File not found: {path}"

        if allowed_extensions:
            extension = path.rsplit('.', 1)[-1].lower() if '.' in path else ''
            allowed = [ext.lower() for ext in allowed_extensions]
            if extension not in allowed:
                return False, f"Invalid file type. Allowed: {', '.join(allowed)}"

        if os.path.getsize(path) > max_size_mb * 1024 * 1024:
            return False, f"File too large. Maximum size: {max_size_mb}MB"

        if not os.access(path, os.R_OK):
            return False, f"File is not readable: {path}"

        return True, "Valid file"

    @staticmethod
    def require_input_file(path: str, allowed_extensions: Optional[Iterable[str]] = None) -> None:
        ok, message = ErrorHandler.validate_input_file(path, allowed_extensions)
        if not ok:
            raise InputFileError(message, {'path': str(path)})

    @staticmethod
    def validate_data_structure(data: Any, required_fields: Iterable[str],
                                data_name: str = "Data") -> Tuple[bool, str]:
        """Validate that a mapping has the required fields"""
        if not isinstance(data, dict):
            return False, f"{data_name} must be a dictionary"

        missing_fields = [field for field in required_fields if field not in data]
        if missing_fields:
            return False, f"Missing required fields in {data_name}: {', '.join(missing_fields)}"

        return True, f"{data_name} structure is valid"


error_handler = ErrorHandler()
