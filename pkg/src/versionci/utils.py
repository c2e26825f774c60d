import math
import re
from typing import Any, Optional, Tuple

from loguru import logger

from .config import get_settings
from .error_handler import DomainError

_RATIO_PATTERN = re.compile(r'^\s*(\d+)\s*:\s*(\d+)\s*$')


def parse_ratio(text: str) -> Tuple[int, int]:
    """Parse a ratio flag "X:Y" into (max controls per treated, max treated per control)"""
    match = _RATIO_PATTERN.match(text or '')
    if not match:
        raise DomainError(f"Invalid ratio {text!r}; expected X:Y with positive integers", {'ratio': text})
    controls, treated = int(match.group(1)), int(match.group(2))
    if controls < 1 or treated < 1:
        raise DomainError(f"Ratio bounds must be >= 1, got {text!r}", {'ratio': text})
    return controls, treated


def worker_count(requested: Optional[int] = None) -> int:
    """Worker count capped by VE_THREADS"""
    limit = get_settings().threads
    if requested is None:
        return limit
    return max(1, min(limit, requested))


def validate_alpha(alpha: float) -> float:
    if not (0.0 < alpha < 1.0) or math.isnan(alpha):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}", {'alpha': alpha})
    return alpha


def json_float(value: Any) -> Any:
    """JSON-safe float: infinities as "-inf"/"inf", everything else unchanged"""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            logger.warning("NaN value written to JSON as null")
            return None
    return value


def json_safe(payload: Any) -> Any:
    """Recursively apply ``json_float`` to nested dicts and lists"""
    if isinstance(payload, dict):
        return {key: json_safe(value) for key, value in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [json_safe(value) for value in payload]
    return json_float(payload)


def format_interval(lo: float, hi: float, digits: int = 3) -> str:
    """Display form of an interval: [-0.308, 0.099]"""
    def _fmt(value: float) -> str:
        if math.isinf(value):
            return "∞" if value > 0 else "−∞"
        return f"{value:.{digits}f}"
    return f"[{_fmt(lo)}, {_fmt(hi)}]"
