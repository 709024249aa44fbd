import html
import re
import uuid
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional


# Custom Exception Classes
class BaseCustomException(Exception):
    """Base exception class for custom exceptions"""

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}
        self.timestamp = datetime.now(timezone.utc)
        self.error_id = str(uuid.uuid4())
        super().__init__(self.message)


class InvalidArgumentError(BaseCustomException, ValueError):
    """Invalid input: bad shapes, radii, ranges or non-finite values"""

    def __init__(
        self,
        message: str,
        error_code: str = "INVALID_ARGUMENT",
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message, error_code, details)


class ShapeMismatchError(InvalidArgumentError):
    """Array shape does not match the grid it is applied to"""

    def __init__(self, expected: Any, actual: Any, what: str = "array"):
        message = f"{what} has shape {tuple(actual)}, expected {tuple(expected)}"
        super().__init__(
            message,
            "SHAPE_MISMATCH",
            {"what": what, "expected": list(expected), "actual": list(actual)},
        )


class NumericalDomainError(BaseCustomException, ArithmeticError):
    """A numerical precondition does not hold (non-positive diagonal, non-SPD matrix)"""

    def __init__(
        self,
        message: str,
        error_code: str = "NUMERICAL_DOMAIN",
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message, error_code, details)


class ConvergenceError(NumericalDomainError):
    """Iterative solver stopped before reaching its tolerance"""

    def __init__(self, solver: str, iterations: int, residual: float, tolerance: float):
        message = f"{solver} did not converge after {iterations} iterations (residual {residual:.3e} > {tolerance:.1e})"
        super().__init__(
            message,
            "NOT_CONVERGED",
            {"solver": solver, "iterations": iterations, "residual": residual, "tolerance": tolerance},
        )


class FitDivergedError(NumericalDomainError):
    """Maximum-likelihood fit produced a non-finite objective"""

    def __init__(self, iteration: int, trace: List[float]):
        message = f"Fit diverged at iteration {iteration}"
        super().__init__(message, "FIT_DIVERGED", {"iteration": iteration, "trace": list(trace)})
        self.trace = list(trace)


class CapacityError(BaseCustomException):
    """Problem is larger than a guard rail allows"""

    def __init__(self, what: str, size: int, limit: int):
        message = f"{what} size {size} exceeds the limit of {limit}"
        super().__init__(message, "CAPACITY_EXCEEDED", {"what": what, "size": size, "limit": limit})


class DegenerateConditioningError(InvalidArgumentError):
    """Conditioning leaves no unknown pixels to solve for"""

    def __init__(self, message: str = "Every pixel is known; the unknown block is empty"):
        super().__init__(message, "DEGENERATE_CONDITIONING")


class GridFormatError(BaseCustomException):
    """Malformed GMAP, CSV or model sidecar file"""

    def __init__(self, path: Any, reason: str):
        message = f"Cannot read {path}: {reason}"
        super().__init__(message, "GRID_FORMAT_ERROR", {"path": str(path), "reason": reason})


def sanitize_log_input(input_str: str) -> str:
    """Sanitize input for logging to prevent log injection"""
    if not isinstance(input_str, str):
        input_str = str(input_str)

    # Remove or replace newline characters and other control characters
    sanitized = re.sub(r"[\r\n\t\x00-\x1f\x7f-\x9f]", " ", input_str)
    sanitized = html.escape(sanitized)
    # Limit length to prevent log flooding
    return sanitized[:1000] if len(sanitized) > 1000 else sanitized
