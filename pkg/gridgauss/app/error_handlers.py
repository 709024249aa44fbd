import json
import logging
import sys
import traceback
import uuid
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Optional, TextIO, Tuple

from pydantic import ValidationError as PydanticValidationError

from gridgauss.app.exceptions import (
    BaseCustomException,
    CapacityError,
    ConvergenceError,
    FitDivergedError,
    GridFormatError,
    InvalidArgumentError,
    NumericalDomainError,
    sanitize_log_input,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

HandlerResult = Tuple[int, Dict[str, Any]]


def _payload(
    code: str, message: str, error_id: str, timestamp: datetime, details: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    return {
        "error": {
            "code": code,
            "message": message,
            "error_id": error_id,
            "timestamp": timestamp.isoformat(),
            "details": details or {},
        }
    }


def _custom_payload(exc: BaseCustomException) -> Dict[str, Any]:
    return _payload(exc.error_code, exc.message, exc.error_id, exc.timestamp, exc.details)


def invalid_argument_handler(exc: InvalidArgumentError) -> HandlerResult:
    """Bad input: usage exit code"""
    logger.warning(
        f"Invalid argument [{exc.error_id}]: {sanitize_log_input(exc.message)}",
        extra={"error_id": exc.error_id, "error_code": exc.error_code},
    )
    return EXIT_USAGE, _custom_payload(exc)


def convergence_handler(exc: ConvergenceError) -> HandlerResult:
    """Iterative solver gave up"""
    logger.error(
        f"Solver did not converge [{exc.error_id}]: {sanitize_log_input(exc.message)}",
        extra={"error_id": exc.error_id, **exc.details},
    )
    return EXIT_FAILURE, _custom_payload(exc)


def fit_diverged_handler(exc: FitDivergedError) -> HandlerResult:
    """Fit produced a non-finite NLL; the trace goes with the diagnostic"""
    logger.error(
        f"Fit diverged [{exc.error_id}] after {len(exc.trace)} finite iterations",
        extra={"error_id": exc.error_id, "iteration": exc.details.get("iteration")},
    )
    return EXIT_FAILURE, _custom_payload(exc)


def numerical_domain_handler(exc: NumericalDomainError) -> HandlerResult:
    logger.error(
        f"Numerical failure [{exc.error_id}]: {sanitize_log_input(exc.message)}",
        extra={"error_id": exc.error_id, "error_code": exc.error_code},
    )
    return EXIT_FAILURE, _custom_payload(exc)


def capacity_handler(exc: CapacityError) -> HandlerResult:
    logger.error(
        f"Capacity exceeded [{exc.error_id}]: {sanitize_log_input(exc.message)}",
        extra={"error_id": exc.error_id, **exc.details},
    )
    return EXIT_FAILURE, _custom_payload(exc)


def grid_format_handler(exc: GridFormatError) -> HandlerResult:
    logger.error(
        f"Malformed input file [{exc.error_id}]: {sanitize_log_input(exc.message)}",
        extra={"error_id": exc.error_id, "path": sanitize_log_input(exc.details.get("path", ""))},
    )
    return EXIT_FAILURE, _custom_payload(exc)


def custom_exception_handler(exc: BaseCustomException) -> HandlerResult:
    logger.error(
        f"Command failed [{exc.error_id}]: {sanitize_log_input(exc.message)}",
        extra={"error_id": exc.error_id, "error_code": exc.error_code},
    )
    return EXIT_FAILURE, _custom_payload(exc)


def pydantic_validation_handler(exc: PydanticValidationError) -> HandlerResult:
    """Invalid configuration objects built from flags"""
    error_id = str(uuid.uuid4())
    errors = [{"loc": list(error["loc"]), "msg": error["msg"], "type": error["type"]} for error in exc.errors()]
    logger.warning(f"Validation error [{error_id}]: {errors}", extra={"error_id": error_id})
    return EXIT_USAGE, _payload(
        "INVALID_ARGUMENT", "Validation failed", error_id, datetime.now(timezone.utc), {"errors": errors}
    )


def os_error_handler(exc: OSError) -> HandlerResult:
    error_id = str(uuid.uuid4())
    logger.error(
        f"I/O error [{error_id}]: {sanitize_log_input(str(exc))}",
        extra={"error_id": error_id, "filename": sanitize_log_input(getattr(exc, "filename", "") or "")},
    )
    return EXIT_FAILURE, _payload(
        "IO_ERROR", str(exc.strerror or exc), error_id, datetime.now(timezone.utc), {"path": str(exc.filename or "")}
    )


def general_exception_handler(exc: Exception) -> HandlerResult:
    """Anything unexpected"""
    error_id = str(uuid.uuid4())
    logger.error(
        f"Unhandled exception [{error_id}]: {sanitize_log_input(str(exc))}",
        extra={
            "error_id": error_id,
            "exception_type": type(exc).__name__,
            "traceback": sanitize_log_input(traceback.format_exc()),
        },
    )
    return EXIT_FAILURE, _payload(
        "INTERNAL_ERROR", "An unexpected error occurred", error_id, datetime.now(timezone.utc)
    )


# Exception handler mapping, resolved along the exception's MRO
EXCEPTION_HANDLERS: Dict[type, Callable[[Any], HandlerResult]] = {
    InvalidArgumentError: invalid_argument_handler,
    ConvergenceError: convergence_handler,
    FitDivergedError: fit_diverged_handler,
    NumericalDomainError: numerical_domain_handler,
    CapacityError: capacity_handler,
    GridFormatError: grid_format_handler,
    BaseCustomException: custom_exception_handler,
    PydanticValidationError: pydantic_validation_handler,
    OSError: os_error_handler,
    Exception: general_exception_handler,
}


def resolve_handler(exc: BaseException) -> Callable[[Any], HandlerResult]:
    for klass in type(exc).__mro__:
        if klass in EXCEPTION_HANDLERS:
            return EXCEPTION_HANDLERS[klass]
    return general_exception_handler


def handle_exception(exc: Exception, stream: Optional[TextIO] = None) -> int:
    """
    Turn an exception into an exit code and write the diagnostic JSON.

    The diagnostic goes to ``stream`` (stderr by default) as one JSON line.
    """
    exit_code, payload = resolve_handler(exc)(exc)
    stream = stream or sys.stderr
    stream.write(json.dumps(payload, default=str) + "\n")
    stream.flush()
    return exit_code
