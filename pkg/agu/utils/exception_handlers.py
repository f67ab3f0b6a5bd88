import logging
import sys
from datetime import datetime, timezone
from typing import Callable, TextIO

from pydantic import ValidationError

from agu.schemas.error import ErrorResponse, ValidationErrorResponse
from agu.utils.exceptions import AGUError

# Set up logging
logger = logging.getLogger(__name__)


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def agu_exception_handler(exc: AGUError, stream: TextIO) -> int:
    """
    Handle AGUError and its subclasses.

    Args:
        exc: The AGUError that was raised
        stream: Where the structured error report is written

    Returns:
        The process exit code carried by the exception
    """
    logger.error(f"{exc.error_code}: {exc.message}")

    response = ErrorResponse(
        detail=exc.message,
        error_code=exc.error_code,
        exit_code=exc.exit_code,
        timestamp=_timestamp(),
        context=exc.context(),
    )
    stream.write(response.model_dump_json() + "\n")
    return exc.exit_code


def validation_exception_handler(exc: ValidationError, stream: TextIO) -> int:
    """
    Handle pydantic ValidationError raised while building run configurations.
    """
    logger.warning(f"Validation error: {exc}")

    errors = []
    for error in exc.errors():
        errors.append({
            "loc": list(error["loc"]),
            "msg": error["msg"],
            "type": error["type"],
            "input": repr(error.get("input", "N/A")),
        })

    response = ValidationErrorResponse(detail=errors)
    stream.write(response.model_dump_json() + "\n")
    return response.exit_code


def general_exception_handler(exc: Exception, stream: TextIO) -> int:
    """
    Handle unexpected exceptions.
    """
    logger.error(f"General error: {exc}", exc_info=exc)

    response = ErrorResponse(
        detail=f"An internal error occurred: {exc}",
        error_code="INTERNAL_ERROR",
        exit_code=2,
        timestamp=_timestamp(),
    )
    stream.write(response.model_dump_json() + "\n")
    return response.exit_code


_HANDLERS: list[tuple[type, Callable[[Exception, TextIO], int]]] = [
    (AGUError, agu_exception_handler),
    (ValidationError, validation_exception_handler),
    (Exception, general_exception_handler),
]


def handle_exception(exc: Exception, stream: TextIO | None = None) -> int:
    """
    Dispatch an exception to the first registered handler matching its type.

    Returns:
        The exit code the CLI should terminate with.
    """
    stream = stream if stream is not None else sys.stderr
    for exc_type, handler in _HANDLERS:
        if isinstance(exc, exc_type):
            return handler(exc, stream)
    return general_exception_handler(exc, stream)
