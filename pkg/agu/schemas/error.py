from pydantic import BaseModel, Field
from typing import Optional


class ErrorResponse(BaseModel):
    """
    Schema for error reports written to stderr.
    """
    detail: str
    error_code: Optional[str] = None
    exit_code: int = 2
    timestamp: Optional[str] = None
    context: dict = Field(default_factory=dict)


class ValidationErrorResponse(BaseModel):
    """
    Schema for configuration validation error reports.
    """
    detail: list
    error_code: str = "VALIDATION_ERROR"
    exit_code: int = 1
