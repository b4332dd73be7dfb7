"""
Centralized exception handling with user-friendly error messages
"""
from typing import Optional, Dict, Any
import logging
import traceback

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SELFTEST = 3


class BaseTrackingException(Exception):
    """Base exception class for tracker errors"""

    exit_code: int = EXIT_DATA

    def __init__(
        self,
        user_message: str,
        technical_message: Optional[str] = None,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        self.user_message = user_message
        self.technical_message = technical_message
        self.error_code = error_code
        self.details = details or {}

        # Log technical details for debugging
        if technical_message:
            logger.error(
                f"Error [{error_code or 'UNKNOWN'}]: {technical_message}\n"
                f"User Message: {user_message}\n"
                f"Details: {details}\n"
                f"Traceback: {traceback.format_exc()}"
            )

        super().__init__(user_message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "message": self.user_message,
            "error_code": self.error_code,
            "details": self.details
        }


class DimensionError(BaseTrackingException):
    """Shape or rank mismatch between tensors"""

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "DIMENSION_ERROR", details)


class ContractError(BaseTrackingException):
    """A precondition of an operation was violated"""

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "CONTRACT_ERROR", details)


class InputError(BaseTrackingException):
    """Invalid frames, boxes or datasets"""

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "INPUT_ERROR", details)


class FormatError(BaseTrackingException):
    """Malformed sequence or result files"""

    def __init__(
        self,
        user_message: str,
        technical_message: Optional[str] = None,
        line: Optional[int] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        self.line = line
        details = dict(details or {})
        if line is not None:
            details["line"] = line
        super().__init__(user_message, technical_message, "FORMAT_ERROR", details)


class SpecError(BaseTrackingException):
    """Synthetic sequence settings that cannot be rendered"""

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "SPEC_ERROR", details)


class VersionError(BaseTrackingException):
    """Checkpoint written by an incompatible version or config"""

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "VERSION_ERROR", details)


class DataIOError(BaseTrackingException):
    """Filesystem errors while reading or writing artifacts"""

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "IO_ERROR", details)


class ConfigurationException(BaseTrackingException):
    """Configuration errors"""

    exit_code = EXIT_USAGE

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "CONFIG_ERROR", details)


class UsageError(BaseTrackingException):
    """Bad command-line usage"""

    exit_code = EXIT_USAGE

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "USAGE_ERROR", details)


class SelfTestFailure(BaseTrackingException):
    """One or more self-test checks failed"""

    exit_code = EXIT_SELFTEST

    def __init__(self, user_message: str, technical_message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(user_message, technical_message, "SELFTEST_FAILED", details)


# Error message mappings for common technical errors
ERROR_MAPPINGS = {
    "missing_file": {
        "patterns": ["no such file", "not found", "does not exist", "filenotfound"],
        "user_message": "A required file could not be found. Please check the paths you passed.",
        "error_code": "FILE_NOT_FOUND"
    },
    "permission": {
        "patterns": ["permission", "read-only", "access denied"],
        "user_message": "The output location is not writable. Please choose another directory.",
        "error_code": "PERMISSION_ERROR"
    },
    "disk": {
        "patterns": ["no space", "disk full"],
        "user_message": "The disk is full. Free some space and try again.",
        "error_code": "DISK_FULL"
    },
    "shape": {
        "patterns": ["shape", "broadcast", "dimension", "axis"],
        "user_message": "Tensor shapes do not line up. The checkpoint or config probably does not match the data.",
        "error_code": "DIMENSION_ERROR"
    },
    "numeric": {
        "patterns": ["overflow", "nan", "divide by zero", "floatingpoint"],
        "user_message": "A numerical problem occurred (overflow or NaN). Try a lower learning rate.",
        "error_code": "NUMERIC_ERROR"
    },
    "json": {
        "patterns": ["json", "expecting value", "decode"],
        "user_message": "A JSON file could not be parsed. Please check its contents.",
        "error_code": "JSON_ERROR"
    },
    "validation": {
        "patterns": ["validation", "invalid", "required", "missing"],
        "user_message": "Please check your input and try again.",
        "error_code": "VALIDATION_ERROR"
    },
}


def get_user_friendly_message(error: Exception, context: Optional[str] = None) -> tuple[str, str]:
    """
    Convert technical error messages to user-friendly messages.

    Returns:
        tuple[str, str]: (user_message, error_code)
    """
    error_str = str(error).lower()
    error_type = type(error).__name__.lower()

    for error_key, error_info in ERROR_MAPPINGS.items():
        for pattern in error_info["patterns"]:
            if pattern in error_str or pattern in error_type:
                return error_info["user_message"], error_info["error_code"]

    if context:
        context_lower = context.lower()
        if "train" in context_lower:
            return "Training stopped unexpectedly. Check the log for details.", "TRAIN_ERROR"
        if "track" in context_lower:
            return "Tracking stopped unexpectedly. Check the log for details.", "TRACK_ERROR"
        if "eval" in context_lower:
            return "Evaluation could not be completed. Check the log for details.", "EVAL_ERROR"

    return (
        "Something went wrong. Check the log for the technical details.",
        "UNKNOWN_ERROR"
    )


def handle_exception(error: Exception, context: Optional[str] = None) -> BaseTrackingException:
    """
    Convert a foreign exception into a typed tracking exception.

    Args:
        error: The exception that occurred
        context: Optional context about where the error occurred (e.g., "training", "writing results")
    """
    if isinstance(error, BaseTrackingException):
        return error

    user_message, error_code = get_user_friendly_message(error, context)
    technical_message = str(error) or type(error).__name__
    details = {"error_type": type(error).__name__, "context": context}

    if isinstance(error, OSError):
        return DataIOError(user_message, technical_message, details)
    if error_code == "DIMENSION_ERROR":
        return DimensionError(user_message, technical_message, details)
    if error_code in ("JSON_ERROR", "VALIDATION_ERROR"):
        return InputError(user_message, technical_message, details)

    exc = BaseTrackingException(user_message, technical_message, error_code, details)
    return exc
