"""
Utility functions for error handling in commands
"""
from functools import wraps
from typing import Callable, Optional
from mttrack.core.exceptions import handle_exception, BaseTrackingException
import logging

logger = logging.getLogger(__name__)


def handle_cli_errors(context: Optional[str] = None):
    """
    Decorator to convert exceptions raised inside a command into typed tracking errors.

    Usage:
        @handle_cli_errors(context="training")
        def cmd_train(args):
            ...
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except BaseTrackingException:
                # Re-raise typed exceptions as-is
                raise
            except Exception as e:
                raise handle_exception(e, context=context or func.__name__) from e

        return wrapper

    return decorator
