"""
Top-level handlers turning exceptions into the unified error payload and an exit code
"""
import argparse
import json
import sys
from typing import NoReturn, Optional, TextIO

from mttrack.core.exceptions import BaseTrackingException, UsageError, handle_exception


def tracking_exception_handler(exc: BaseTrackingException, stream: Optional[TextIO] = None) -> int:
    """Write the error payload to stderr and return the process exit code"""
    stream = stream or sys.stderr
    stream.write(json.dumps({"error": exc.to_dict()}, default=str) + "\n")
    return exc.exit_code


def general_exception_handler(exc: Exception, context: Optional[str] = None, stream: Optional[TextIO] = None) -> int:
    """Handle all other exceptions"""
    return tracking_exception_handler(handle_exception(exc, context=context), stream)


class RaisingArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as UsageError (exit code 1) instead of exiting with 2"""

    def error(self, message: str) -> NoReturn:
        raise UsageError(
            user_message=f"{self.prog}: {message}",
            details={"usage": self.format_usage().strip()}
        )
