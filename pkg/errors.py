"""
Exception types shared by the lab modules and the exit codes the CLI maps them to
"""

from typing import Any, Optional

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_ACCEPTANCE = 4


class LabError(Exception):
    """Base class for every error raised on purpose by the lab"""
    exit_code = EXIT_IO


class InputError(LabError, ValueError):
    """Bad argument: dimension mismatch, negative time, empty grid, unknown id"""
    exit_code = EXIT_CONFIG


class ConfigError(LabError):
    """Config file could not be parsed or validated"""
    exit_code = EXIT_CONFIG

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = field or "<config>"
        if line is not None:
            location += f" (line {line})"
        super().__init__(f"{location}: {message}")


class PreconditionError(LabError):
    """An experiment refused to run, e.g. the Cameron-Martin series diverges"""
    exit_code = EXIT_PRECONDITION

    def __init__(self, message: str, verdict: Any = None):
        self.verdict = verdict
        super().__init__(message)

    def to_dict(self) -> dict:
        payload = {"error": "precondition", "message": str(self)}
        if self.verdict is not None:
            payload["verdict"] = self.verdict.to_dict()
        return payload


class AcceptanceError(LabError):
    """Self-check mode found a result outside its acceptance band"""
    exit_code = EXIT_ACCEPTANCE
