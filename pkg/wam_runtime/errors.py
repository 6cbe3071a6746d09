"""
Exception hierarchy shared by every runtime module
"""


class WamRuntimeError(Exception):
    """Base class for runtime failures"""


class InputValidationError(WamRuntimeError, ValueError):
    """An argument violates an operation's precondition"""


class ConfigError(InputValidationError):
    """A configuration file or startup bound is invalid"""


class WorkerError(WamRuntimeError):
    """The real-time inference worker failed"""
