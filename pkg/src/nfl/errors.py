"""Exception taxonomy shared across the pipeline.

ConfigError subclasses map to CLI exit code 3, UnsatisfiableError
subclasses to exit code 2.
"""


class EngineError(Exception):
    """Base class for all engine failures."""


class ConfigError(EngineError):
    """Bad input: manifests, flags, schemas, malformed programs."""


class UnsatisfiableError(EngineError):
    """The task admits no solution (uncoverable example, empty space, ...)."""


class ParseError(ConfigError):
    def __init__(self, msg, line=None, col=None):
        self.line = line
        self.col = col
        loc = f" at {line}:{col}" if line is not None else ""
        super().__init__(f"syntax error{loc}: {msg}")


class ReservedPredicateError(ParseError):
    pass


class CyclicProgramError(ConfigError):
    pass


class UnsafeVariableError(ConfigError):
    pass


class GroundingLimitError(EngineError):
    pass


class TaskValidationError(ConfigError):
    pass


class UncoverableExampleError(UnsatisfiableError):
    pass


class UncoveredKeyError(UnsatisfiableError):
    pass


class EmptySpaceError(UnsatisfiableError):
    pass


class DivergenceError(EngineError):
    pass
