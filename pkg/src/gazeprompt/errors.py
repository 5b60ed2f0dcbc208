"""Exception hierarchy.

Data problems derive from :class:`DataError` and transport problems from
:class:`TransportError`; the CLI maps the two families to distinct exit codes.
"""


class GazePromptError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(GazePromptError):
    """Invalid configuration (plan, dataset spec, style, model config)."""


class DataError(GazePromptError):
    pass


class SchemaMismatch(DataError):
    pass


class EmptyTrace(DataError):
    pass


class UnitViolation(DataError):
    pass


class TraceTooShort(DataError):
    pass


class NoValidSamples(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NoFixations(DataError):
    pass


class NoEvents(DataError):
    pass


class EventWindowMismatch(DataError):
    pass


class ExampleLabelMismatch(DataError):
    pass


class InsufficientData(DataError):
    def __init__(self, label, message=None):
        self.label = label
        super().__init__(message or f"not enough windows for class {label!r}")


class PoolTooLarge(DataError):
    pass


class ScriptMiss(DataError):
    pass


class TransportError(GazePromptError):
    """Failure talking to a model endpoint."""


class AuthError(TransportError):
    pass


class RateLimited(TransportError):
    pass


class MalformedReply(TransportError):
    pass
