"""Exception hierarchy shared by every protoalign module."""


class ProtoAlignError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(ProtoAlignError, ValueError):
    """An argument violates an operation's precondition."""


class DegenerateInputError(ProtoAlignError, ValueError):
    """Input is structurally valid but degenerate (zero vector, empty set)."""


class InvalidStateError(ProtoAlignError, RuntimeError):
    """An object is used in a state it cannot serve (e.g. a stale cache)."""


class UndefinedMetricError(ProtoAlignError, ValueError):
    """A metric is undefined for the given input (e.g. ASSD of an empty mask)."""
