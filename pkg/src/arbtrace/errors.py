"""Exception hierarchy used across the package."""


class ArbtraceError(Exception):
    """Base class for all arbtrace errors."""


class UnknownToken(ArbtraceError):
    """A token id does not belong to the pool it was used with."""


class EmptyPool(ArbtraceError):
    """A swap or rate query hit a pool with a zero reserve."""


class MissingPool(ArbtraceError):
    """A pool id is not present in the world state."""


class BrokenCycle(ArbtraceError):
    """A route's hops do not form a closed token cycle."""


class NotACycle(ArbtraceError):
    """A transaction's swaps cannot be read as a closed arbitrage route."""


class PositionOutOfRange(ArbtraceError):
    """A position does not fall inside the chain segment."""


class UnknownHash(ArbtraceError):
    """A transaction hash is not present in the referenced range."""


class MissingPrice(ArbtraceError):
    """An asset has no entry in the price table."""


class TooManyCandidates(ArbtraceError):
    """Candidate set exceeds the exact-enumeration bound."""


class MismatchedEvent(ArbtraceError):
    """Two attribution results refer to different arbitrage events."""


class InfeasibleSpec(ArbtraceError):
    """A scenario spec cannot be realized (e.g. unreachable imbalance)."""


class GroundTruthMismatch(ArbtraceError):
    """Ground-truth file references an arbitrage hash absent from results."""


class ParseError(ArbtraceError):
    """An input file failed to parse."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(message + loc)
        self.path = path
        self.line = line
