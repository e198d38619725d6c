"""Exception hierarchy shared across the engine."""


class CtxmemError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CtxmemError):
    """Embedding dimensions disagree (with each other or with the store)."""


class EmptyInputError(CtxmemError):
    """An operation that needs at least one element got none."""


class FormatError(CtxmemError):
    """A file or wire payload does not conform to its documented format.

    ``record`` carries the offending record index when one applies.
    """

    def __init__(self, message: str, record: int | None = None):
        super().__init__(message)
        self.record = record


class ValidationError(CtxmemError):
    """Arguments violate a documented precondition."""


class ModalityError(CtxmemError):
    """Modality/URI combination is inconsistent (text must have no URI, non-text must have one)."""


class NotFoundError(CtxmemError):
    """Referenced id or name does not exist."""


class DuplicateError(CtxmemError):
    """Id already present in the store."""


class InvalidNodeError(CtxmemError):
    """Tree operation applied to a node of the wrong kind."""


class EmptySearchError(CtxmemError):
    """Search over an empty store."""


class StaleIndexError(CtxmemError):
    """The contextual tree was built from a different tag set than the memory currently holds."""


class OrderError(CtxmemError):
    """Append-only log received a timestamp older than the last entry."""


class DateError(CtxmemError):
    """Malformed date string or inverted date range."""


class SectionError(CtxmemError):
    """Unknown in-context memory section (valid: persona, human)."""


class NoMatchError(CtxmemError):
    """core_memory_replace found no exact occurrence of old_content."""


class BudgetError(CtxmemError):
    """The token budget cannot be satisfied by evicting messages."""


class UnknownFunctionError(CtxmemError):
    """Dispatch envelope names a function that is not registered."""


class UnknownToolError(CtxmemError):
    """A tool-backed function has no registered tool implementation."""


class ArgumentError(CtxmemError):
    """Envelope arguments violate the registered schema."""
