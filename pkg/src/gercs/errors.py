"""Exception types shared across the toolkit."""


class GERError(Exception):
    """Base class for all toolkit errors."""


class EmptyReference(GERError):
    pass


class EmptyNBest(GERError):
    pass


class DuplicateUtterance(GERError):
    pass


class ParseError(GERError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateHypothesis(GERError):
    pass


class MissingSystem(GERError):
    pass


class ContextOverflow(GERError):
    def __init__(self, length: int, max_context: int, utt_id: str | None = None):
        self.length = length
        self.max_context = max_context
        self.utt_id = utt_id
        where = f" for utterance {utt_id!r}" if utt_id is not None else ""
        super().__init__(f"sequence of {length} tokens exceeds context {max_context}{where}")


class UnknownToken(GERError):
    def __init__(self, surface: str):
        self.surface = surface
        super().__init__(f"token {surface!r} is not in the vocabulary")


class AlreadyAdapted(GERError):
    pass


class NotAdapted(GERError):
    pass


class SplitTooLarge(GERError):
    pass
