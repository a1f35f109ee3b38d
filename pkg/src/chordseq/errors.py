"""Exception types shared across the package."""


class ChordParseError(ValueError):
    """A chord label could not be parsed.

    ``position`` is the 0-based character offset where parsing failed.
    """

    def __init__(self, label: str, position: int, reason: str):
        self.label = label
        self.position = position
        self.reason = reason
        super().__init__(f"cannot parse chord label {label!r} at position {position}: {reason}")


class LabFormatError(ValueError):
    """Malformed or inconsistent .lab content; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class TimelineError(ValueError):
    pass


class TokenizationError(ValueError):
    pass


class DecodeError(ValueError):
    """Ungrammatical token sequence; ``position`` indexes the offending token."""

    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (token position {position})")


class CheckpointError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass
