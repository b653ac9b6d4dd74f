"""Shared exception types."""


class BabelkitError(Exception):
    """Base class for toolkit errors."""


class ValidationError(BabelkitError):
    """Input or invariant violation.

    Carries every violation found, not only the first, so callers can
    report a complete diagnosis in one pass.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class MalformedLineError(BabelkitError):
    """A JSONL input line could not be parsed; carries the line number."""

    def __init__(self, lineno, detail):
        self.lineno = lineno
        self.detail = detail
        super().__init__(f"line {lineno}: {detail}")
