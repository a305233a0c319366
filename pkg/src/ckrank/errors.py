"""Exception types shared across the package."""


class CkError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class EmptyCorpus(CkError):
    pass


class EmptyDocument(CkError):
    pass


class ShapeMismatch(CkError):
    pass


class NonFinite(CkError):
    pass


class NonScalarLoss(CkError):
    pass


class AllMasked(CkError):
    pass


class NoPositives(CkError):
    pass


class UnknownDocument(CkError):
    pass


class NonPositiveImpact(CkError):
    pass


class FormatError(Exception):
    """Malformed input file (CLI exit code 2). Message names the file/line."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}: "
            if line is not None:
                where = f"{path}:{line}: "
        super().__init__(where + message)
