"""Exception types raised across the package."""


class CodeCascadeError(Exception):
    """Base class for data and model errors (CLI exit code 2)."""


class EmptyAfterTokenize(CodeCascadeError, ValueError):
    pass


class ParseError(CodeCascadeError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AllMaskedRow(CodeCascadeError, ValueError):
    pass


class EmptySequence(CodeCascadeError, ValueError):
    pass


class DimensionMismatch(CodeCascadeError, ValueError):
    pass


class SequenceTooLong(CodeCascadeError, ValueError):
    pass


class NonFiniteScore(CodeCascadeError, ValueError):
    pass


class InsufficientCandidates(CodeCascadeError, ValueError):
    pass


class StartBeyondCorpus(CodeCascadeError, ValueError):
    pass


class EmptyCodebase(CodeCascadeError, ValueError):
    def __init__(self, message: str = "codebase is empty", code_id: int | None = None):
        super().__init__(message)
        self.code_id = code_id


class FormatError(CodeCascadeError, ValueError):
    pass


class EmptyEvaluation(CodeCascadeError, ValueError):
    pass


class MissingGold(CodeCascadeError, KeyError):
    def __init__(self, code_id: int):
        super().__init__(f"gold code id {code_id} not present in the codebase")
        self.code_id = code_id


class FingerprintMismatchWarning(UserWarning):
    """Index was built from a different dual-encoder checkpoint."""
