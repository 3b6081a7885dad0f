from __future__ import annotations


class BugscribeError(Exception):
    """Base class for every domain error raised by the package."""


class SchemaError(BugscribeError):
    """A document does not match its schema.

    ``location`` is a JSON-pointer style path to the offending value.
    """

    def __init__(self, message: str, location: str = "") -> None:
        self.location = location or "/"
        super().__init__(f"{self.location}: {message}")


class StructuralError(BugscribeError):
    """Malformed component tree (cycle, orphan node, bad bounds)."""


class TraceError(BugscribeError):
    pass


class AppMismatchError(BugscribeError):
    pass


class MergeConflictError(BugscribeError):
    pass


class UnknownScreenError(BugscribeError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class BindingError(BugscribeError):
    pass


class MissingFixtureError(BugscribeError):
    def __init__(self, key: str, template_id: str) -> None:
        self.key = key
        self.template_id = template_id
        super().__init__(f"no replay fixture for {template_id}/{key}")


class TransportError(BugscribeError):
    pass


class FormatError(BugscribeError):
    def __init__(self, message: str, raw_text: str = "") -> None:
        self.raw_text = raw_text
        super().__init__(message)


class LocalizationError(BugscribeError):
    pass


class GenerationError(BugscribeError):
    def __init__(self, message: str, sequence: list | None = None) -> None:
        self.sequence = list(sequence or [])
        super().__init__(message)


class AssemblyError(BugscribeError):
    pass


class AssessmentError(BugscribeError):
    pass


class AgreementError(BugscribeError):
    pass


class StageError(BugscribeError):
    """Raised by the pipeline when a stage fails; wraps the original cause."""

    def __init__(self, stage: str, cause: Exception) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
