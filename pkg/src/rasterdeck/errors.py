"""Shared exception hierarchy.

Every error carries a ``category`` so the service layer can map it to an
HTTP status and the CLI can map it to a stable exit code:

    io         -> exit 2   (unreadable inputs, missing files)
    validation -> exit 3   (schema violations, consistency checks)
    backend    -> exit 4   (VLM backend, uploader, presentation service)
    generic    -> exit 1
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ValidationIssue:
    """One violated constraint in a region document."""

    field: str
    message: str
    region_id: str | None = None

    def describe(self) -> str:
        if self.region_id is not None:
            return f"region '{self.region_id}', field '{self.field}': {self.message}"
        return f"field '{self.field}': {self.message}"


class RasterdeckError(Exception):
    category = "generic"


class InputIOError(RasterdeckError):
    category = "io"


class ConsistencyError(RasterdeckError):
    """Inputs disagree with each other (e.g. layout dims vs. actual image)."""

    category = "validation"


class LayoutValidationError(RasterdeckError):
    """Raised by strict parsing; carries every detected violation."""

    category = "validation"

    def __init__(self, issues: list[ValidationIssue]):
        self.issues = list(issues)
        summary = "; ".join(i.describe() for i in self.issues[:5])
        if len(self.issues) > 5:
            summary += f"; ... ({len(self.issues)} issues total)"
        super().__init__(f"layout validation failed: {summary}")


class BackendError(RasterdeckError):
    """VLM backend transport or protocol failure."""

    category = "backend"


class ExtractionFailedError(RasterdeckError):
    """Retries exhausted without a schema-valid response."""

    category = "backend"

    def __init__(self, attempts: int, issues: list[ValidationIssue]):
        self.attempts = attempts
        self.issues = list(issues)
        super().__init__(
            f"extraction failed after {attempts} attempt(s); "
            f"last response had {len(self.issues)} schema violation(s)"
        )


class UploadError(RasterdeckError):
    category = "backend"


class SlidesServiceError(RasterdeckError):
    """Presentation service rejected the batch or was unreachable."""

    category = "backend"

    def __init__(self, message: str, request_index: int | None = None,
                 conflicting_ids: list[str] | None = None):
        self.request_index = request_index
        self.conflicting_ids = list(conflicting_ids or [])
        super().__init__(message)
