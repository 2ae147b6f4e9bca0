"""Shared error type carrying a machine-readable code and context."""

from __future__ import annotations


class BeatPlanError(Exception):
    """Raised for any recoverable pipeline failure.

    `code` is a stable kebab-case identifier, `context` holds whatever
    structured detail the failing stage can offer (row numbers, atom ids,
    factor names). The CLI serializes both into its error JSON.
    """

    def __init__(self, message: str, *, code: str = "error", context: dict | None = None):
        super().__init__(message)
        self.code = code
        self.context = context or {}

    def to_json(self, stage: str) -> dict:
        return {
            "stage": stage,
            "code": self.code,
            "message": str(self),
            "context": self.context,
        }
