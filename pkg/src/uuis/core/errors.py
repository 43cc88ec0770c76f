"""Error types shared by every service module.

Each error carries a stable machine ``code`` (kebab-case) and an optional
``detail`` (usually a field path).  The HTTP gateway maps exception classes
to status codes and resolves ``code`` to a localized message.
"""

from __future__ import annotations


class UuisError(Exception):
    """Base class for all domain errors."""

    code = "internal-error"

    def __init__(self, code: str | None = None, detail: str | None = None):
        self.code = code or type(self).code
        self.detail = detail
        super().__init__(self.code if detail is None else f"{self.code}: {detail}")


class ValidationError(UuisError):
    """Input rejected before any state change (HTTP 422)."""

    code = "validation-error"


class MissingFieldError(ValidationError):
    def __init__(self, field: str):
        super().__init__("missing-mandatory-field", field)
        self.field = field


class ImmutableFieldError(ValidationError):
    def __init__(self, field: str):
        super().__init__("immutable-field", field)
        self.field = field


class UnauthenticatedError(UuisError):
    """No valid session (HTTP 401)."""

    code = "unauthenticated"


class NotAuthorizedError(UuisError):
    """Authenticated but not allowed (HTTP 403)."""

    code = "not-authorized"


class NotFoundError(UuisError):
    """Missing or invisible to the caller; the two are indistinguishable (HTTP 404)."""

    code = "not-found"


class ConflictError(UuisError):
    """State disagrees with the attempted change (HTTP 409)."""

    code = "conflict"


class ServiceInterruptionError(UuisError):
    """Store failure; internals are never exposed to the caller (HTTP 503)."""

    code = "service-interruption"
