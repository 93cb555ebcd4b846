"""Error taxonomy shared by the core services and the wire layer.

Every user-facing failure carries a small numeric code (HTTP-flavored) so
the RPC envelope and the CLI exit-code mapping stay in one place.
"""

from __future__ import annotations

from typing import Any


class CoreError(Exception):
    """Base class for errors that cross the service boundary."""

    code = 500

    def __init__(self, message: str, data: Any = None):
        super().__init__(message)
        self.message = message
        self.data = data

    def envelope(self) -> dict:
        err: dict[str, Any] = {"code": self.code, "message": self.message}
        if self.data is not None:
            err["data"] = self.data
        return err


class ValidationError(CoreError):
    """Malformed document, bad params, or a model invariant violation."""

    code = 400


class NotFoundError(CoreError):
    code = 404


class ConflictError(CoreError):
    """Optimistic-concurrency loss or an illegal lifecycle transition."""

    code = 409


class UnrealizableError(CoreError):
    """No embedding exists (or the engine gave up without backtracking)."""

    code = 422


class InUseError(CoreError):
    """Decommission blocked by live reservations or materializations."""

    code = 423


class ImpactError(CoreError):
    """Simple-mode removal would degrade surviving resources."""

    code = 424


class BudgetExhaustedError(CoreError):
    """Complete solver ran out of its node/time budget."""

    code = 408


class SpaceExhaustedError(CoreError):
    """An identifier pool (VNI, tag range) has no free values."""

    code = 507
