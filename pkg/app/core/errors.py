"""
Error types for foliashadow
Every numeric service raises one of these; the api layer turns them into report entries
"""

from typing import Any, Dict, Optional


class FoliashadowError(Exception):
    """Base error with a human-readable detail and an optional JSON payload"""

    def __init__(self, detail: str, payload: Optional[Dict[str, Any]] = None):
        super().__init__(detail)
        self.detail = detail
        self.payload = payload or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "detail": self.detail, "payload": self.payload}


# Geometry / input errors
class InvalidInput(FoliashadowError):
    pass

class EmptySet(FoliashadowError):
    pass

class Unsupported(FoliashadowError):
    pass


# Map construction errors
class InversionFailure(FoliashadowError):
    """Fixed-point inversion did not converge (perturbation too large)"""

class SupportOverlap(FoliashadowError):
    pass

class NotInvertible(FoliashadowError):
    pass

class NotInvariant(FoliashadowError):
    """The map does not permute the leaves; payload carries a witness point"""


# Search errors
class ShadowNotFound(FoliashadowError):
    """No layered path (or no re-validated candidate) at this grid resolution"""

NotFound = ShadowNotFound

class LeafReturnFailed(FoliashadowError):
    pass

class EmptyImage(FoliashadowError):
    pass

class MissingSample(FoliashadowError):
    pass

class Timeout(FoliashadowError):
    pass

class NotCertified(FoliashadowError):
    pass


# Configuration errors (exit code 2)
class ConfigError(FoliashadowError):
    pass
