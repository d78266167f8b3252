"""Exception hierarchy shared by all STEER modules"""

from typing import Any, Optional, Sequence


class SteerError(Exception):
    """Base class for all STEER errors"""
    pass


class DomainError(SteerError, ValueError):
    """Raised when an argument lies outside the domain of an operation"""
    pass


class IdentifiabilityError(DomainError):
    """Raised when the case/persona observation graph is disconnected"""

    def __init__(self, message: str, components: Sequence[Sequence[str]]):
        super().__init__(message)
        self.components = [list(c) for c in components]


class RatingError(SteerError):
    """Raised when a rater returns something that is not a valid level"""

    def __init__(self, message: str, raw: Any = None):
        super().__init__(message)
        self.raw = raw


class TransportError(SteerError):
    """Raised when a backend cannot be reached after all retries"""
    pass


class TemplateError(SteerError):
    """Raised when a prompt template cannot be rendered"""

    def __init__(self, message: str, placeholder: Optional[str] = None):
        super().__init__(message)
        self.placeholder = placeholder


class ExtinctionError(SteerError):
    """Raised when selection removes every persona of the pool"""
    pass


class CacheCorruptionError(SteerError):
    """Raised when a cache record cannot be decoded"""

    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path


class SchemaVersionError(SteerError):
    """Raised when a persisted file carries an unknown schema_version"""
    pass


class ReplicateError(SteerError):
    """Raised when a bootstrap metric fails on one replicate"""

    def __init__(self, message: str, replicate: int):
        super().__init__(message)
        self.replicate = replicate
