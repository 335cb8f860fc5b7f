"""Exception hierarchy for the engine.

Every failure the library raises deliberately derives from EngineError so the
CLI can map it to a nonzero exit code without catching bare Exception.
"""


class EngineError(Exception):
    """Base class for all structured engine failures."""


class ShapeError(EngineError):
    """Tensor extents incompatible with the requested operation."""


class GeometryError(EngineError):
    """Spatial geometry (stride/padding/output extents) is invalid."""


class ConfigError(EngineError):
    """A configuration value violates its contract."""


class DataError(EngineError):
    """Numerical content is invalid (e.g. negative variance)."""


class StateError(EngineError):
    """Operation requires state that is not present (e.g. unloaded weights)."""


class InputError(EngineError):
    """External input (image file, tensor file) cannot be used."""


class StoreError(EngineError):
    """Base class for weight-container failures."""


class FormatError(StoreError):
    """File is not a weight container (bad magic or malformed header)."""


class VersionError(StoreError):
    """Weight container version is not supported."""


class CorruptionError(StoreError):
    """Weight container is structurally valid but the payload is damaged."""
