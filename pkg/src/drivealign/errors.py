"""Exception hierarchy shared across the package."""


class DriveAlignError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DriveAlignError):
    """An operation received data violating its preconditions."""


class SchemaError(DriveAlignError):
    """A persisted document failed schema or version validation."""


class ConfigurationError(DriveAlignError):
    """Policy/planner/pipeline configuration is incomplete or inconsistent."""


class UndefinedRatioError(DriveAlignError):
    """A speed ratio is undefined because the initial speed is near zero."""


class GenerationError(DriveAlignError):
    """Synthetic corpus generation could not satisfy its constraints."""


class MissingArtifactError(DriveAlignError):
    """A required file (checkpoint, manifest, scenario) was not found."""
