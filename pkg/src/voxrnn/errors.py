"""Exception taxonomy shared by all voxrnn modules."""


class VoxError(Exception):
    """Base class for all voxrnn errors."""


class ShapeError(VoxError):
    """Operand shapes do not conform."""


class ParameterError(VoxError):
    """A configuration value or argument is outside its allowed range."""


class DataError(VoxError):
    """Token ids, file contents, or record fields are invalid."""


class EmptyLossError(DataError):
    """A loss was requested over zero masked-in positions."""


class OracleError(VoxError):
    """A reference oracle hit a non-finite value and cannot certify anything."""


class CapacityError(VoxError):
    """A record exceeds a configured budget."""


class TrainingError(VoxError):
    """Training hit a non-finite loss or gradient; carries the offending context."""


class ConfigError(VoxError):
    """Model, checkpoint, or codec configurations do not agree."""


class UsageError(VoxError):
    """An API was called out of protocol (e.g. backward without a cached forward)."""


class ConsumerError(VoxError):
    """An incremental token consumer raised; ``partial`` holds what was generated."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
