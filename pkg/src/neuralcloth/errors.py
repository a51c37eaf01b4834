"""Exception hierarchy shared by all modules."""


class ClothError(Exception):
    """Base class for every error raised by neuralcloth."""


class TopologyError(ClothError):
    pass


class NonManifoldError(TopologyError):
    pass


class WeightError(ClothError):
    pass


class DegenerateError(ClothError):
    pass


class ConfigError(ClothError):
    pass


class ShapeError(ClothError):
    pass


class NumericsError(ClothError):
    """Non-finite values; ``term`` names the offending loss term when known."""

    def __init__(self, message, term=None, frame=None):
        super().__init__(message)
        self.term = term
        self.frame = frame


class SolverError(ClothError):
    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class CheckpointError(ClothError):
    pass


class SchemaError(ConfigError):
    """Config document violates the schema; ``key_path`` locates the key."""

    def __init__(self, message, key_path=""):
        super().__init__(message)
        self.key_path = key_path


class AssetError(ClothError):
    """A referenced input file does not exist or cannot be read."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
