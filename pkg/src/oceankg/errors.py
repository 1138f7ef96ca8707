"""Exception hierarchy shared across the package."""


class OceanKGError(Exception):
    """Base class for all package errors."""


class ParseError(OceanKGError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class ReferentialIntegrityError(OceanKGError):
    pass


class PreconditionError(OceanKGError):
    pass


class EntityLookupError(OceanKGError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ShapeError(OceanKGError, ValueError):
    pass


class ConfigurationError(OceanKGError, ValueError):
    pass


class DegenerateGraphError(OceanKGError):
    pass


class EncoderError(OceanKGError):
    pass


class ContextLengthError(OceanKGError):
    pass


class EmptySequenceError(OceanKGError):
    pass


class EmptyDatasetError(OceanKGError):
    pass


class InsufficientDataError(OceanKGError):
    pass


class TrainingDivergedError(OceanKGError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class ExportError(OceanKGError):
    pass
