class GyroCalError(Exception):
    """Base class for all errors raised by gyrocal."""


class InvalidArgumentError(GyroCalError, ValueError):
    pass


class ShapeError(InvalidArgumentError):
    pass


class DatasetLoadError(GyroCalError):
    """Raised when a recording or manifest cannot be loaded.

    The message always names the offending file and, when known, the line.
    """

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


class TrainingDivergedError(GyroCalError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}, batch {batch}")
