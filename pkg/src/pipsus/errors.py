"""Exception types shared across the package.

Each class carries a ``category`` string that the CLI prints on failure so
callers can parse the error kind from a single line.
"""


class PipsusError(Exception):
    category = "Error"


class NotFound(PipsusError, FileNotFoundError):
    category = "NotFound"


class FormatError(PipsusError, ValueError):
    category = "FormatError"


class InvalidArgument(PipsusError, ValueError):
    category = "InvalidArgument"


class WeightsError(PipsusError):
    category = "WeightsError"


class EmptyLabels(PipsusError):
    category = "EmptyLabels"


class TrainingDiverged(PipsusError, FloatingPointError):
    category = "TrainingDiverged"

    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss
