"""Exception hierarchy shared by every module in the package."""


class DhrnError(Exception):
    """Base class for all errors raised by this package."""


# signal store
class UnreadableFile(DhrnError, OSError):
    pass


class FormatMismatch(DhrnError, ValueError):
    pass


class EmptySignal(DhrnError, ValueError):
    pass


class NonFiniteSample(DhrnError, ValueError):
    pass


class ClassTooSmall(DhrnError, ValueError):
    pass


class AlreadySplit(DhrnError, ValueError):
    pass


class ManifestError(DhrnError, ValueError):
    pass


# windowing / spectra
class SignalShorterThanWindow(DhrnError, ValueError):
    pass


class NonFiniteInput(DhrnError, ValueError):
    pass


class FactorTooLarge(DhrnError, ValueError):
    pass


# layers
class ShapeMismatch(DhrnError, ValueError):
    pass


class EmptyOutput(DhrnError, ValueError):
    pass


class DegenerateBatch(DhrnError, ValueError):
    pass


class WindowLargerThanInput(DhrnError, ValueError):
    pass


class LabelOutOfRange(DhrnError, ValueError):
    pass


# model
class InvalidConfig(DhrnError, ValueError):
    pass


class StaleCache(DhrnError, RuntimeError):
    pass


class CorruptCheckpoint(DhrnError, ValueError):
    pass


class VersionMismatch(DhrnError, ValueError):
    pass


# training
class EmptySplit(DhrnError, ValueError):
    pass


class DivergenceDetected(DhrnError, RuntimeError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


# metrics
class LengthMismatch(DhrnError, ValueError):
    pass


class IndexOutOfRange(DhrnError, ValueError):
    pass


class EmptyMatrix(DhrnError, ValueError):
    pass


# synthetic data
class InvalidSpec(DhrnError, ValueError):
    pass
