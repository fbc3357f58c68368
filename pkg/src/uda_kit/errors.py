"""Exception hierarchy shared by every stage of the toolkit."""


class UDAKitError(Exception):
    """Base class for all errors raised by uda_kit."""


class IoError(UDAKitError, OSError):
    """A file could not be opened, read or written."""


class FormatError(UDAKitError, ValueError):
    """A file exists but its content violates the expected binary layout."""


class CountMismatch(UDAKitError, ValueError):
    pass


class LengthMismatch(UDAKitError, ValueError):
    pass


class UnmappedClass(UDAKitError, KeyError):
    """A semantic id has no entry in the active class map."""

    def __init__(self, class_id, index):
        self.class_id = int(class_id)
        self.index = int(index)
        super().__init__(f"semantic id {self.class_id} (first seen at index {self.index}) is not in the class map")

    def __str__(self):
        return self.args[0]


class DegenerateInput(UDAKitError, ValueError):
    pass


class EmptyResult(UDAKitError, ValueError):
    pass


class EmptySegment(UDAKitError, ValueError):
    pass


class InsufficientBatch(UDAKitError, ValueError):
    pass


class AllIgnored(UDAKitError, ValueError):
    pass


class EmptyEnsemble(UDAKitError, ValueError):
    pass


class MissingPrediction(UDAKitError, FileNotFoundError):
    def __init__(self, scan, model, path=None):
        self.scan = scan
        self.model = model
        msg = f"missing prediction for scan {scan!r} from model {model!r}"
        if path is not None:
            msg += f" ({path})"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


class MissingFile(UDAKitError, FileNotFoundError):
    pass


class NoDefinedClasses(UDAKitError, ValueError):
    pass


class EmptyMatrix(UDAKitError, ValueError):
    pass


class ZeroRangePoint(UDAKitError, ValueError):
    pass


class ConfigError(UDAKitError, ValueError):
    pass
