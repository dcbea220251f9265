"""Exception hierarchy shared by every pipeline stage."""


class SeqrepError(Exception):
    """Base class for all errors raised by seqrep."""


class InvalidArgumentError(SeqrepError, ValueError):
    pass


class InvalidConfigurationError(SeqrepError, ValueError):
    pass


class TooShortInputError(SeqrepError, ValueError):
    pass


class ShapeError(SeqrepError, ValueError):
    pass


class InvalidMaskError(SeqrepError, ValueError):
    pass


class NumericalError(SeqrepError, ArithmeticError):
    pass


class SeqrepIOError(SeqrepError, OSError):
    """I/O failure; the message always names the offending path."""


class CorruptFileError(SeqrepError):
    """Bad magic, truncation or checksum mismatch in a binary file."""


class CorruptCheckpointError(CorruptFileError):
    pass


class CorruptContainerError(CorruptFileError):
    pass


class VersionMismatchError(SeqrepError):
    pass


class IncompatibleCheckpointError(SeqrepError):
    pass


class DuplicateInstanceError(SeqrepError):
    pass


class FusionMismatchError(SeqrepError):
    def __init__(self, message, offending_ids=()):
        super().__init__(message)
        self.offending_ids = sorted(offending_ids)


class MetadataConflictError(SeqrepError):
    pass


class MissingMetadataError(SeqrepError):
    pass
