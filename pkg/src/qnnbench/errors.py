"""Exception types shared across the package.

Plain argument validation raises ValueError; these classes cover failures
that callers (CLI exit codes, sweep status rows) need to tell apart.
"""


class QnnBenchError(Exception):
    """Base class for package-specific failures."""


class ShapeError(QnnBenchError):
    """Tensor dimensions do not match the operation's contract."""


class FormatError(QnnBenchError):
    """A serialized file is malformed. Carries the byte offset of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncationError(FormatError):
    """File ends before the payload announced by its header."""


class PairingError(FormatError):
    """Image and label files disagree on the number of records."""


class VersionError(QnnBenchError):
    """Container format version is not supported by this build."""


class CompileError(QnnBenchError):
    """The network cannot be lowered to an integer-only graph as given."""


class DegenerateChannelError(CompileError):
    """A per-channel scale of zero makes threshold folding impossible."""


class DivergedError(QnnBenchError):
    """Training produced a non-finite loss. Carries the offending epoch."""

    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss ({loss!r}) at epoch {epoch}")
        self.epoch = epoch
