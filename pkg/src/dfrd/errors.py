"""Exception types shared across the package."""


class DfrdError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DfrdError, ValueError):
    pass


class InvalidConfigError(DfrdError, ValueError):
    pass


class TrainingDivergedError(DfrdError, ArithmeticError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class TransferError(DfrdError):
    """A teacher could not answer a query (transport loss, remote error)."""

    def __init__(self, message, seq=None):
        if seq is not None:
            message = f"query #{seq}: {message}"
        super().__init__(message)
        self.seq = seq


class ProtocolError(DfrdError):
    def __init__(self, code, message, seq=None):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.msg = message
        self.seq = seq


class IncompleteFrame(DfrdError):
    """Raised by the decoder when a line is not yet terminated; read more bytes."""
