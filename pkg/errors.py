"""
Exception hierarchy for EdgeNav
All library errors derive from EdgeNavError so the CLI can map them to exit codes
"""

from typing import Optional


class EdgeNavError(Exception):
    """Base class for all EdgeNav errors"""


class DimensionError(EdgeNavError, ValueError):
    """Tensor shapes violate an operation's contract"""


class ContractError(EdgeNavError, ValueError):
    """A precondition of an operation was not met"""


class ConfigurationError(EdgeNavError, ValueError):
    """Invalid model or run configuration"""


class NumericError(EdgeNavError, ArithmeticError):
    """Non-finite values where finite ones are required"""


class DatasetError(EdgeNavError):
    """On-disk dataset is malformed"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class CheckpointError(EdgeNavError):
    """Checkpoint file cannot be read or written"""


class ChecksumError(CheckpointError):
    """Checkpoint payload does not match its integrity checksum"""


class VersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version"""


class TrainingError(EdgeNavError):
    """Training diverged"""

    def __init__(self, message: str, epoch: Optional[int] = None, batch_index: Optional[int] = None):
        super().__init__(f"{message} (epoch={epoch}, batch={batch_index})")
        self.epoch = epoch
        self.batch_index = batch_index


class UsageError(EdgeNavError):
    """Bad command-line input: missing files, invalid settings"""
