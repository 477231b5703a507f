"""Exception hierarchy shared by every module.

Each class carries a ``category`` string; the command-line front end prints it
as the machine-parsable failure kind.
"""


class GroundingError(Exception):
    category = "error"


class ShapeError(GroundingError, ValueError):
    category = "shape"


class ContractError(GroundingError, ValueError):
    category = "contract"


class FormatError(GroundingError, ValueError):
    category = "format"

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class IngestionError(GroundingError):
    category = "ingestion"


class CheckpointError(GroundingError):
    category = "checkpoint"


class DivergenceError(GroundingError, FloatingPointError):
    category = "divergence"

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(f"{message} (epoch={epoch}, batch={batch})")
        self.epoch = epoch
        self.batch = batch


class InsufficientDataError(GroundingError):
    category = "coverage"

    def __init__(self, message, coverage=None):
        super().__init__(message if coverage is None else f"{message} (coverage={coverage:.4f})")
        self.coverage = coverage


class OOVError(GroundingError, KeyError):
    category = "lookup"

    def __str__(self):
        return str(self.args[0]) if self.args else "out of vocabulary"


class ConfigError(GroundingError):
    category = "config"
