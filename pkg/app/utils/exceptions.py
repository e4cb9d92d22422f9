"""
Exception hierarchy shared by the engine, the PB controller and the CLI
"""

from typing import Any, Optional


class PBError(Exception):
    """Base class for every error raised by this package"""


class DimensionError(PBError, ValueError):
    """Tensor or vector shapes do not agree"""


class ConfigurationError(PBError, ValueError):
    """Unknown kind, ineligible layer or invalid generator parameter"""


class SpecError(ConfigurationError):
    """A NetworkSpec whose layer dimensions do not chain"""

    def __init__(self, layer_index: int, message: str):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class DataError(PBError, ValueError):
    """Malformed training data such as non one-hot targets"""


class FormatError(PBError, ValueError):
    """Corrupt or mismatched IDX / weight file"""


class UsageError(PBError):
    """API called in a state where the operation is not defined"""


class DomainError(PBError, ValueError):
    """Non-positive economic input"""


class NumericalError(PBError, ArithmeticError):
    """Non-finite value detected while debug validation is on"""


class TrainingError(PBError):
    """A training run failed or violated one of its runtime invariants"""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report
