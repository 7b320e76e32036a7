"""
Exception Hierarchy
Mục đích: One error vocabulary for parsing, partitioning, estimation and the CLI
"""

from typing import Optional


class DrbseError(Exception):
    """Base class for every error raised by the estimator package"""


class CaseParseError(DrbseError, ValueError):
    """Malformed case-file text"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedFeatureError(DrbseError, ValueError):
    """Case uses a modelling feature outside the bilinear formulation"""


class CaseSchemaError(DrbseError, ValueError):
    """JSON case document does not follow the canonical schema"""


class CaseValidationError(DrbseError, ValueError):
    """Case content violates a structural invariant"""


class PartitionError(DrbseError, ValueError):
    """Invalid area assignment"""


class MeasurementError(DrbseError, ValueError):
    """Measurement plan or bad-data target does not resolve against the case"""


class ConstructionError(DrbseError, ValueError):
    """Design-matrix row references a variable outside its scope"""


class TransformDomainError(DrbseError, ValueError):
    """Nonlinear transform evaluated outside its domain"""


class ConfigError(DrbseError, ValueError):
    """Invalid experiment configuration"""


class NumericalError(DrbseError, RuntimeError):
    """Factorization failure"""


class ObservabilityError(DrbseError, RuntimeError):
    """Estimation problem has no unique solution"""


class ProtocolError(DrbseError, RuntimeError):
    """Message exchange between areas is incomplete"""


class CaseFetchError(DrbseError, RuntimeError):
    """Case download failed or returned something that is not a MATPOWER case"""
