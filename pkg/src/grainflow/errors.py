"""Exception types shared across the package."""


class GrainflowError(Exception):
    """Base class for model-level failures."""


class DegenerateWeightError(GrainflowError):
    """Coupling-weight denominator is non-positive on a nonzero state."""


class StepSizeError(ValueError, GrainflowError):
    """Time increment is not a non-negative integer multiple of the node spacing."""


class AdmissibilityLossError(GrainflowError):
    """The evolving state left the admissible set.

    Carries the partial trajectory record accumulated up to the failure,
    so callers can still write artifacts for post-mortem.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class OverflowLeakError(AdmissibilityLossError):
    """Mass carried past the end of the area grid exceeded the threshold."""


class NonContractionError(GrainflowError):
    """A fixed-point window failed to contract within the iteration budget."""


class PropagatorError(GrainflowError):
    """Matrix exponential produced non-finite entries."""


class UnprojectableError(GrainflowError):
    """Facet imbalance cannot be removed by scaling the growing classes."""


class ConfigError(ValueError, GrainflowError):
    """Run configuration file is malformed or inconsistent."""


class SnapshotFormatError(ConfigError):
    """Snapshot file is malformed or inconsistent with the expected grid."""
