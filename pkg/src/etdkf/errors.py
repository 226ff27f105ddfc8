"""Exception hierarchy for etdkf.

Every error carries an ``exit_code`` so the CLI can map failure classes to
distinct process exit codes.  Code 1 is reserved for unexpected crashes,
code 2 for configuration problems, and codes 3..7 for the successive
construction stages (model, estimation, decomposition, sync design,
low-rank design).
"""

from __future__ import annotations


class EtdkfError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(EtdkfError):
    """Scenario/CLI configuration could not be parsed or is inconsistent."""

    exit_code = 2


class ConfigParse(ConfigError):
    pass


class InvalidTrigger(ConfigError):
    """Trigger parameters outside their documented ranges."""


class ModelError(EtdkfError):
    exit_code = 3


class NotSymmetric(ModelError):
    pass


class NegativeWeight(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NotPositiveDefinite(ModelError):
    pass


class DisconnectedSensorGraph(ModelError):
    pass


class EstimationError(EtdkfError):
    exit_code = 4


class NotObservable(EstimationError):
    pass


class NoConvergence(EstimationError):
    pass


class UnstableClosedLoop(EstimationError):
    pass


class DecompositionError(EtdkfError):
    exit_code = 5


class ControllabilityLost(DecompositionError):
    pass


class PlacementFailed(DecompositionError):
    pass


class NoSolution(DecompositionError):
    pass


class ZeroGain(DecompositionError):
    pass


class SyncDesignError(EtdkfError):
    exit_code = 6


class MahlerBoundViolated(SyncDesignError):
    pass


class ZetaInfeasible(SyncDesignError):
    pass


class MareDiverged(SyncDesignError):
    pass


class SyncSpectrumUnstable(SyncDesignError):
    pass


class LowRankError(EtdkfError):
    exit_code = 7


class Divergence(LowRankError):
    """Covariance fixed point grows without bound."""


class InfeasibleRank(LowRankError):
    pass


class VirtualNotDetectable(LowRankError):
    pass


class DegenerateSpectrum(UserWarning):
    """Rounding warning: the relaxation spectrum has no gap at the cut."""
