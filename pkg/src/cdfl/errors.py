"""Exception hierarchy shared across the simulator."""


class SimulatorError(Exception):
    """Base class for all simulator-specific errors."""


class ConfigError(SimulatorError):
    """Invalid configuration, unknown keys, or violated preconditions."""


class SchemaError(SimulatorError):
    """Layer-schema mismatch between model updates."""


class AggregationError(SimulatorError):
    """Aggregation called with an empty or degenerate input set."""


class TrainingError(SimulatorError):
    """Local training invoked on unusable data or parameters."""


class CryptoError(SimulatorError):
    """Share reconstruction or key handling failure."""


class StalledConsensusError(SimulatorError):
    """Consensus failed to finalize within the allowed number of views."""


class OracleDisagreementError(SimulatorError):
    """Redundant oracle computations produced different results."""
