"""Exception hierarchy shared across the simulator."""


class AesimError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(AesimError):
    """Invalid configuration or construction parameters."""


class DimensionError(AesimError):
    """Array shapes or sizes incompatible with the requested operation."""


class DatasetIOError(AesimError):
    """Dataset container on disk is missing, malformed, or inconsistent."""


class EmbeddingError(AesimError):
    """Latent embedding could not be computed or ingested."""


class TrainingError(AesimError):
    """Surrogate training failed (non-PD kernel after jitter escalation, etc.)."""


class AcquisitionError(AesimError):
    """Acquisition evaluation or selection failed."""


class SamplingError(AesimError):
    """Sampling model construction or draw failed."""


class ExperimentError(AesimError):
    """Experiment loop used in an invalid state."""


class CheckpointError(AesimError):
    """Checkpoint file missing, corrupted, or from an incompatible version."""
