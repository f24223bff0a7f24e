"""Exception taxonomy shared by every stage of the pipeline.

Each error names the contract it enforces; callers that want to treat a
whole stage as fallible can catch :class:`LungDenoiseError`.
"""


class LungDenoiseError(Exception):
    """Base class for all toolkit errors."""


# --- audio ingest -----------------------------------------------------------

class ParseError(LungDenoiseError):
    """File container is malformed (bad magic, truncated chunk, short data)."""


class UnsupportedFormat(LungDenoiseError):
    """Container parsed fine but the encoding is not one we read."""


class EmptyAudio(LungDenoiseError):
    """Zero samples, or a signal with no energy where energy is required."""


class RangeError(LungDenoiseError):
    """Sample values outside the representable [-1, 1] range on write."""


class FilterLengthError(LungDenoiseError):
    """Clip too short for the filter's settling length."""


class RateError(LungDenoiseError):
    """Operation requires a specific sample rate and got another."""


# --- corpus construction ----------------------------------------------------

class CorpusTooSmall(LungDenoiseError):
    """Not enough clips to populate every split."""


class LengthError(LungDenoiseError):
    """Segment or vector length violates a stage precondition."""


class ManifestError(LungDenoiseError):
    """Manifest file is missing, unreadable, or internally inconsistent."""


# --- noise synthesis --------------------------------------------------------

class DegenerateNoise(LungDenoiseError):
    """Noise vector with zero power cannot be scaled to a target SNR."""


class PoolError(LungDenoiseError):
    """A noise kind needs a recorded-noise pool that is absent or empty."""


# --- tensor engine ----------------------------------------------------------

class ShapeError(LungDenoiseError):
    """Operand shapes incompatible with the requested operation."""


class TapeError(LungDenoiseError):
    """Backward pass requested without a live graph (or requested twice)."""


class ConfigError(LungDenoiseError):
    """Model or run configuration is internally inconsistent."""


# --- training / checkpoints -------------------------------------------------

class DivergenceFault(LungDenoiseError):
    """Loss became non-finite during optimisation."""


class CorruptCheckpoint(LungDenoiseError):
    """Checkpoint fails its checksum or structural validation."""


# --- evaluation -------------------------------------------------------------

class PerfectReconstruction(LungDenoiseError):
    """Residual is exactly zero, so a ratio metric has no finite value."""


class DegenerateReference(LungDenoiseError):
    """Reference signal has zero energy, so a ratio metric is undefined."""
