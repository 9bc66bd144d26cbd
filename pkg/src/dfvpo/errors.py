"""Exception taxonomy shared by all dfvpo modules."""


class DfvpoError(Exception):
    """Base class for every error raised by this package."""


# --- media ---------------------------------------------------------------

class ConfigOutOfBounds(DfvpoError):
    """Sprite scene has no start position keeping the sprite inside the grid."""


class MagicMismatch(DfvpoError):
    """File does not start with the expected container magic."""


class TruncatedPayload(DfvpoError):
    """Container payload is shorter than its header promises."""


class HeterogeneousFrames(DfvpoError):
    """Frames in an image directory disagree on size or channel count."""


# --- distort -------------------------------------------------------------

class BlockTooLong(DfvpoError):
    """Shuffle block exceeds floor(0.2 * T) frames."""


class BlockTooShort(DfvpoError):
    """Shuffle block has fewer than 2 frames (would be an identity permutation)."""


class BlockOutOfRange(DfvpoError):
    """Shuffle block extends past the end of the video."""


class DtypeMismatch(DfvpoError):
    """Operation requires the other video dtype (float vs u8)."""


class DegenerateSpec(DfvpoError):
    """Spatial spec with all-zero severities cannot produce a lose case."""


class LoseEqualsWin(DfvpoError):
    """Distortion output is identical to its input."""


class ChannelMismatch(DfvpoError):
    """Per-channel parameter length disagrees with the video's channel count."""


# --- diffuse -------------------------------------------------------------

class InvalidRange(DfvpoError):
    """Noise-schedule endpoints violate 0 < beta_start <= beta_end < 1."""


class StepOutOfRange(DfvpoError):
    """Diffusion timestep outside [1, num_steps]."""


class ShapeMismatch(DfvpoError):
    """Tensor shapes disagree where they must match."""


# --- align ---------------------------------------------------------------

class NonFiniteGradient(DfvpoError):
    """Gradient contains NaN or Inf; the run has diverged."""


# --- theory --------------------------------------------------------------

class StateSpaceTooLarge(DfvpoError):
    """Enumerable MDP exceeds the state-count cap."""


class ConditionMismatch(DfvpoError):
    """Trajectories being compared were generated under different conditions."""


class SupportViolation(DfvpoError):
    """KL(p || q) undefined: q is zero on part of p's support."""


class GammaNotOne(DfvpoError):
    """Check is only defined for discount factor gamma = 1."""
