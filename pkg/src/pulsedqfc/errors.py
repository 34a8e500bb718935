"""Exception hierarchy.

Exceptions fall into three families so the command line can map them to exit
codes: configuration problems (2), physics-validation failures (3) and
analysis failures on a particular data set.
"""


class PulsedQFCError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PulsedQFCError, ValueError):
    """A scenario or component configuration is invalid."""


class ConfigMismatch(ConfigError):
    """Shard summaries that should share a configuration do not."""


class PhysicsValidationError(PulsedQFCError, ValueError):
    """A requested setting is outside what the physical model supports."""


class QpmViolation(PhysicsValidationError):
    """Pump pulse narrower than the quasi-phase-matching acceptance allows."""


class ZeroOverlap(PhysicsValidationError):
    """Photon wavepacket and pump do not overlap (net efficiency ~ 0)."""


class ProfileError(PulsedQFCError, ValueError):
    pass


class NonNormalizable(ProfileError):
    """Profile has zero or infinite mass."""


# The zero-mass case is the same failure seen from the other side.
ZeroMass = NonNormalizable


class Multimodal(ProfileError):
    """More than one region lies above half maximum."""


class SemanticsError(ProfileError):
    """Operation requires a probability density but got a power profile."""


class AnalysisError(PulsedQFCError, ValueError):
    pass


class BinTooLarge(AnalysisError):
    pass


class NoSidePeaks(AnalysisError):
    """Correlation window too short to hold a normalising side peak."""


class NoPeak(AnalysisError):
    pass


class InsufficientCounts(AnalysisError):
    pass


class InsufficientPoints(AnalysisError):
    pass


class NonDecaying(AnalysisError):
    """Peak heights do not decay, so no finite lifetime can be fitted."""


class BothZero(AnalysisError):
    pass
