"""Exception types shared across the package."""


class CoverageViolation(RuntimeError):
    """Target policy puts mass on an action the (augmented) logging policy never takes."""


class DegenerateSupport(CoverageViolation):
    """Augmented logging policy has a zero where the target policy needs support."""


class WeightSumViolation(ValueError):
    """Per-sample weights do not form a convex combination."""


class RealizabilityViolation(RuntimeError):
    """A required context-action cell has zero probability of ever being visited."""


class ConfigError(ValueError):
    """Experiment configuration is malformed or inconsistent."""


class IoError(OSError):
    """Result export or import failed at the filesystem level."""
