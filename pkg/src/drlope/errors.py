"""Exception types shared across the package."""


class DrlopeError(Exception):
    """Base class for all package-specific errors."""


class OverlapViolation(DrlopeError):
    """Target policy puts mass on an action the behavior policy never takes."""


class InvalidFoldCount(DrlopeError):
    """Cross-fitting fold count outside the valid range 2 <= K <= n."""


class FoldLeakage(DrlopeError):
    """A nuisance model's training indices intersect its evaluation fold."""


class SingularDesign(DrlopeError):
    """Least-squares design is rank deficient and no ridge was requested."""


class InfiniteStateSpace(DrlopeError):
    """Operation requires a finite state space."""


class NonpositiveBandwidth(DrlopeError):
    """Kernel bandwidth must be strictly positive."""


class TrainingDiverged(DrlopeError):
    """Q-learning produced non-finite values."""


class BoundViolated(DrlopeError):
    """A theoretical bound check failed."""


class ConfigError(DrlopeError):
    """Invalid experiment configuration."""
