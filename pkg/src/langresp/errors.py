"""Exception types shared across the package."""


class LangrespError(Exception):
    """Base class for all package errors."""


class NonConfining(LangrespError):
    """Potential does not confine: the Gibbs weight is not normalizable on the grid."""


class SingularSigma(LangrespError):
    """Diffusion matrix is singular or not positive definite."""


class MissingHessian(LangrespError):
    """Second derivatives of the potential are required but unavailable."""


class BlowUp(LangrespError):
    """A simulated state exceeded the blow-up threshold (time step too large)."""


class NoiseStreamMismatch(LangrespError):
    """Replayed noise stream does not match the simulation step count."""


class EnvelopeRejectionStall(LangrespError):
    """Rejection sampler acceptance rate fell below the stall threshold."""


class GridTooCoarse(LangrespError):
    """Cell Peclet number too large for the advection scheme."""


class LinearSolveFailure(LangrespError):
    """Sparse linear solve failed or returned non-finite values."""


class NonConvergence(LangrespError):
    """Iterative solver did not converge within the iteration budget."""


class WindowTooShort(LangrespError):
    """Rate-fit window contains fewer than the minimum number of points."""


class SEOverflow(LangrespError):
    """Standard error dominates the estimate; ensemble too small."""


class NotStationary(LangrespError):
    """Ensemble fails the stationarity drift check."""


class NonGradientPerturbation(LangrespError):
    """Operation requires a gradient-form (potential) perturbation."""


class NonDecayingTail(LangrespError):
    """Correlation tail shows no positive decay rate; integral truncation unsafe."""


class InsufficientSamples(LangrespError):
    """Too few samples for the requested statistical test."""


class ConfigInvalid(LangrespError):
    """Experiment configuration failed schema validation."""


class IoFailure(LangrespError):
    """Report or data file could not be written."""
