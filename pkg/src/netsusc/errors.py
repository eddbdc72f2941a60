"""Exception and warning types shared across the package."""


class NetsuscError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------- graph

class NonzeroDiagonal(NetsuscError):
    """Adjacency matrix has a nonzero self-tie."""


class AsymmetricUndirected(NetsuscError):
    """Matrix declared undirected but is not symmetric."""


class TooSmall(NetsuscError):
    """Fewer than two actors."""


class NoEdges(NetsuscError):
    """Operation requires at least one edge."""


class IsolatedActor(NetsuscError):
    """A zero-degree actor where a degree-based quantity is required."""

    def __init__(self, actor, message=None):
        self.actor = actor
        super().__init__(message or f"actor {actor} has degree 0")


class NoConvergence(NetsuscError):
    """Iteration hit its cap without meeting the tolerance."""

    def __init__(self, max_iter, message=None):
        self.max_iter = max_iter
        super().__init__(message or f"no convergence within {max_iter} iterations")


class ZeroVariance(NetsuscError):
    """A column marked for standardization has zero sample variance."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column} has zero sample variance")


# ---------------------------------------------------------------- model / fitting

class SingularInfluence(NetsuscError):
    """(I - R_eps A) is numerically singular for the requested susceptibilities."""


class NotPositiveDefinite(NetsuscError):
    """A matrix required to be positive definite failed its factorization."""


class NonFiniteIterate(NetsuscError):
    """An iterative fit produced NaN or infinity."""


class RankDeficientStep(NetsuscError):
    """A linear solve inside an iterative fit failed."""


class DegenerateCovariance(NetsuscError):
    """Sampling covariance is not usable (not PD, or rejection never terminates)."""


class OptimFailed(NetsuscError):
    """Numerical maximization of the marginal posterior did not succeed."""


class ExcessiveRejection(NetsuscError):
    """More than the tolerated share of posterior proposals was inadmissible."""


class ExcessiveFailures(NetsuscError):
    """Too many replicates of a simulation study failed to fit."""


# ---------------------------------------------------------------- egocentric

class EmptyEgoSet(NetsuscError):
    """An egocentric partition needs at least one ego."""


class MissingAlterCovariates(NetsuscError):
    """Alter rows of X2 contain missing values; the ego model cannot be assembled."""


# ---------------------------------------------------------------- cli / io

class ParseError(NetsuscError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class ConfigError(NetsuscError):
    """Invalid run or study configuration."""


# ---------------------------------------------------------------- warnings

class NonPDHessianWarning(UserWarning):
    """Negative Hessian at the mode was not PD; eigenvalues were lifted."""


class NonMonotoneObjectiveWarning(UserWarning):
    """The monitored MAP objective decreased between iterations."""


class NoInterceptWarning(UserWarning):
    """W_eps has no constant column; the homogeneous special case is not nested."""
