"""Design matrices, susceptibility diagonals, and the per-variant (X-tilde, V) assembly.

Every supported model reduces to

    y ~ N(Xt @ beta, sigma2 * V)

with conjugate normal/inverse-gamma priors, where Xt and V depend on the
variant and on the susceptibility coefficients (gamma_x, gamma_eps).  The
assembled quantities (a*, b*, mu_beta, Sigma_beta, log|V|) are everything the
marginal posterior of the susceptibilities and the conditional draws of
(sigma2, beta) need.

V**-1 is never formed: quadratic forms are routed through the factored
influence matrix (effects/disturbances), a Cholesky factor of the dense V
(moving-average variants), or trivially for independent errors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import NoInterceptWarning, NotPositiveDefinite, SingularInfluence
from .graph import Network

RCOND_FLOOR = 1e-12


class Variant(str, Enum):
    DURBIN = "durbin"
    EFFECTS = "effects"
    DISTURBANCES = "disturbances"
    MOVING_AVERAGE = "moving_average"
    EGO_MOVING_AVERAGE = "ego_moving_average"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        key = str(text).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "ma": cls.MOVING_AVERAGE,
            "movingaverage": cls.MOVING_AVERAGE,
            "ego_ma": cls.EGO_MOVING_AVERAGE,
            "egoma": cls.EGO_MOVING_AVERAGE,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            valid = sorted({v.value for v in cls} | set(aliases))
            raise ValueError(f"unknown variant {text!r}; expected one of {valid}") from None


def _as_design_matrix(m, n: int) -> np.ndarray:
    if m is None:
        return np.zeros((n, 0))
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("design matrices must be 2-D")
    return arr


@dataclass
class DesignSet:
    """The four design matrices, ordered (X1, X2, W_x, W_eps), with column names.

    X1/X2 enter the mean directly and through neighbors, W_x drives the mean
    susceptibilities (with a constrained unit leading coefficient), W_eps the
    error susceptibilities (unconstrained).
    """

    x1: np.ndarray
    x2: np.ndarray
    wx: np.ndarray
    weps: np.ndarray
    x1_names: list[str] = field(default_factory=list)
    x2_names: list[str] = field(default_factory=list)
    wx_names: list[str] = field(default_factory=list)
    weps_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=float)
        if x1.ndim == 1:
            x1 = x1[:, None]
        n = x1.shape[0]
        self.x1 = x1
        for name in ("x2", "wx", "weps"):
            arr = _as_design_matrix(getattr(self, name), n)
            if arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, x1 has {n}")
            setattr(self, name, arr)
        for attr, m in (("x1_names", self.x1), ("x2_names", self.x2),
                        ("wx_names", self.wx), ("weps_names", self.weps)):
            names = list(getattr(self, attr))
            if not names:
                prefix = attr[:-6]
                names = [f"{prefix}{j}" for j in range(m.shape[1])]
            if len(names) != m.shape[1]:
                raise ValueError(f"{attr} has {len(names)} entries for {m.shape[1]} columns")
            setattr(self, attr, names)
        self.validate()

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def p1(self) -> int:
        return self.x1.shape[1]

    @property
    def p2(self) -> int:
        return self.x2.shape[1]

    @property
    def q1(self) -> int:
        return self.wx.shape[1]

    @property
    def q2(self) -> int:
        return self.weps.shape[1]

    def validate(self):
        for label, m in (("x1", self.x1), ("x2", self.x2), ("wx", self.wx), ("weps", self.weps)):
            if m.shape[1] and not np.all(np.isfinite(m)):
                raise ValueError(f"{label} contains non-finite values")
            if m.shape[1] and np.linalg.matrix_rank(m) < m.shape[1]:
                raise ValueError(f"{label} is not of full column rank")
        for j in range(self.q1):
            col = self.wx[:, j]
            if np.ptp(col) == 0.0:
                raise ValueError(
                    f"wx column {self.wx_names[j]!r} is constant; columns of W_x proportional "
                    "to the all-ones vector break identifiability of the constrained susceptibility"
                )


@dataclass
class ModelSpec:
    """Model variant plus prior hyperparameters.

    beta ~ N(0, g1 sigma2 I), gamma_x ~ N(0, g2 sigma2 I),
    gamma_eps ~ N(0, g3 sigma2 I), sigma2 ~ IG(a/2, b/2) with the
    shape/scale convention density(x) propto x^(-shape-1) exp(-scale/x).
    g3 is unused for the Durbin variant.
    """

    variant: Variant
    g1: float
    g2: float
    g3: float = 1.0
    a: float = 2.1
    b: float = 1.0

    def __post_init__(self):
        self.variant = Variant.parse(self.variant) if not isinstance(self.variant, Variant) else self.variant
        for name in ("g1", "g2", "g3", "a", "b"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val <= 0.0:
                raise ValueError(f"prior hyperparameter {name} must be positive, got {val}")
            setattr(self, name, val)


@dataclass
class ParameterState:
    """One point in parameter space: (beta, gamma_x, gamma_eps, sigma2)."""

    beta: np.ndarray
    gamma_x: np.ndarray
    gamma_eps: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.gamma_x = np.atleast_1d(np.asarray(self.gamma_x, dtype=float)) if np.size(self.gamma_x) else np.zeros(0)
        self.gamma_eps = np.atleast_1d(np.asarray(self.gamma_eps, dtype=float)) if np.size(self.gamma_eps) else np.zeros(0)
        self.sigma2 = float(self.sigma2)
        if self.sigma2 <= 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


def susceptibility_diag_x(wx, gamma_x) -> np.ndarray:
    """diag(R_x) = 1 + W_x gamma_x; the leading coefficient is pinned to 1."""
    wx = np.asarray(wx, dtype=float)
    gamma_x = np.atleast_1d(np.asarray(gamma_x, dtype=float)) if np.size(gamma_x) else np.zeros(wx.shape[1])
    return 1.0 + wx @ gamma_x


def susceptibility_diag_eps(weps, gamma_eps) -> np.ndarray:
    """diag(R_eps) = W_eps gamma_eps; unconstrained (zero means no error influence)."""
    weps = np.asarray(weps, dtype=float)
    gamma_eps = np.atleast_1d(np.asarray(gamma_eps, dtype=float)) if np.size(gamma_eps) else np.zeros(weps.shape[1])
    return weps @ gamma_eps


def _lu_influence(m: np.ndarray):
    """LU-factorize an influence matrix with a reciprocal-condition guard.

    Returns (lu, piv, logabsdet).  Raises SingularInfluence when the matrix is
    singular or its 1-norm rcond estimate falls below RCOND_FLOOR.
    """
    anorm = np.linalg.norm(m, 1)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # scipy warns on exactly singular input
            lu, piv = sla.lu_factor(m, check_finite=False)
    except Exception as exc:
        raise SingularInfluence(str(exc)) from exc
    diag = np.diag(lu)
    if not np.all(np.isfinite(lu)) or np.any(diag == 0.0):
        raise SingularInfluence("influence matrix is exactly singular")
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < RCOND_FLOOR:
        raise SingularInfluence(f"influence matrix ill-conditioned (rcond={rcond:.3e})")
    return lu, piv, float(np.sum(np.log(np.abs(diag))))


def _chol_pd(v: np.ndarray, what: str):
    """Cholesky with a PD/conditioning guard; returns (chol_lower, logdet)."""
    if not np.all(np.isfinite(v)):
        raise NotPositiveDefinite(f"{what} contains non-finite entries")
    anorm = np.linalg.norm(v, 1)
    try:
        c, low = sla.cho_factor(v, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc
    rcond, info = lapack.dpocon(c, anorm, uplo="L")
    if info != 0 or not np.isfinite(rcond) or rcond < RCOND_FLOOR:
        raise NotPositiveDefinite(f"{what} ill-conditioned (rcond={rcond:.3e})")
    return (c, low), 2.0 * float(np.sum(np.log(np.diag(c))))


def ma_covariance_shape(a_e: np.ndarray, reps: np.ndarray, ea_gram=None) -> np.ndarray:
    """Moving-average V: (I + R A)(I + A' R), plus R (A_ea A_ea') R for ego data."""
    n_mat = reps[:, None] * a_e
    n_mat[np.diag_indices_from(n_mat)] += 1.0
    v = n_mat @ n_mat.T
    if ea_gram is not None:
        v = v + (reps[:, None] * ea_gram) * reps[None, :]
    return v


@dataclass
class AssembledModel:
    """Variant-agnostic posterior building blocks at fixed (gamma_x, gamma_eps)."""

    variant: Variant
    n: int
    gamma_x: np.ndarray
    gamma_eps: np.ndarray
    xtilde: np.ndarray
    logdet_v: float
    astar: float
    bstar: float
    mu_beta: np.ndarray
    sigma_beta: np.ndarray
    logdet_sigma_beta: float
    sigma_beta_sqrt: np.ndarray  # triangular B with B B' = Sigma_beta, for beta draws
    _v_dense: np.ndarray | None = None
    _v_chol: np.ndarray | None = None
    _influence_lu: tuple | None = None

    @property
    def v(self) -> np.ndarray:
        """Dense covariance shape V (built on demand for factored variants)."""
        if self._v_dense is None:
            if self._influence_lu is not None:
                inv_m = sla.lu_solve(self._influence_lu, np.eye(self.n), check_finite=False)
                self._v_dense = inv_m @ inv_m.T
            else:
                self._v_dense = np.eye(self.n)
        return self._v_dense

    @property
    def v_chol(self) -> np.ndarray:
        """Lower Cholesky factor of V."""
        if self._v_chol is None:
            (c, _), _ = _chol_pd(self.v, "V")
            self._v_chol = np.tril(c)
        return self._v_chol


class ModelContext:
    """Reusable precomputation for assembling one model at many susceptibility values.

    Immutable after construction; assemble() may be called concurrently.
    """

    def __init__(self, variant, net: Network, design: DesignSet, y, spec: ModelSpec):
        self.variant = Variant.parse(variant) if not isinstance(variant, Variant) else variant
        if self.variant is Variant.EGO_MOVING_AVERAGE:
            raise ValueError("use the ego module to assemble egocentric models")
        self.design = design
        self.spec = spec
        self.y = np.asarray(y, dtype=float).ravel()
        if self.y.shape[0] != design.n:
            raise ValueError(f"y has {self.y.shape[0]} entries for {design.n} actors")
        if net.n != design.n:
            raise ValueError(f"network has {net.n} actors, design {design.n}")
        self.n = net.n
        self.a_dense = net.dense()
        self.ax2 = self.a_dense @ design.x2
        if self.variant is not Variant.DURBIN:
            _warn_if_no_intercept(design.weps)

    @property
    def q1(self) -> int:
        return self.design.q1

    @property
    def q2(self) -> int:
        return self.design.q2

    @property
    def p1(self) -> int:
        return self.design.p1

    @property
    def p(self) -> int:
        return self.design.p1 + self.design.p2

    @property
    def beta_names(self) -> list[str]:
        return list(self.design.x1_names) + list(self.design.x2_names)

    @property
    def gamma_x_names(self) -> list[str]:
        return list(self.design.wx_names)

    @property
    def gamma_eps_names(self) -> list[str]:
        return list(self.design.weps_names)

    def assemble(self, gamma_x, gamma_eps) -> AssembledModel:
        d = self.design
        gamma_x = np.atleast_1d(np.asarray(gamma_x, dtype=float)) if np.size(gamma_x) else np.zeros(0)
        gamma_eps = np.atleast_1d(np.asarray(gamma_eps, dtype=float)) if np.size(gamma_eps) else np.zeros(0)
        if gamma_x.shape != (d.q1,):
            raise ValueError(f"gamma_x has shape {gamma_x.shape}, expected ({d.q1},)")
        if gamma_eps.shape != (d.q2,):
            raise ValueError(f"gamma_eps has shape {gamma_eps.shape}, expected ({d.q2},)")
        rx = susceptibility_diag_x(d.wx, gamma_x)
        x_base = np.hstack([d.x1, rx[:, None] * self.ax2]) if d.p2 else d.x1
        y = self.y

        v_dense = None
        v_chol = None
        influence_lu = None
        if self.variant is Variant.DURBIN:
            xtilde = x_base
            logdet_v = 0.0
            xvx = x_base.T @ x_base
            xvy = x_base.T @ y
            yvy = float(y @ y)
        elif self.variant in (Variant.EFFECTS, Variant.DISTURBANCES):
            reps = susceptibility_diag_eps(d.weps, gamma_eps)
            m = -reps[:, None] * self.a_dense
            m[np.diag_indices_from(m)] += 1.0
            lu, piv, logabsdet_m = _lu_influence(m)
            influence_lu = (lu, piv)
            logdet_v = -2.0 * logabsdet_m
            my = m @ y
            yvy = float(my @ my)
            if self.variant is Variant.DISTURBANCES:
                xtilde = x_base
                mx = m @ x_base
                xvx = mx.T @ mx
                xvy = mx.T @ my
            else:
                xtilde = sla.lu_solve((lu, piv), x_base, check_finite=False)
                xvx = x_base.T @ x_base
                xvy = x_base.T @ my
        elif self.variant is Variant.MOVING_AVERAGE:
            reps = susceptibility_diag_eps(d.weps, gamma_eps)
            v_dense = ma_covariance_shape(self.a_dense, reps)
            return assemble_from_dense_v(
                self.variant, v_dense, x_base, y, gamma_x, gamma_eps, self.spec, n_obs=self.n
            )
        else:  # pragma: no cover - guarded in __init__
            raise ValueError(f"unsupported variant {self.variant}")

        return _finish_assembly(
            self.variant, self.n, gamma_x, gamma_eps, xtilde, logdet_v,
            xvx, xvy, yvy, self.spec, n_obs=self.n,
            v_dense=v_dense, v_chol=v_chol, influence_lu=influence_lu,
        )


def _finish_assembly(variant, n, gamma_x, gamma_eps, xtilde, logdet_v, xvx, xvy, yvy,
                     spec: ModelSpec, n_obs: int, v_dense=None, v_chol=None, influence_lu=None):
    """Shared tail of every assembly: Sigma_beta, mu_beta, a*, b*."""
    p = xtilde.shape[1]
    q1 = gamma_x.shape[0]
    q2 = gamma_eps.shape[0]
    if p:
        sinv = xvx + np.eye(p) / spec.g1
        (c, low), logdet_sinv = _chol_pd(sinv, "Sigma_beta inverse")
        mu_beta = sla.cho_solve((c, low), xvy, check_finite=False)
        sigma_beta = sla.cho_solve((c, low), np.eye(p), check_finite=False)
        logdet_sigma_beta = -logdet_sinv
        quad_mu = float(mu_beta @ xvy)
        # sinv = L L'; B = inv(L') gives B B' = Sigma_beta without a second factorization
        sigma_beta_sqrt = sla.solve_triangular(
            np.tril(c).T, np.eye(p), lower=False, check_finite=False
        )
    else:
        mu_beta = np.zeros(0)
        sigma_beta = np.zeros((0, 0))
        sigma_beta_sqrt = np.zeros((0, 0))
        logdet_sigma_beta = 0.0
        quad_mu = 0.0
    pen = 0.0
    if q1:
        pen += float(gamma_x @ gamma_x) / spec.g2
    if q2:
        pen += float(gamma_eps @ gamma_eps) / spec.g3
    bstar = spec.b + yvy - quad_mu + pen
    if not np.isfinite(bstar) or bstar <= 0.0:
        raise NotPositiveDefinite(f"b* = {bstar} is not positive; model too ill-conditioned")
    astar = spec.a + n_obs + q1 + q2
    return AssembledModel(
        variant=variant, n=n, gamma_x=gamma_x.copy(), gamma_eps=gamma_eps.copy(),
        xtilde=xtilde, logdet_v=float(logdet_v), astar=float(astar), bstar=float(bstar),
        mu_beta=mu_beta, sigma_beta=sigma_beta, logdet_sigma_beta=float(logdet_sigma_beta),
        sigma_beta_sqrt=sigma_beta_sqrt, _v_dense=v_dense, _v_chol=v_chol,
        _influence_lu=influence_lu,
    )


def assemble_from_dense_v(variant, v_dense, x_base, y, gamma_x, gamma_eps,
                          spec: ModelSpec, n_obs: int) -> AssembledModel:
    """Finish an assembly whose V exists only as an explicit dense matrix.

    The full-network moving average and the egocentric moving average both
    route through here, so an ego fit with every actor sampled reproduces the
    full-network fit bit for bit.
    """
    (c, low), logdet_v = _chol_pd(v_dense, "V")
    viy = sla.cho_solve((c, low), y, check_finite=False)
    vix = sla.cho_solve((c, low), x_base, check_finite=False)
    xvx = x_base.T @ vix
    xvy = x_base.T @ viy
    yvy = float(y @ viy)
    return _finish_assembly(
        variant, v_dense.shape[0], gamma_x, gamma_eps, x_base, logdet_v,
        xvx, xvy, yvy, spec, n_obs=n_obs, v_dense=v_dense, v_chol=np.tril(c),
    )


def _warn_if_no_intercept(weps: np.ndarray):
    q2 = weps.shape[1]
    if q2 == 0:
        return
    for j in range(q2):
        col = weps[:, j]
        if np.ptp(col) == 0.0 and col[0] != 0.0:
            return
    warnings.warn(
        "W_eps has no intercept (constant) column; the homogeneous single-rho "
        "model is not nested in this specification",
        NoInterceptWarning,
        stacklevel=3,
    )


def assemble(variant, net: Network, design: DesignSet, gamma_x, gamma_eps, y,
             spec: ModelSpec) -> AssembledModel:
    """One-shot assembly; use ModelContext directly for repeated evaluation."""
    return ModelContext(variant, net, design, y, spec).assemble(gamma_x, gamma_eps)


def marginal_log_posterior(assembled: AssembledModel) -> float:
    """log of |V|^(-1/2) (b*)^(-a*/2) |Sigma_beta|^(1/2), up to an additive constant.

    This is the (beta, sigma2)-integrated log posterior of the susceptibility
    coefficients.
    """
    return (
        -0.5 * assembled.logdet_v
        - 0.5 * assembled.astar * np.log(assembled.bstar)
        + 0.5 * assembled.logdet_sigma_beta
    )


def log_determinant_fast(variant, net: Network, weps, gamma_eps, partition=None) -> float:
    """log|V| from the factored structure, without building V.

    Effects/disturbances: -2 log|det(I - R_eps A)|; moving average:
    +2 log|det(I + R_eps A)|; Durbin: 0.  The egocentric moving average has no
    factored shortcut, so it falls back to a Cholesky of the explicit V (pass
    the EgoPartition and the ego-restricted W_eps rows).
    """
    variant = Variant.parse(variant) if not isinstance(variant, Variant) else variant
    if variant is Variant.DURBIN:
        return 0.0
    if variant is Variant.EGO_MOVING_AVERAGE:
        if partition is None:
            raise ValueError("egocentric variant needs the partition to build V")
        reps = susceptibility_diag_eps(weps, gamma_eps)
        ea_gram = partition.a_ea @ partition.a_ea.T if partition.a_ea.shape[1] else None
        v = ma_covariance_shape(partition.a_e, reps, ea_gram)
        _, logdet = _chol_pd(v, "V")
        return logdet
    reps = susceptibility_diag_eps(weps, gamma_eps)
    a_dense = net.dense()
    if variant is Variant.MOVING_AVERAGE:
        m = reps[:, None] * a_dense
        m[np.diag_indices_from(m)] += 1.0
        _, _, logabsdet = _lu_influence(m)
        return 2.0 * logabsdet
    m = -reps[:, None] * a_dense
    m[np.diag_indices_from(m)] += 1.0
    _, _, logabsdet = _lu_influence(m)
    return -2.0 * logabsdet
