"""Marginal-posterior maximization over the susceptibilities and hierarchical sampling.

The correlated-error variants have no closed-form MAP, but beta and sigma2
integrate out analytically, leaving a low-dimensional marginal posterior of
(gamma_x, gamma_eps).  That marginal is maximized numerically (quasi-Newton
with central finite-difference derivatives), approximated by a Gaussian at the
mode, and the full posterior is then sampled hierarchically:

    gamma ~ N(mu_gamma, Sigma_gamma)
    sigma2 | gamma ~ IG(a*/2, b*/2)
    beta | gamma, sigma2 ~ N(mu_beta, sigma2 Sigma_beta)

All work happens in log space to avoid underflow of (b*)^(-a*/2).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as sopt

from .errors import (
    DegenerateCovariance,
    ExcessiveRejection,
    NonPDHessianWarning,
    NotPositiveDefinite,
    OptimFailed,
    SingularInfluence,
)
from .graph import Network
from .model import DesignSet, ModelContext, ModelSpec, ParameterState, Variant, marginal_log_posterior

_INADMISSIBLE = (SingularInfluence, NotPositiveDefinite)
_BIG = 1e100


@dataclass
class OptimOptions:
    """Knobs for the marginal maximization."""

    tol_grad: float = 1e-4       # sup-norm of the FD gradient required at the mode
    fd_step: float = 1e-5        # relative central-difference step
    max_iter: int = 500
    restarts: int = 2            # extra BFGS passes if the first stalls short of tol_grad
    hessian_lift: float = 1e-8   # floor for -H eigenvalues, relative to the largest


@dataclass
class GammaPosterior:
    """Gaussian approximation to the marginal posterior of (gamma_x, gamma_eps)."""

    mu_gamma: np.ndarray
    sigma_gamma: np.ndarray
    objective_at_mode: float
    grad_sup_norm: float
    q1: int
    q2: int
    optimizer_trace: list = field(default_factory=list)
    n_evaluations: int = 0
    hessian_lifted: bool = False

    @property
    def mu_gamma_x(self) -> np.ndarray:
        return self.mu_gamma[: self.q1]

    @property
    def mu_gamma_eps(self) -> np.ndarray:
        return self.mu_gamma[self.q1:]


@dataclass
class PosteriorDraws:
    """Approximate posterior sample plus per-parameter summaries.

    Draw matrices are row-per-draw; the summary order is the reporting order
    (gamma_x, gamma_eps, beta1, beta2, sigma2).
    """

    beta: np.ndarray
    gamma_x: np.ndarray
    gamma_eps: np.ndarray
    sigma2: np.ndarray
    p1: int
    beta_names: list[str]
    gamma_x_names: list[str]
    gamma_eps_names: list[str]
    rejected: int = 0
    proposals: int = 0

    @property
    def m(self) -> int:
        return self.sigma2.shape[0]

    def state(self, i: int) -> ParameterState:
        return ParameterState(
            beta=self.beta[i], gamma_x=self.gamma_x[i],
            gamma_eps=self.gamma_eps[i], sigma2=self.sigma2[i],
        )

    def matrix(self) -> tuple[np.ndarray, list[str], list[str]]:
        """Stacked draw matrix with parameter names and block labels."""
        cols = [self.gamma_x, self.gamma_eps, self.beta, self.sigma2[:, None]]
        names = (
            list(self.gamma_x_names)
            + list(self.gamma_eps_names)
            + list(self.beta_names)
            + ["sigma2"]
        )
        blocks = (
            ["gamma_x"] * self.gamma_x.shape[1]
            + ["gamma_eps"] * self.gamma_eps.shape[1]
            + ["beta1"] * self.p1
            + ["beta2"] * (self.beta.shape[1] - self.p1)
            + ["sigma2"]
        )
        return np.hstack(cols), names, blocks


@dataclass
class SummaryRow:
    parameter: str
    block: str
    mean: float
    se: float
    lb95: float
    ub95: float
    excludes_zero: bool


@dataclass
class FitSummary:
    rows: list[SummaryRow]
    susceptibility_x: np.ndarray | None = None
    susceptibility_eps: np.ndarray | None = None

    def row(self, parameter: str, block: str | None = None) -> SummaryRow:
        for r in self.rows:
            if r.parameter == parameter and (block is None or r.block == block):
                return r
        raise KeyError(f"no summary row for {parameter!r}")


def _fd_gradient(f, x, rel_step):
    """Central differences with one-sided fallback at inadmissible neighbors."""
    g = np.zeros_like(x)
    f0 = None
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if abs(fp) < _BIG and abs(fm) < _BIG:
            g[i] = (fp - fm) / (2.0 * h)
        else:
            if f0 is None:
                f0 = f(x)
            if abs(fp) < _BIG:
                g[i] = (fp - f0) / h
            elif abs(fm) < _BIG:
                g[i] = (f0 - fm) / h
            else:
                g[i] = 0.0
    return g


def _fd_hessian(f, x, rel_step):
    """Symmetric central-difference Hessian of a scalar function."""
    d = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    hess = np.zeros((d, d))
    f0 = f(x)
    for i in range(d):
        xp = x.copy()
        xp[i] += h[i]
        xm = x.copy()
        xm[i] -= h[i]
        hess[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / h[i] ** 2
        for j in range(i + 1, d):
            xpp = x.copy(); xpp[[i, j]] += [h[i], h[j]]
            xpm = x.copy(); xpm[i] += h[i]; xpm[j] -= h[j]
            xmp = x.copy(); xmp[i] -= h[i]; xmp[j] += h[j]
            xmm = x.copy(); xmm[[i, j]] -= [h[i], h[j]]
            hess[i, j] = hess[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h[i] * h[j])
    return hess


def optimize_marginal(net: Network, design: DesignSet, y, spec: ModelSpec,
                      init=None, opts: OptimOptions | None = None) -> GammaPosterior:
    """Algorithm step 0: locate the marginal mode and its Laplace Gaussian."""
    if spec.variant is Variant.DURBIN:
        raise ValueError("the Durbin variant has a closed-form fit; use fit_durbin")
    ctx = ModelContext(spec.variant, net, design, y, spec)
    return optimize_marginal_context(ctx, init=init, opts=opts)


def optimize_marginal_context(ctx, init=None, opts: OptimOptions | None = None) -> GammaPosterior:
    """Variant of optimize_marginal over any context exposing assemble()/q1/q2."""
    opts = opts or OptimOptions()
    q1, q2 = ctx.q1, ctx.q2
    dim = q1 + q2
    if dim == 0:
        raise ValueError("nothing to optimize: q1 = q2 = 0")
    evals = 0

    def objective(theta):
        nonlocal evals
        evals += 1
        try:
            am = ctx.assemble(theta[:q1], theta[q1:])
        except _INADMISSIBLE:
            return -_BIG
        val = marginal_log_posterior(am)
        return val if np.isfinite(val) else -_BIG

    def neg(theta):
        return -objective(theta)

    def neg_grad(theta):
        return -_fd_gradient(objective, theta, opts.fd_step)

    x0 = np.zeros(dim) if init is None else np.asarray(init, dtype=float).copy()
    if x0.shape != (dim,):
        raise ValueError(f"init has shape {x0.shape}, expected ({dim},)")
    if objective(x0) <= -_BIG:
        raise OptimFailed("no admissible starting point (even the zero-influence model failed)")

    trace: list[float] = []
    x = x0
    for attempt in range(opts.restarts + 1):
        res = sopt.minimize(
            neg, x, jac=neg_grad, method="BFGS",
            options={"gtol": opts.tol_grad, "maxiter": opts.max_iter},
            callback=lambda xk: trace.append(objective(xk)),
        )
        x = res.x
        sup = float(np.max(np.abs(_fd_gradient(objective, x, opts.fd_step)))) if dim else 0.0
        if sup < opts.tol_grad and abs(res.fun) < _BIG:
            break
    else:
        if sup >= opts.tol_grad:
            raise OptimFailed(
                f"gradient sup-norm {sup:.3e} at the final iterate exceeds tol_grad={opts.tol_grad}"
            )
    if abs(res.fun) >= _BIG or not np.isfinite(res.fun):
        raise OptimFailed("optimizer finished at an inadmissible point")

    mode = x.copy()
    hess = _fd_hessian(objective, mode, opts.fd_step)
    neg_h = -(hess + hess.T) / 2.0
    eigval, eigvec = np.linalg.eigh(neg_h)
    lifted = False
    floor = opts.hessian_lift * max(eigval.max(), np.finfo(float).tiny)
    if np.any(eigval < floor):
        lifted = True
        warnings.warn(
            "negative Hessian at the marginal mode is not positive definite; "
            "eigenvalues lifted to form Sigma_gamma",
            NonPDHessianWarning,
            stacklevel=2,
        )
        eigval = np.maximum(eigval, floor)
    sigma_gamma = (eigvec / eigval) @ eigvec.T

    return GammaPosterior(
        mu_gamma=mode,
        sigma_gamma=sigma_gamma,
        objective_at_mode=float(objective(mode)),
        grad_sup_norm=sup,
        q1=q1,
        q2=q2,
        optimizer_trace=trace,
        n_evaluations=evals,
        hessian_lifted=lifted,
    )


def sample_posterior(gp: GammaPosterior, net: Network, design: DesignSet, y,
                     spec: ModelSpec, m_draws: int, seed,
                     reject_limit: float = 0.10) -> PosteriorDraws:
    """Algorithm steps 1-3: hierarchical draws of (gamma, sigma2, beta)."""
    ctx = ModelContext(spec.variant, net, design, y, spec)
    return sample_posterior_context(ctx, gp, m_draws, seed, reject_limit=reject_limit)


def sample_posterior_context(ctx, gp: GammaPosterior, m_draws: int, seed,
                             reject_limit: float = 0.10) -> PosteriorDraws:
    if m_draws < 1:
        raise ValueError("need at least one draw")
    q1, q2 = gp.q1, gp.q2
    dim = q1 + q2
    try:
        chol = np.linalg.cholesky((gp.sigma_gamma + gp.sigma_gamma.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovariance("Sigma_gamma is not positive definite") from exc

    rng = np.random.default_rng(seed)
    p = ctx.p
    beta = np.empty((m_draws, p))
    gamma_x = np.empty((m_draws, q1))
    gamma_eps = np.empty((m_draws, q2))
    sigma2 = np.empty(m_draws)

    done = 0
    proposals = 0
    rejected = 0
    cap = max(1000, 20 * m_draws)
    while done < m_draws:
        if proposals >= cap:
            raise ExcessiveRejection(
                f"{rejected}/{proposals} proposals inadmissible; Gaussian approximation unusable"
            )
        proposals += 1
        theta = gp.mu_gamma + chol @ rng.standard_normal(dim)
        try:
            am = ctx.assemble(theta[:q1], theta[q1:])
        except _INADMISSIBLE:
            rejected += 1
            continue
        s2 = 1.0 / rng.gamma(am.astar / 2.0, 2.0 / am.bstar)
        gamma_x[done] = theta[:q1]
        gamma_eps[done] = theta[q1:]
        sigma2[done] = s2
        if p:
            beta[done] = am.mu_beta + np.sqrt(s2) * (am.sigma_beta_sqrt @ rng.standard_normal(p))
        done += 1

    if rejected / proposals > reject_limit:
        raise ExcessiveRejection(
            f"{rejected}/{proposals} proposals inadmissible (> {reject_limit:.0%})"
        )
    return PosteriorDraws(
        beta=beta, gamma_x=gamma_x, gamma_eps=gamma_eps, sigma2=sigma2,
        p1=ctx.p1, beta_names=ctx.beta_names,
        gamma_x_names=ctx.gamma_x_names, gamma_eps_names=ctx.gamma_eps_names,
        rejected=rejected, proposals=proposals,
    )


def summarize(draws: PosteriorDraws, wx=None, weps=None) -> FitSummary:
    """Posterior mean/SE/95% bounds per parameter, plus per-actor susceptibilities.

    Susceptibilities map the posterior-mean coefficients through the design:
    diag(R_x) = 1 + W_x mean(gamma_x), diag(R_eps) = W_eps mean(gamma_eps).
    """
    if draws.m < 100:
        raise ValueError(f"need at least 100 draws to summarize, got {draws.m}")
    mat, names, blocks = draws.matrix()
    means = mat.mean(axis=0)
    ses = mat.std(axis=0, ddof=1)
    lb, ub = np.percentile(mat, [2.5, 97.5], axis=0)
    rows = [
        SummaryRow(
            parameter=names[j], block=blocks[j], mean=float(means[j]), se=float(ses[j]),
            lb95=float(lb[j]), ub95=float(ub[j]),
            excludes_zero=bool(lb[j] > 0.0 or ub[j] < 0.0),
        )
        for j in range(mat.shape[1])
    ]
    susc_x = None
    susc_eps = None
    if wx is not None and draws.gamma_x.shape[1] == np.asarray(wx).shape[1]:
        susc_x = 1.0 + np.asarray(wx, dtype=float) @ draws.gamma_x.mean(axis=0)
    if weps is not None and draws.gamma_eps.shape[1] == np.asarray(weps).shape[1]:
        susc_eps = np.asarray(weps, dtype=float) @ draws.gamma_eps.mean(axis=0)
    return FitSummary(rows=rows, susceptibility_x=susc_x, susceptibility_eps=susc_eps)


def fit_variant(net: Network, design: DesignSet, y, spec: ModelSpec, m_draws: int,
                seed, init=None, opts: OptimOptions | None = None,
                reject_limit: float = 0.10) -> tuple[GammaPosterior, PosteriorDraws]:
    """Convenience wrapper: optimize, then sample, sharing one model context."""
    ctx = ModelContext(spec.variant, net, design, y, spec)
    gp = optimize_marginal_context(ctx, init=init, opts=opts)
    draws = sample_posterior_context(ctx, gp, m_draws, seed, reject_limit=reject_limit)
    return gp, draws
