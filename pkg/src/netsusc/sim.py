"""Synthetic data generation and the coverage / susceptibility-bias study harness.

The study recipe mirrors the reference simulation design: a fixed network, a
Bernoulli(0.5) and a standard-normal covariate redrawn per replicate, the
normal covariate plus four local network features as susceptibility
covariates (with an intercept for W_eps), and a disturbances-model generator.
The original study network is not published, so studies default to an
Erdos-Renyi surrogate matched on size and mean degree; every result carries
that declaration.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .durbin import fit_durbin, sample_durbin
from .errors import ExcessiveFailures, NetsuscError, SingularInfluence
from .graph import LocalFeatures, Network, local_features, standardize, validate_network
from .inference import (
    OptimOptions,
    SummaryRow,
    optimize_marginal_context,
    sample_posterior_context,
    summarize,
)
from .model import (
    DesignSet,
    ModelContext,
    ModelSpec,
    ParameterState,
    Variant,
    _lu_influence,
    susceptibility_diag_eps,
    susceptibility_diag_x,
)
import scipy.linalg as sla

X1_NAMES = ["intercept", "binary", "normal"]
X2_NAMES = ["binary", "normal"]
WX_NAMES = ["normal", "inv_size", "betweenness", "lcc", "eigencentrality"]
WEPS_NAMES = ["intercept"] + WX_NAMES


def erdos_renyi(n: int, mean_degree: float, seed, min_degree: int = 1,
                max_tries: int = 1000) -> Network:
    """Undirected G(n, p) with p = mean_degree/(n-1), resampled until min_degree holds."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0.0 < mean_degree <= n - 1:
        raise ValueError(f"mean_degree must lie in (0, {n - 1}]")
    p = mean_degree / (n - 1)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        upper = np.triu(rng.random((n, n)) < p, 1).astype(float)
        a = upper + upper.T
        deg = a.sum(axis=1)
        if deg.min() >= min_degree:
            return validate_network(a, directed=False)
    raise RuntimeError(f"no graph with min degree {min_degree} found in {max_tries} tries")


def simulate_response(variant, net: Network, design: DesignSet, params: ParameterState,
                      seed) -> np.ndarray:
    """Draw one response vector from the chosen generating model."""
    variant = Variant.parse(variant) if not isinstance(variant, Variant) else variant
    rng = np.random.default_rng(seed)
    a = net.dense()
    p1 = design.p1
    beta = np.asarray(params.beta, dtype=float)
    if beta.shape != (design.p1 + design.p2,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({design.p1 + design.p2},)")
    rx = susceptibility_diag_x(design.wx, params.gamma_x)
    mean = design.x1 @ beta[:p1]
    if design.p2:
        mean = mean + rx * (a @ (design.x2 @ beta[p1:]))
    eps = np.sqrt(params.sigma2) * rng.standard_normal(net.n)
    if variant is Variant.DURBIN:
        return mean + eps
    reps = susceptibility_diag_eps(design.weps, params.gamma_eps)
    if variant is Variant.MOVING_AVERAGE:
        return mean + eps + reps * (a @ eps)
    m = -reps[:, None] * a
    m[np.diag_indices_from(m)] += 1.0
    lu, piv, _ = _lu_influence(m)
    if variant is Variant.DISTURBANCES:
        return mean + sla.lu_solve((lu, piv), eps, check_finite=False)
    if variant is Variant.EFFECTS:
        return sla.lu_solve((lu, piv), mean + eps, check_finite=False)
    raise ValueError(f"cannot simulate variant {variant}")


@dataclass(frozen=True)
class CovariateRecipe:
    """Study covariate recipe: precomputed network features plus a standardization flag."""

    features: LocalFeatures
    standardize: bool = True

    @classmethod
    def for_network(cls, net: Network, standardize: bool = True) -> "CovariateRecipe":
        return cls(features=local_features(net), standardize=standardize)


def simulate_covariates(n: int, recipe: CovariateRecipe, seed) -> DesignSet:
    """Fresh binary/normal covariates around the recipe's fixed network features.

    X2 = (binary, normal), X1 = (1 | X2), W_x = (normal, inverse network size,
    betweenness, local clustering, eigenvector centrality), W_eps = (1 | W_x).
    Non-categorical columns are standardized when the recipe says so.
    """
    feats = recipe.features
    if feats.inv_network_size.shape[0] != n:
        raise ValueError(f"recipe features are for {feats.inv_network_size.shape[0]} actors, not {n}")
    rng = np.random.default_rng(seed)
    binary = rng.binomial(1, 0.5, size=n).astype(float)
    normal = rng.standard_normal(n)
    raw_w = np.column_stack([
        normal,
        feats.inv_network_size,
        feats.betweenness,
        feats.lcc,
        feats.eigencentrality,
    ])
    if recipe.standardize:
        raw_w, _, _ = standardize(raw_w, categorical_mask=[False] * raw_w.shape[1])
    normal_used = raw_w[:, 0]
    x2 = np.column_stack([binary, normal_used])
    x1 = np.column_stack([np.ones(n), x2])
    weps = np.column_stack([np.ones(n), raw_w])
    return DesignSet(
        x1=x1, x2=x2, wx=raw_w, weps=weps,
        x1_names=list(X1_NAMES), x2_names=list(X2_NAMES),
        wx_names=list(WX_NAMES), weps_names=list(WEPS_NAMES),
    )


@dataclass
class StudyConfig:
    """Everything one coverage/bias study needs, including the generating truth."""

    spec: ModelSpec
    params: ParameterState
    replicates: int
    seed: int
    network: Network | None = None
    n: int = 122
    mean_degree: float = 6.0
    standardize: bool = True
    m_draws: int = 2000
    failure_limit: float = 0.05
    opts: OptimOptions | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


@dataclass
class ReplicateRecord:
    replicate: int
    ok: bool
    error: str | None
    rows: list[SummaryRow] | None
    covered: np.ndarray | None
    ratio_x: float
    ratio_eps: float


@dataclass
class StudyResult:
    parameters: list[tuple[str, str, float]]  # (name, block, truth)
    coverage: list[dict]                      # parameter, block, coverage, n_ok
    records: list[ReplicateRecord]
    network_note: str
    ratio_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ratio_eps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def coverage_for(self, block: str, name: str) -> float:
        for row in self.coverage:
            if row["block"] == block and row["parameter"] == name:
                return row["coverage"]
        raise KeyError(f"{block}:{name}")


def _median_ratio(w: np.ndarray, gamma_hat: np.ndarray, gamma_true: np.ndarray) -> float:
    """Median over actors of estimated vs. true susceptibility."""
    if gamma_true.size == 0:
        return np.nan
    truth = w @ gamma_true
    est = w @ gamma_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = est / truth
    ratios = ratios[np.isfinite(ratios)]
    return float(np.median(ratios)) if ratios.size else np.nan


def _study_design(net_n: int, recipe: CovariateRecipe, spec: ModelSpec, seed) -> DesignSet:
    design = simulate_covariates(net_n, recipe, seed)
    if spec.variant is Variant.DURBIN:
        design = DesignSet(
            x1=design.x1, x2=design.x2, wx=design.wx, weps=None,
            x1_names=design.x1_names, x2_names=design.x2_names,
            wx_names=design.wx_names,
        )
    return design


def _study_task(args):
    net, recipe, spec, params, m_draws, opts, seed, r, truths = args
    ss = np.random.SeedSequence([seed, r])
    k_cov, k_resp, k_fit = ss.spawn(3)
    design = _study_design(net.n, recipe, spec, k_cov)
    try:
        y = simulate_response(spec.variant, net, design, params, k_resp)
        if spec.variant is Variant.DURBIN:
            fit = fit_durbin(net, design, y, spec)
            draws = sample_durbin(fit, m_draws, k_fit)
        else:
            ctx = ModelContext(spec.variant, net, design, y, spec)
            gp = optimize_marginal_context(ctx, opts=opts)
            draws = sample_posterior_context(ctx, gp, m_draws, k_fit)
        summ = summarize(draws, wx=design.wx, weps=design.weps)
        covered = np.array([
            row.lb95 <= truth <= row.ub95 for row, truth in zip(summ.rows, truths)
        ])
        ratio_x = _median_ratio(design.wx, draws.gamma_x.mean(axis=0), params.gamma_x)
        ratio_eps = _median_ratio(design.weps, draws.gamma_eps.mean(axis=0), params.gamma_eps)
        return ReplicateRecord(
            replicate=r, ok=True, error=None, rows=summ.rows, covered=covered,
            ratio_x=ratio_x, ratio_eps=ratio_eps,
        )
    except NetsuscError as exc:
        return ReplicateRecord(
            replicate=r, ok=False, error=f"{type(exc).__name__}: {exc}", rows=None,
            covered=None, ratio_x=np.nan, ratio_eps=np.nan,
        )


def study_parameters(spec: ModelSpec, params: ParameterState) -> list[tuple[str, str, float]]:
    """(name, block, truth) triples in reporting order for the study recipe."""
    q1, q2 = len(WX_NAMES), len(WEPS_NAMES)
    if params.gamma_x.shape != (q1,):
        raise ValueError(f"gamma_x must have {q1} entries for the study recipe")
    out = [(WX_NAMES[j], "gamma_x", float(params.gamma_x[j])) for j in range(q1)]
    if spec.variant is not Variant.DURBIN:
        if params.gamma_eps.shape != (q2,):
            raise ValueError(f"gamma_eps must have {q2} entries for the study recipe")
        out += [(WEPS_NAMES[j], "gamma_eps", float(params.gamma_eps[j])) for j in range(q2)]
    elif params.gamma_eps.size:
        raise ValueError("Durbin studies take no gamma_eps")
    p1, p2 = len(X1_NAMES), len(X2_NAMES)
    if params.beta.shape != (p1 + p2,):
        raise ValueError(f"beta must have {p1 + p2} entries for the study recipe")
    out += [(X1_NAMES[j], "beta1", float(params.beta[j])) for j in range(p1)]
    out += [(X2_NAMES[j], "beta2", float(params.beta[p1 + j])) for j in range(p2)]
    out.append(("sigma2", "sigma2", float(params.sigma2)))
    return out


def coverage_study(cfg: StudyConfig, threads: int | None = None) -> StudyResult:
    """Simulate, fit, and score `cfg.replicates` data sets at the generating truth.

    Records per-parameter CI-covers-truth indicators and the per-replicate
    medians of estimated-vs-true susceptibility ratios.  Aborts with
    ExcessiveFailures when more than cfg.failure_limit of replicates fail.
    """
    if cfg.network is not None:
        net = cfg.network
        note = f"fixed network, n={net.n}"
    else:
        net = erdos_renyi(cfg.n, cfg.mean_degree, np.random.SeedSequence([cfg.seed]))
        note = (
            f"surrogate Erdos-Renyi network, n={cfg.n}, mean degree {cfg.mean_degree} "
            "(the reference study network is not published)"
        )
    recipe = CovariateRecipe.for_network(net, standardize=cfg.standardize)
    parameters = study_parameters(cfg.spec, cfg.params)
    truths = [t for _, _, t in parameters]
    tasks = [
        (net, recipe, cfg.spec, cfg.params, cfg.m_draws, cfg.opts, int(cfg.seed), r, truths)
        for r in range(cfg.replicates)
    ]
    if threads == 1 or len(tasks) == 1:
        records = [_study_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_study_task, tasks, chunksize=1))

    failures = [rec for rec in records if not rec.ok]
    if len(failures) > cfg.failure_limit * cfg.replicates:
        raise ExcessiveFailures(
            f"{len(failures)}/{cfg.replicates} replicates failed "
            f"(first: {failures[0].error})"
        )
    ok = [rec for rec in records if rec.ok]
    coverage = []
    for j, (name, block, _) in enumerate(parameters):
        hits = np.array([rec.covered[j] for rec in ok])
        coverage.append({
            "parameter": name,
            "block": block,
            "coverage": float(hits.mean()),
            "n_ok": len(ok),
        })
    return StudyResult(
        parameters=parameters,
        coverage=coverage,
        records=records,
        network_note=note,
        ratio_x=np.array([rec.ratio_x for rec in ok]),
        ratio_eps=np.array([rec.ratio_eps for rec in ok]),
    )
