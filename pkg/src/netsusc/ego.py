"""Egocentric-sample support: partitions, the observed-data moving-average model, sweeps.

Sampling a subset of actors (egos) observes their responses, their covariates,
their ties, and the identities/X2 covariates of their immediate neighbors
(alters).  Under the moving-average error structure the observed responses
have the closed-form marginal used here; no quantity belonging to the
remaining actors is ever read.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEgoSet, MissingAlterCovariates, NetsuscError
from .graph import Network
from .inference import (
    OptimOptions,
    SummaryRow,
    optimize_marginal_context,
    sample_posterior_context,
    summarize,
)
from .model import (
    DesignSet,
    ModelSpec,
    Variant,
    _warn_if_no_intercept,
    assemble_from_dense_v,
    ma_covariance_shape,
    susceptibility_diag_eps,
    susceptibility_diag_x,
)


@dataclass(frozen=True)
class EgoPartition:
    """Index sets and observed adjacency blocks of an egocentric sample.

    Alters are the non-sampled actors that some ego has an out-edge to; by
    construction egos have no observed edge to any remaining ("other") actor.
    """

    ego_ids: np.ndarray
    alter_ids: np.ndarray
    other_ids: np.ndarray
    a_e: np.ndarray
    a_ea: np.ndarray

    @property
    def n_e(self) -> int:
        return self.ego_ids.shape[0]

    @property
    def n_a(self) -> int:
        return self.alter_ids.shape[0]


def partition(net: Network, ego_ids) -> EgoPartition:
    """Split actors into egos / alters / others and extract A_e, A_ea."""
    ids = np.asarray(list(ego_ids), dtype=int)
    if ids.size == 0:
        raise EmptyEgoSet("need at least one ego")
    if np.unique(ids).size != ids.size:
        raise ValueError("ego ids contain duplicates")
    if ids.min() < 0 or ids.max() >= net.n:
        raise ValueError(f"ego id out of range 0..{net.n - 1}")
    rows = net.adjacency[ids]
    touched = np.unique(rows.indices)
    alter = np.setdiff1d(touched, ids)
    other = np.setdiff1d(np.arange(net.n), np.union1d(ids, alter))
    return EgoPartition(
        ego_ids=ids,
        alter_ids=alter,
        other_ids=other,
        a_e=rows[:, ids].toarray(),
        a_ea=rows[:, alter].toarray(),
    )


@dataclass
class EgoDesign:
    """Design rows restricted to what an egocentric sample observes.

    X2 is needed for egos and alters (the alters' covariates enter the mean
    through A_ea X2a); X1 and the W matrices only for egos.
    """

    x1e: np.ndarray
    x2e: np.ndarray
    x2a: np.ndarray
    wxe: np.ndarray
    wepse: np.ndarray
    x1_names: list[str] = field(default_factory=list)
    x2_names: list[str] = field(default_factory=list)
    wx_names: list[str] = field(default_factory=list)
    weps_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("x1e", "x2e", "x2a", "wxe", "wepse"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            setattr(self, name, arr)
        if self.x2a.size and not np.all(np.isfinite(self.x2a)):
            raise MissingAlterCovariates("alter rows of X2 contain missing values")
        for name in ("x1e", "x2e", "wxe", "wepse"):
            arr = getattr(self, name)
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if self.x2a.shape[1] != self.x2e.shape[1]:
            raise ValueError("x2a and x2e disagree on column count")
        for attr, m in (("x1_names", self.x1e), ("x2_names", self.x2e),
                        ("wx_names", self.wxe), ("weps_names", self.wepse)):
            names = list(getattr(self, attr))
            if not names:
                prefix = attr[:-6]
                names = [f"{prefix}{j}" for j in range(m.shape[1])]
            setattr(self, attr, names)

    @property
    def n_e(self) -> int:
        return self.x1e.shape[0]

    @property
    def p1(self) -> int:
        return self.x1e.shape[1]

    @property
    def p2(self) -> int:
        return self.x2e.shape[1]

    @property
    def q1(self) -> int:
        return self.wxe.shape[1]

    @property
    def q2(self) -> int:
        return self.wepse.shape[1]


def restrict_design(design: DesignSet, part: EgoPartition) -> EgoDesign:
    """Slice a full design down to the observed rows (others are never read)."""
    e, a = part.ego_ids, part.alter_ids
    return EgoDesign(
        x1e=design.x1[e], x2e=design.x2[e], x2a=design.x2[a],
        wxe=design.wx[e], wepse=design.weps[e],
        x1_names=design.x1_names, x2_names=design.x2_names,
        wx_names=design.wx_names, weps_names=design.weps_names,
    )


class EgoContext:
    """Counterpart of ModelContext for the egocentric moving-average model."""

    def __init__(self, part: EgoPartition, edesign: EgoDesign, y_e, spec: ModelSpec):
        if spec.variant not in (Variant.MOVING_AVERAGE, Variant.EGO_MOVING_AVERAGE):
            raise ValueError(f"egocentric fits support the moving-average family, got {spec.variant}")
        if part.n_e != edesign.n_e:
            raise ValueError("partition and design disagree on the number of egos")
        self.part = part
        self.edesign = edesign
        self.spec = spec
        self.y = np.asarray(y_e, dtype=float).ravel()
        if self.y.shape[0] != part.n_e:
            raise ValueError(f"y_e has {self.y.shape[0]} entries for {part.n_e} egos")
        if edesign.p2:
            ax2 = part.a_e @ edesign.x2e
            if part.n_a:
                ax2 = ax2 + part.a_ea @ edesign.x2a
            self.ax2_e = ax2
        else:
            self.ax2_e = np.zeros((part.n_e, 0))
        self.ea_gram = part.a_ea @ part.a_ea.T if part.n_a else None
        _warn_if_no_intercept(edesign.wepse)

    @property
    def q1(self) -> int:
        return self.edesign.q1

    @property
    def q2(self) -> int:
        return self.edesign.q2

    @property
    def p1(self) -> int:
        return self.edesign.p1

    @property
    def p(self) -> int:
        return self.edesign.p1 + self.edesign.p2

    @property
    def beta_names(self) -> list[str]:
        return list(self.edesign.x1_names) + list(self.edesign.x2_names)

    @property
    def gamma_x_names(self) -> list[str]:
        return list(self.edesign.wx_names)

    @property
    def gamma_eps_names(self) -> list[str]:
        return list(self.edesign.weps_names)

    def assemble(self, gamma_x, gamma_eps):
        ed = self.edesign
        gamma_x = np.atleast_1d(np.asarray(gamma_x, dtype=float)) if np.size(gamma_x) else np.zeros(0)
        gamma_eps = np.atleast_1d(np.asarray(gamma_eps, dtype=float)) if np.size(gamma_eps) else np.zeros(0)
        if gamma_x.shape != (ed.q1,):
            raise ValueError(f"gamma_x has shape {gamma_x.shape}, expected ({ed.q1},)")
        if gamma_eps.shape != (ed.q2,):
            raise ValueError(f"gamma_eps has shape {gamma_eps.shape}, expected ({ed.q2},)")
        rx = susceptibility_diag_x(ed.wxe, gamma_x)
        x_base = np.hstack([ed.x1e, rx[:, None] * self.ax2_e]) if ed.p2 else ed.x1e
        reps = susceptibility_diag_eps(ed.wepse, gamma_eps)
        v = ma_covariance_shape(self.part.a_e, reps, self.ea_gram)
        return assemble_from_dense_v(
            Variant.EGO_MOVING_AVERAGE, v, x_base, self.y, gamma_x, gamma_eps,
            self.spec, n_obs=self.part.n_e,
        )


def assemble_ego_ma(part: EgoPartition, edesign: EgoDesign, gamma_x, gamma_eps,
                    y_e, spec: ModelSpec):
    """One-shot egocentric assembly; use EgoContext for repeated evaluation."""
    return EgoContext(part, edesign, y_e, spec).assemble(gamma_x, gamma_eps)


# ---------------------------------------------------------------- subsample sweeps

@dataclass
class EgoFitRecord:
    n_e: int
    replicate: int
    ego_ids: np.ndarray
    ok: bool
    error: str | None
    rows: list[SummaryRow] | None


@dataclass
class EgoSweepResult:
    sizes: list[int]
    replicates: int
    records: list[EgoFitRecord]
    aggregates: list[dict]

    def failures(self) -> list[EgoFitRecord]:
        return [r for r in self.records if not r.ok]


def _sweep_task(args):
    net, design, y, spec, m_draws, opts, seed, n_e, r = args
    ss = np.random.SeedSequence([seed, n_e, r])
    kid_subset, kid_sample = ss.spawn(2)
    rng = np.random.default_rng(kid_subset)
    egos = np.sort(rng.choice(net.n, size=n_e, replace=False))
    try:
        part = partition(net, egos)
        edesign = restrict_design(design, part)
        ctx = EgoContext(part, edesign, y[egos], spec)
        gp = optimize_marginal_context(ctx, opts=opts)
        draws = sample_posterior_context(ctx, gp, m_draws, kid_sample)
        summ = summarize(draws, wx=edesign.wxe, weps=edesign.wepse)
        return EgoFitRecord(n_e=n_e, replicate=r, ego_ids=egos, ok=True, error=None, rows=summ.rows)
    except NetsuscError as exc:
        return EgoFitRecord(
            n_e=n_e, replicate=r, ego_ids=egos, ok=False,
            error=f"{type(exc).__name__}: {exc}", rows=None,
        )


def ego_sweep(net: Network, design: DesignSet, y, spec: ModelSpec, sizes,
              replicates: int, seed: int, m_draws: int = 2000,
              opts: OptimOptions | None = None, threads: int | None = None) -> EgoSweepResult:
    """Fit uniform ego subsamples of each requested size and average the summaries.

    Replicates run concurrently; each owns an RNG substream keyed by
    (seed, n_e, replicate), so results do not depend on scheduling.
    Per-replicate failures are recorded, not fatal.
    """
    sizes = [int(s) for s in sizes]
    y = np.asarray(y, dtype=float).ravel()
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    for s in sizes:
        if not 1 <= s <= net.n:
            raise ValueError(f"subsample size {s} outside 1..{net.n}")
    tasks = [
        (net, design, y, spec, m_draws, opts, int(seed), n_e, r)
        for n_e in sizes
        for r in range(replicates)
    ]
    if threads == 1 or len(tasks) == 1:
        records = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_sweep_task, tasks, chunksize=1))

    aggregates = []
    for n_e in sizes:
        ok = [rec for rec in records if rec.n_e == n_e and rec.ok]
        if not ok:
            continue
        for j, row in enumerate(ok[0].rows):
            aggregates.append({
                "n_e": n_e,
                "parameter": row.parameter,
                "block": row.block,
                "mean": float(np.mean([rec.rows[j].mean for rec in ok])),
                "lb95": float(np.mean([rec.rows[j].lb95 for rec in ok])),
                "ub95": float(np.mean([rec.rows[j].ub95 for rec in ok])),
                "n_ok": len(ok),
            })
    return EgoSweepResult(sizes=sizes, replicates=replicates, records=records, aggregates=aggregates)
