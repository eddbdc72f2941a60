"""Adjacency handling and the local network features used as susceptibility covariates.

The adjacency convention follows the usual one for influence models:
``A[i, j] != 0`` means an edge from actor i to actor j, and the diagonal is
zero.  Centrality features are computed on the unweighted skeleton of the
graph; degree (and hence the inverse network size) uses edge weights when
present.
"""

from __future__ import annotations

import csv
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    AsymmetricUndirected,
    IsolatedActor,
    NoConvergence,
    NoEdges,
    NonzeroDiagonal,
    ParseError,
    TooSmall,
    ZeroVariance,
)

FEATURE_COLUMNS = ("degree", "inv_size", "betweenness", "lcc", "eigencentrality")


@dataclass(frozen=True)
class Network:
    """A validated actor network.

    Attributes
    ----------
    n : number of actors.
    adjacency : n x n CSR matrix of edge weights, zero diagonal.
    directed : if False, the adjacency is symmetric.
    """

    n: int
    adjacency: sp.csr_matrix
    directed: bool

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray()

    def skeleton(self) -> sp.csr_matrix:
        """Binary (0/1) copy of the adjacency."""
        s = self.adjacency.copy()
        s.data = np.ones_like(s.data)
        return s

    @property
    def n_edges(self) -> int:
        nnz = self.adjacency.nnz
        return nnz if self.directed else nnz // 2


def validate_network(raw_adjacency, directed: bool = False) -> Network:
    """Check invariants of a raw adjacency matrix and wrap it in a Network.

    Raises NonzeroDiagonal, AsymmetricUndirected, or TooSmall.
    """
    if sp.issparse(raw_adjacency):
        a = sp.csr_matrix(raw_adjacency, dtype=float)
    else:
        arr = np.asarray(raw_adjacency, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {arr.shape}")
        a = sp.csr_matrix(arr)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if n < 2:
        raise TooSmall(f"need at least 2 actors, got {n}")
    diag = a.diagonal()
    if np.any(diag != 0.0):
        bad = int(np.nonzero(diag)[0][0])
        raise NonzeroDiagonal(f"A[{bad},{bad}] = {diag[bad]} (self-ties are not allowed)")
    if not directed:
        asym = (a - a.T)
        if asym.nnz and np.max(np.abs(asym.data)) > 0.0:
            raise AsymmetricUndirected("adjacency declared undirected but is asymmetric")
    a.eliminate_zeros()
    a.sort_indices()
    return Network(n=n, adjacency=a, directed=directed)


def degrees(net: Network) -> np.ndarray:
    """Weight-sum of each actor's ties (out-degree for directed networks)."""
    return np.asarray(net.adjacency.sum(axis=1)).ravel()


def degree_and_inverse(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Degrees and their elementwise reciprocals.

    Raises IsolatedActor for the first actor with degree zero, since the
    inverse network size is undefined there.
    """
    deg = degrees(net)
    zero = np.nonzero(deg == 0.0)[0]
    if zero.size:
        raise IsolatedActor(int(zero[0]))
    return deg, 1.0 / deg


def _neighbor_lists(skel: sp.csr_matrix) -> list[np.ndarray]:
    indptr, indices = skel.indptr, skel.indices
    return [indices[indptr[i]:indptr[i + 1]] for i in range(skel.shape[0])]


def betweenness(net: Network) -> np.ndarray:
    """Shortest-path betweenness on the unweighted skeleton (Brandes accumulation).

    Directed networks sum contributions over ordered pairs; undirected over
    unordered pairs.  Disconnected pairs contribute zero.
    """
    n = net.n
    nbrs = _neighbor_lists(net.skeleton())
    cb = np.zeros(n)
    for s in range(n):
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        preds: list[list[int]] = [[] for _ in range(n)]
        order: list[int] = []
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            dv = dist[v]
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dv + 1
                    queue.append(w)
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            coeff = (1.0 + delta[w]) / sigma[w]
            for v in preds[w]:
                delta[v] += sigma[v] * coeff
            if w != s:
                cb[w] += delta[w]
    if not net.directed:
        cb /= 2.0
    return cb


def local_clustering(net: Network) -> np.ndarray:
    """Fraction of an actor's neighbor pairs that are themselves connected.

    Defined as 0 for actors with fewer than two neighbors, so downstream
    design matrices stay total.
    """
    skel = net.skeleton()
    nbrs = _neighbor_lists(skel)
    lcc = np.zeros(net.n)
    for i, nb in enumerate(nbrs):
        d = nb.size
        if d < 2:
            continue
        sub = skel[nb][:, nb]
        # undirected: nnz double-counts edges and the denominator halves, so
        # the ratio below covers both the directed and undirected definitions
        lcc[i] = sub.nnz / (d * (d - 1))
    return lcc


def eigencentrality(net: Network, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Leading eigenvector of the (skeleton) adjacency, unit norm, nonnegative.

    Power iteration on I + A: the identity shift leaves the eigenvectors
    unchanged but separates the Perron root from a tied negative eigenvalue
    (bipartite graphs), so e.g. stars converge.  Near-degenerate spectra can
    still exhaust max_iter, which raises NoConvergence.
    """
    skel = net.skeleton()
    if skel.nnz == 0:
        raise NoEdges("eigencentrality needs at least one edge")
    n = net.n
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        x_new = x + skel @ x
        nrm = np.linalg.norm(x_new)
        if nrm == 0.0 or not np.isfinite(nrm):
            raise NoConvergence(max_iter, "power iteration collapsed")
        x_new /= nrm
        if np.linalg.norm(x_new - x) < tol:
            if x_new.sum() < 0.0:
                x_new = -x_new
            return x_new
        x = x_new
    raise NoConvergence(max_iter)


def row_normalize(net: Network) -> sp.csr_matrix:
    """Divide each adjacency row by its (weighted) row sum.

    Raises IsolatedActor for a zero row.
    """
    deg = degrees(net)
    zero = np.nonzero(deg == 0.0)[0]
    if zero.size:
        raise IsolatedActor(int(zero[0]), f"actor {int(zero[0])} has a zero row; cannot row-normalize")
    d_inv = sp.diags(1.0 / deg)
    out = sp.csr_matrix(d_inv @ net.adjacency)
    out.sort_indices()
    return out


@dataclass(frozen=True)
class LocalFeatures:
    """Per-actor network features used in W_x / W_eps."""

    inv_network_size: np.ndarray
    betweenness: np.ndarray
    lcc: np.ndarray
    eigencentrality: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return {
            "inv_size": self.inv_network_size,
            "betweenness": self.betweenness,
            "lcc": self.lcc,
            "eigencentrality": self.eigencentrality,
        }[name]


def local_features(net: Network, tol: float = 1e-10, max_iter: int = 10_000) -> LocalFeatures:
    """All susceptibility features at once (degree must be >= 1 everywhere)."""
    _, inv = degree_and_inverse(net)
    return LocalFeatures(
        inv_network_size=inv,
        betweenness=betweenness(net),
        lcc=local_clustering(net),
        eigencentrality=eigencentrality(net, tol=tol, max_iter=max_iter),
    )


def standardize(columns, categorical_mask) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center/scale non-categorical columns to zero mean, unit sample SD.

    Returns (matrix, means, sds); categorical columns pass through with
    identity metadata (mean 0, sd 1) so reports can always be back-transformed
    as x_orig = x_std * sd + mean.
    """
    x = np.array(columns, dtype=float, copy=True)
    if x.ndim != 2:
        raise ValueError("columns must be 2-D")
    mask = np.asarray(categorical_mask, dtype=bool)
    if mask.shape != (x.shape[1],):
        raise ValueError("categorical_mask length must match column count")
    means = np.zeros(x.shape[1])
    sds = np.ones(x.shape[1])
    for j in range(x.shape[1]):
        if mask[j]:
            continue
        m = x[:, j].mean()
        s = x[:, j].std(ddof=1)
        if not np.isfinite(s) or s <= 0.0:
            raise ZeroVariance(j)
        x[:, j] = (x[:, j] - m) / s
        means[j] = m
        sds[j] = s
    return x, means, sds


# ---------------------------------------------------------------- edge-list IO

def read_edge_list(path) -> tuple[sp.csr_matrix, list[str]]:
    """Read a `src,dst[,weight]` CSV into an adjacency matrix.

    Labels are mapped to indices in first-seen order; the label list is
    returned alongside.  Duplicate (src, dst) rows collapse to one edge with
    a warning (last weight wins).  Edges are stored exactly as given; callers
    decide directedness downstream (undirected files list each edge once and
    are symmetrized here when a reverse entry is absent).
    """
    labels: list[str] = []
    index: dict[str, int] = {}
    entries: dict[tuple[int, int], float] = {}

    def actor(tok: str, lineno: int) -> int:
        tok = tok.strip()
        if not tok:
            raise ParseError("empty actor id", line=lineno)
        if tok not in index:
            index[tok] = len(labels)
            labels.append(tok)
        return index[tok]

    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header is None:
            raise TooSmall("empty edge file")
        cols = [c.strip().lower() for c in header]
        if cols[:2] != ["src", "dst"]:
            raise ParseError("expected header 'src,dst[,weight]'", line=1)
        has_weight = len(cols) > 2 and cols[2] == "weight"
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError("need at least src and dst", line=lineno)
            i = actor(row[0], lineno)
            j = actor(row[1], lineno)
            if i == j:
                raise ParseError(f"self-tie on actor '{row[0].strip()}'", line=lineno)
            w = 1.0
            if has_weight and len(row) > 2 and row[2].strip():
                try:
                    w = float(row[2])
                except ValueError as exc:
                    raise ParseError(f"bad weight {row[2]!r}", line=lineno) from exc
            key = (i, j)
            if key in entries:
                warnings.warn(f"duplicate edge {labels[i]}->{labels[j]} at line {lineno}; keeping last weight")
            entries[key] = w

    n = len(labels)
    if n < 2:
        raise TooSmall(f"edge list defines {n} actor(s); need at least 2")
    rows, cols_, data = [], [], []
    for (i, j), w in entries.items():
        rows.append(i)
        cols_.append(j)
        data.append(w)
        if (j, i) not in entries:
            rows.append(j)
            cols_.append(i)
            data.append(w)
    adj = sp.csr_matrix((data, (rows, cols_)), shape=(n, n))
    return adj, labels


def feature_table(net: Network) -> tuple[list[str], np.ndarray]:
    """Rows of the feature CSV: degree, inv_size, betweenness, lcc, eigencentrality.

    Isolated actors get NaN in inv_size rather than failing the whole table.
    """
    deg = degrees(net)
    inv = np.full(net.n, np.nan)
    nz = deg > 0.0
    inv[nz] = 1.0 / deg[nz]
    btw = betweenness(net)
    lcc = local_clustering(net)
    eig = eigencentrality(net)
    table = np.column_stack([deg, inv, btw, lcc, eig])
    return list(FEATURE_COLUMNS), table
