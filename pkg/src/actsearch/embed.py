"""Fuzzy neighbour-graph embedding (UMAP-style) and the union of representations.

Pipeline per feature family: exact k-nearest neighbours -> directed fuzzy
memberships with per-point distance scaling -> symmetric fuzzy graph.
Families are combined with the probabilistic sum ``a + b - ab`` and a 2-D
layout is optimised on the combined graph.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import shortest_path
from scipy.spatial.distance import cdist

# curve constants for min_dist=0.1, spread=1.0
FALLBACK_AB = (1.576943460405378, 0.8950608781227859)

Metric = str | Callable[[np.ndarray, np.ndarray], float]


class EmbeddingError(ValueError):
    pass


# --- distances and neighbours ------------------------------------------------


def pairwise_distances(x: np.ndarray, y: np.ndarray | None = None, metric: Metric = "outputs") -> np.ndarray:
    """Distance matrix under ``outputs`` (RMS difference), ``spectra`` (Manhattan)
    or ``euclidean``; a callable metric is applied pair by pair."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = x if y is None else np.atleast_2d(np.asarray(y, dtype=np.float64))
    if metric == "outputs":
        return np.sqrt(np.maximum(cdist(x, y, "sqeuclidean") / x.shape[1], 0.0))
    if metric in ("spectra", "manhattan"):
        return cdist(x, y, "cityblock")
    if metric == "euclidean":
        return cdist(x, y, "euclidean")
    if callable(metric):
        return np.array([[metric(a, b) for b in y] for a in x])
    raise EmbeddingError(f"unknown metric {metric!r}")


@dataclass
class KnnGraph:
    indices: np.ndarray  # (n, k), nearest first
    distances: np.ndarray  # (n, k)

    @property
    def n_points(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def knn_from_distances(d: np.ndarray, k: int) -> KnnGraph:
    n = d.shape[0]
    if n == 0:
        raise EmbeddingError("empty feature table")
    if not 1 <= k < n:
        raise EmbeddingError(f"need 1 <= k < n_points, got k={k}, n={n}")
    d = d.copy()
    np.fill_diagonal(d, np.inf)
    idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    return KnnGraph(idx, np.take_along_axis(d, idx, axis=1))


def knn_graph(points: np.ndarray, metric: Metric, k: int) -> KnnGraph:
    """Exact ``k`` nearest neighbours of every point (self excluded, ties by index)."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise EmbeddingError("empty feature table")
    return knn_from_distances(pairwise_distances(points, metric=metric), k)


# --- fuzzy sets ----------------------------------------------------------------


def smooth_knn(distances: np.ndarray, n_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``(rho, sigma)`` with ``rho`` the nearest distance and ``sigma``
    solving ``sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)`` by bisection."""
    distances = np.asarray(distances, dtype=np.float64)
    n, k = distances.shape
    target = np.log2(k)
    rho = distances[:, 0].copy()
    excess = np.maximum(distances - rho[:, None], 0.0)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    for _ in range(n_iter):
        psum = np.exp(-excess / mid[:, None]).sum(axis=1)
        too_big = psum > target
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
        mid = np.where(too_big, (lo + hi) / 2.0, np.where(np.isinf(hi), mid * 2.0, (lo + hi) / 2.0))
    mid = np.where(excess.max(axis=1) == 0, 1.0, mid)  # all neighbours at rho: sigma is irrelevant
    return rho, np.maximum(mid, 1e-300)


def memberships(distances: np.ndarray, rho: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.exp(-np.maximum(distances - rho[:, None], 0.0) / sigma[:, None])


def probabilistic_sum(a, b):
    """``a + b - a*b`` for dense arrays or sparse matrices."""
    if sparse.issparse(a) or sparse.issparse(b):
        a, b = sparse.csr_matrix(a), sparse.csr_matrix(b)
        return (a + b - a.multiply(b)).tocsr()
    return a + b - a * b


@dataclass
class FuzzyGraph:
    membership: sparse.csr_matrix  # symmetric, entries in [0, 1], zero diagonal
    knn: KnnGraph | None = None
    directed: sparse.csr_matrix | None = None

    @property
    def n_points(self) -> int:
        return self.membership.shape[0]


def fuzzy_set(knn: KnnGraph) -> FuzzyGraph:
    """Directed memberships from local distance scaling, symmetrised by a+b-ab."""
    n, k = knn.indices.shape
    rho, sigma = smooth_knn(knn.distances)
    vals = memberships(knn.distances, rho, sigma)
    rows = np.repeat(np.arange(n), k)
    w = sparse.csr_matrix((vals.ravel(), (rows, knn.indices.ravel())), shape=(n, n))
    w.sum_duplicates()
    sym = probabilistic_sum(w, w.T)
    sym.setdiag(0.0)
    sym.eliminate_zeros()
    return FuzzyGraph(sym, knn, w)


def union(g1: FuzzyGraph, g2: FuzzyGraph) -> FuzzyGraph:
    """Entry-wise probabilistic sum of two fuzzy graphs over the same points."""
    if g1.n_points != g2.n_points:
        raise EmbeddingError(f"point sets differ: {g1.n_points} vs {g2.n_points}")
    return FuzzyGraph(probabilistic_sum(g1.membership, g2.membership))


# --- layout ---------------------------------------------------------------------


@dataclass
class LayoutConfig:
    min_dist: float = 0.1
    spread: float = 1.0
    epochs: int = 200
    learning_rate: float = 1.0
    negative_sample_rate: int = 5
    seed: int = 0


def find_ab_params(spread: float = 1.0, min_dist: float = 0.1) -> tuple[float, float]:
    """Fit ``1 / (1 + a d^(2b))`` to the min_dist-shifted exponential target."""
    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    try:
        (a, b), _ = curve_fit(lambda x, a, b: 1.0 / (1.0 + a * x ** (2 * b)), xv, yv)
        return float(a), float(b)
    except RuntimeError:
        if abs(min_dist - 0.1) < 1e-12 and abs(spread - 1.0) < 1e-12:
            return FALLBACK_AB
        raise


def initial_layout(graph: FuzzyGraph, seed: int = 0) -> np.ndarray:
    """Classical MDS of graph geodesics (edge length ``-log(membership)``), scaled
    to [-10, 10] with a small seeded jitter."""
    n = graph.n_points
    rng = np.random.default_rng(seed)
    if n <= 2:
        return rng.normal(0.0, 1.0, size=(n, 2))
    m = graph.membership.tocoo()
    lengths = sparse.csr_matrix((-np.log(np.clip(m.data, 1e-12, 1.0)) + 1e-3, (m.row, m.col)), shape=(n, n))
    d = shortest_path(lengths, method="D", directed=False)
    finite = np.isfinite(d)
    fill = 1.5 * d[finite].max() if finite.any() else 1.0
    d = np.where(finite, d, fill)
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ (d * d) @ j
    vals, vecs = np.linalg.eigh(b)
    order = np.argsort(vals)[::-1][:2]
    coords = vecs[:, order] * np.sqrt(np.maximum(vals[order], 0.0))
    # fix eigenvector signs so the result does not depend on the solver
    signs = np.sign(coords[np.argmax(np.abs(coords), axis=0), [0, 1]])
    coords = coords * np.where(signs == 0, 1.0, signs)
    span = np.abs(coords).max()
    coords = coords * (10.0 / span) if span > 0 else coords
    return coords + rng.normal(0.0, 1e-3, size=coords.shape)


def _clip(g):
    return np.clip(g, -4.0, 4.0)


def optimize_layout(
    coords: np.ndarray,
    head: np.ndarray,
    tail: np.ndarray,
    weights: np.ndarray,
    cfg: LayoutConfig,
    a: float,
    b: float,
    rng: np.random.Generator,
    move_tail: bool = True,
    movable: np.ndarray | None = None,
    n_reference: int | None = None,
    neg_membership: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Stochastic optimisation of the fuzzy cross-entropy with negative sampling.

    Edges are sampled with frequency proportional to their weight; all edges due
    in an epoch are updated together from the epoch's starting positions.
    A negative sample ``(i, k)`` is scaled by ``1 - w_ik`` (the repulsive term's
    weight in the cross-entropy), given by ``neg_membership``.
    """
    y = coords.copy()
    n_ref = y.shape[0] if n_reference is None else n_reference
    if len(weights) == 0:
        return y
    eps = weights.max() / weights
    eps_neg = eps / cfg.negative_sample_rate
    next_sample = eps.copy()
    next_neg = eps_neg.copy()
    for epoch in range(cfg.epochs):
        alpha = cfg.learning_rate * (1.0 - epoch / cfg.epochs)
        active = np.nonzero(next_sample <= epoch + 1)[0]
        if active.size == 0:
            continue
        h, t = head[active], tail[active]
        diff = y[h] - y[t]
        d2 = np.sum(diff * diff, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(d2 > 0, -2.0 * a * b * d2 ** (b - 1.0) / (a * d2 ** b + 1.0), 0.0)
        grad = _clip(coef[:, None] * diff) * alpha
        delta = np.zeros_like(y)
        np.add.at(delta, h, grad)
        if move_tail:
            np.add.at(delta, t, -grad)
        next_sample[active] += eps[active]

        n_neg = np.floor((epoch + 1 - next_neg[active]) / eps_neg[active]).astype(int)
        n_neg = np.maximum(n_neg, 0)
        next_neg[active] += n_neg * eps_neg[active]
        nh = np.repeat(h, n_neg)
        if nh.size:
            nk = rng.integers(0, n_ref, size=nh.size)
            keep = nk != nh
            nh, nk = nh[keep], nk[keep]
            diff = y[nh] - y[nk]
            d2 = np.sum(diff * diff, axis=1)
            coef = 2.0 * b / ((0.001 + d2) * (a * d2 ** b + 1.0))
            g = np.where(d2[:, None] > 0, _clip(coef[:, None] * diff), 4.0)
            if neg_membership is not None:
                g = g * (1.0 - neg_membership(nh, nk))[:, None]
            np.add.at(delta, nh, g * alpha)
        if movable is not None:
            delta[~movable] = 0.0
        y += delta
    return y


@dataclass
class EmbeddingAtlas:
    coordinates: np.ndarray
    canonicals: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.coordinates)):
            raise EmbeddingError("layout produced non-finite coordinates")

    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.canonicals)}

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": self.config}) + "\n")
            for c, (x, y) in zip(self.canonicals, self.coordinates):
                fh.write(json.dumps({"canonical": c, "x": float(x), "y": float(y)}) + "\n")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["canonical", "x", "y"])
            for c, (x, y) in zip(self.canonicals, self.coordinates):
                w.writerow([c, repr(float(x)), repr(float(y))])

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "EmbeddingAtlas":
        config, names, coords = {}, [], []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                if "header" in d:
                    config = d["header"]
                else:
                    names.append(d["canonical"])
                    coords.append((d["x"], d["y"]))
        return cls(np.array(coords, dtype=np.float64).reshape(-1, 2), names, config)


def layout(g: FuzzyGraph, cfg: LayoutConfig | None = None, canonicals: Sequence[str] | None = None) -> EmbeddingAtlas:
    """2-D coordinates for every point of ``g``; deterministic given ``cfg.seed``.

    With ``canonicals`` the optimisation runs in sorted-canonical order, so a
    permuted input yields the same coordinates per function.
    """
    cfg = cfg or LayoutConfig()
    a, b = find_ab_params(cfg.spread, cfg.min_dist)
    order = np.argsort(np.asarray(canonicals, dtype=object), kind="stable") if canonicals is not None else None
    member = g.membership.tocsr()
    if order is not None:
        member = member[order][:, order]
    member = sparse.csr_matrix(member)
    member.sort_indices()  # edge order drives the sampling stream
    sub = FuzzyGraph(member)
    coords = initial_layout(sub, cfg.seed)
    m = sub.membership.tocoo()
    keep = m.data >= m.data.max() / cfg.epochs if m.nnz else np.zeros(0, dtype=bool)
    rng = np.random.default_rng(cfg.seed)
    n = sub.n_points
    keys = m.row.astype(np.int64) * n + m.col  # row-major, already sorted

    def lookup(i, k):
        q = i.astype(np.int64) * n + k
        pos = np.minimum(np.searchsorted(keys, q), max(len(keys) - 1, 0))
        return np.where(keys[pos] == q, m.data[pos], 0.0) if len(keys) else np.zeros(len(q))

    y = optimize_layout(coords, m.row[keep], m.col[keep], m.data[keep], cfg, a, b, rng, neg_membership=lookup)
    if order is not None:
        out = np.empty_like(y)
        out[order] = y
        y = out
    conf = asdict(cfg) | {"a": a, "b": b}
    return EmbeddingAtlas(y, list(canonicals) if canonicals is not None else [], conf)


# --- feature families and the combined model ---------------------------------


@dataclass
class FeatureSource:
    """One feature family: a feature matrix, its metric and neighbour count."""

    name: str
    matrix: np.ndarray
    metric: Metric
    n_neighbors: int

    def graph(self) -> FuzzyGraph:
        k = min(self.n_neighbors, self.matrix.shape[0] - 1)
        return fuzzy_set(knn_graph(self.matrix, self.metric, k))


def combined_graph(sources: Sequence[FeatureSource]) -> FuzzyGraph:
    if not sources:
        raise EmbeddingError("no feature sources")
    g = sources[0].graph()
    for s in sources[1:]:
        g = union(g, s.graph())
    return g


def fit_atlas(
    sources: Sequence[FeatureSource], canonicals: Sequence[str], cfg: LayoutConfig | None = None
) -> tuple[EmbeddingAtlas, FuzzyGraph]:
    g = combined_graph(sources)
    atlas = layout(g, cfg, canonicals)
    atlas.config["features"] = [s.name for s in sources]
    atlas.config["n_neighbors"] = {s.name: s.n_neighbors for s in sources}
    return atlas, g


def embed_new(
    atlas: EmbeddingAtlas,
    sources: Sequence[FeatureSource],
    new_features: Sequence[np.ndarray | None],
    cfg: LayoutConfig | None = None,
    local_epochs: int = 30,
) -> np.ndarray:
    """Place an unseen point against a frozen atlas.

    The start is the membership-weighted mean of its nearest embedded
    neighbours (or the mean of exact feature matches when any exist), followed
    by a short optimisation that moves only the new point.
    """
    cfg = cfg or LayoutConfig()
    n = atlas.coordinates.shape[0]
    member = np.zeros(n)
    exact = np.zeros(n, dtype=bool)
    for src, feat in zip(sources, new_features):
        if feat is None:
            continue
        d = pairwise_distances(np.asarray(feat, dtype=np.float64)[None, :], src.matrix, src.metric)[0]
        finite = np.isfinite(d)
        if not finite.any():
            continue
        k = min(src.n_neighbors, int(finite.sum()))
        d = np.where(finite, d, np.inf)
        idx = np.argsort(d, kind="stable")[:k]
        rho, sigma = smooth_knn(d[idx][None, :])
        w = memberships(d[idx][None, :], rho, sigma)[0]
        member[idx] = probabilistic_sum(member[idx], w)
        exact[idx[d[idx] == 0]] = True
    if not member.any():
        raise EmbeddingError("no valid neighbours for the new point")
    if exact.any():
        start = atlas.coordinates[exact].mean(axis=0)
    else:
        start = (member[:, None] * atlas.coordinates).sum(axis=0) / member.sum()
    if local_epochs <= 0:
        return start
    a, b = find_ab_params(cfg.spread, cfg.min_dist)
    nbrs = np.nonzero(member)[0]
    coords = np.vstack([atlas.coordinates, start[None, :]])
    head = np.full(nbrs.size, n)
    movable = np.zeros(n + 1, dtype=bool)
    movable[n] = True
    local = LayoutConfig(cfg.min_dist, cfg.spread, local_epochs, cfg.learning_rate * 0.1,
                         cfg.negative_sample_rate, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    y = optimize_layout(coords, head, nbrs, member[nbrs], local, a, b, rng,
                        move_tail=False, movable=movable, n_reference=n,
                        neg_membership=lambda i, k: member[k])
    return y[n]


# --- quality ----------------------------------------------------------------------


def trustworthiness(high_d: np.ndarray, low: np.ndarray, k: int = 10) -> float:
    """Trustworthiness of a layout given the high-dimensional distance matrix.

    ``1 - 2/(n k (2n - 3k - 1)) * sum_i sum_{j in U_i} (r(i, j) - k)`` where
    ``U_i`` are layout neighbours of ``i`` that are not among its ``k``
    nearest original neighbours and ``r`` is the original-space rank.
    """
    n = high_d.shape[0]
    if not 1 <= k < n / 2:
        raise EmbeddingError(f"trustworthiness needs 1 <= k < n/2, got k={k}, n={n}")
    hd = high_d.astype(np.float64).copy()
    np.fill_diagonal(hd, np.inf)
    order = np.argsort(hd, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(1, n + 1)[None, :]
    ld = pairwise_distances(low, metric="euclidean")
    np.fill_diagonal(ld, np.inf)
    low_nn = np.argsort(ld, axis=1, kind="stable")[:, :k]
    r = ranks[rows, low_nn] - k
    penalty = np.sum(np.maximum(r, 0))
    return float(1.0 - penalty * 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)))
