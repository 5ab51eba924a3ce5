"""Embedding diagnostics: cosine-similarity structure, PCA, linear probes,
random-forest importances and density-clustering attribution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import AnalysisError, UsageError
from .ingest import PATH_ATTRIBUTES, SOURCE_ATTRIBUTES, CatalogRow
from .tensornet import embed as _embed_net


@dataclass
class EmbeddingMatrix:
    rows: np.ndarray  # (n, d)
    event_ids: list[str]
    station_ids: list[str]
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        n = self.rows.shape[0]
        if self.rows.ndim != 2:
            raise UsageError(f"embedding rows must be 2-D, got {self.rows.shape}")
        if len(self.event_ids) != n or len(self.station_ids) != n:
            raise UsageError("row count must equal metadata count")
        for k, v in self.attributes.items():
            if len(v) != n:
                raise UsageError(f"attribute {k!r} has {len(v)} values for {n} rows")
        if not np.all(np.isfinite(self.rows)):
            raise AnalysisError("embedding contains non-finite entries")

    def __len__(self):
        return self.rows.shape[0]

    @classmethod
    def from_rows(cls, rows, catalog_rows: list[CatalogRow]) -> "EmbeddingMatrix":
        names = SOURCE_ATTRIBUTES + PATH_ATTRIBUTES
        attrs = {k: np.array([r.attribute(k) for r in catalog_rows], dtype=float) for k in names}
        return cls(rows, [r.event_id for r in catalog_rows], [r.station_id for r in catalog_rows],
                   attrs)


def embed(bundle, samples, catalog_rows: list[CatalogRow] | None = None,
          chunk: int = 256) -> EmbeddingMatrix:
    """Eval-mode encoder outputs for preprocessed ``(n, C, F, T)`` samples."""
    net = getattr(bundle, "net", bundle)
    rows = _embed_net(net, np.asarray(samples), chunk)
    if catalog_rows is None:
        n = rows.shape[0]
        return EmbeddingMatrix(rows, [""] * n, [""] * n)
    return EmbeddingMatrix.from_rows(rows, catalog_rows)


# ---------------------------------------------------------------- cosine similarity

def cosine(u, v) -> np.ndarray:
    """Row-wise cosine similarity, clipped to [-1, 1]."""
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    num = (u * v).sum(axis=1)
    den = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    return np.clip(num / den, -1.0, 1.0)


@dataclass
class SimilarityReport:
    in_event: np.ndarray
    non_event: np.ndarray
    n_zero_norm: int

    @property
    def median_in_event(self) -> float:
        return float(np.median(self.in_event))

    @property
    def median_non_event(self) -> float:
        return float(np.median(self.non_event))

    @property
    def gap(self) -> float:
        return self.median_in_event - self.median_non_event

    def summary(self) -> dict:
        return {"median_in_event": self.median_in_event,
                "median_non_event": self.median_non_event, "gap": self.gap,
                "n_pairs": int(self.in_event.size), "n_zero_norm": self.n_zero_norm}


def cosine_similarity_report(E: EmbeddingMatrix, n_pairs: int = 2000,
                             rng=None) -> SimilarityReport:
    """Cosine similarity for random same-event and different-event row pairs.

    Same-event pairs are drawn uniformly from all unordered pairs of distinct rows
    within an event; different-event pairs are drawn uniformly from rows of
    distinct events. Zero-norm rows are left out and counted.
    """
    rng = np.random.default_rng(rng)
    norms = np.linalg.norm(E.rows, axis=1)
    keep = np.flatnonzero(norms > 0)
    n_zero = int(len(E) - keep.size)
    events = np.array(E.event_ids, dtype=object)[keep]
    _, ev_code = np.unique(events.astype(str), return_inverse=True)
    if np.unique(ev_code).size < 2:
        raise AnalysisError("need at least two events")
    groups = [keep[ev_code == g] for g in range(ev_code.max() + 1)]
    # uniform over all in-event pairs: pick the event weighted by its pair count
    pair_counts = np.array([len(g) * (len(g) - 1) // 2 for g in groups], dtype=float)
    if pair_counts.sum() == 0:
        raise AnalysisError("no event has two usable rows")
    ev = rng.choice(len(groups), size=n_pairs, p=pair_counts / pair_counts.sum())
    ia = np.empty(n_pairs, dtype=int)
    ib = np.empty(n_pairs, dtype=int)
    for k, g in enumerate(ev):
        a, b = rng.choice(len(groups[g]), size=2, replace=False)
        ia[k], ib[k] = groups[g][a], groups[g][b]
    in_event = cosine(E.rows[ia], E.rows[ib])
    ja = rng.integers(0, keep.size, size=n_pairs)
    jb = rng.integers(0, keep.size, size=n_pairs)
    same = ev_code[ja] == ev_code[jb]
    while same.any():
        jb[same] = rng.integers(0, keep.size, size=int(same.sum()))
        same = ev_code[ja] == ev_code[jb]
    non_event = cosine(E.rows[keep[ja]], E.rows[keep[jb]])
    return SimilarityReport(in_event, non_event, n_zero)


# ---------------------------------------------------------------- PCA

@dataclass
class PcaResult:
    components: np.ndarray  # (k, d)
    scores: np.ndarray  # (n, k)
    explained_variance: np.ndarray  # (k,)
    mean: np.ndarray
    total_variance: float

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T


def pca(E, k: int = 2) -> PcaResult:
    """Eigen-decomposition of the sample covariance (ddof=1), variance-descending.

    Each component is signed so its largest-magnitude entry is positive.
    """
    X = E.rows if isinstance(E, EmbeddingMatrix) else np.asarray(E, dtype=float)
    n, d = X.shape
    if k < 1 or k > d:
        raise UsageError(f"k must be in [1, {d}], got {k}")
    if n <= k:
        raise UsageError(f"need more rows than components (n={n}, k={k})")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T
    for i in range(k):
        if comps[i, np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    return PcaResult(comps, Xc @ comps.T, np.maximum(vals[order], 0.0), mean,
                     float(np.trace(cov)))


# ---------------------------------------------------------------- linear probe

@dataclass
class ProbeResult:
    coefficients: np.ndarray
    intercept: float
    standardized: np.ndarray
    r_squared: float
    condition_number: float
    rank_deficient: bool


def linear_probe(E, attribute) -> ProbeResult:
    """Ordinary least squares with intercept; standardized coefficients are
    ``coef * std(x) / std(y)``."""
    X = E.rows if isinstance(E, EmbeddingMatrix) else np.asarray(E, dtype=float)
    y = np.asarray(attribute, dtype=float)
    if y.shape != (X.shape[0],):
        raise UsageError(f"attribute length {y.shape} does not match {X.shape[0]} rows")
    sy = y.std()
    if sy == 0:
        raise UsageError("attribute is constant")
    A = np.column_stack([np.ones(len(y)), X])
    beta, _, rank, sv = np.linalg.lstsq(A, y, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    resid = y - A @ beta
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    coef = beta[1:]
    return ProbeResult(coef, float(beta[0]), coef * X.std(axis=0) / sy, r2, cond,
                       bool(rank < A.shape[1]))


def select_source_dims(probe_results, k: int = 3) -> list[int]:
    """Dims ranked by max |standardized coefficient| across the given probes; lower index on ties."""
    results = list(probe_results.values()) if isinstance(probe_results, dict) else list(probe_results)
    if not results:
        raise UsageError("need at least one probe result")
    score = np.max([np.abs(getattr(r, "standardized", r)) for r in results], axis=0)
    order = sorted(range(score.size), key=lambda i: (-score[i], i))
    return order[:k]


# ---------------------------------------------------------------- random forest

@dataclass
class ForestConfig:
    n_trees: int = 50
    max_depth: int = 8
    min_samples_leaf: int = 5
    max_features: float = 1.0  # fraction of features tried per split
    seed: int = 0


@dataclass
class ImportanceResult:
    importance: np.ndarray
    constant_target: bool = False


def _best_split(X, y, feats, min_leaf):
    n = y.size
    best = (0.0, -1, 0.0)
    total = y.sum()
    parent = (y**2).sum() - total**2 / n
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cs = np.cumsum(y[order])[:-1]
        nl = np.arange(1, n)
        # sse_left + sse_right = sum(y^2) - csum^2/nl - (total - csum)^2/nr
        gain = cs**2 / nl + (total - cs) ** 2 / (n - nl) - total**2 / n
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0] + 1e-12 * max(parent, 1e-300):
            best = (float(gain[i]), int(f), 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow(X, y, depth, cfg, rng, imp):
    if depth >= cfg.max_depth or y.size < 2 * cfg.min_samples_leaf or np.ptp(y) == 0:
        return
    d = X.shape[1]
    m = max(1, int(round(cfg.max_features * d)))
    feats = np.sort(rng.choice(d, size=m, replace=False)) if m < d else np.arange(d)
    gain, f, thr = _best_split(X, y, feats, cfg.min_samples_leaf)
    if f < 0:
        return
    imp[f] += gain
    left = X[:, f] <= thr
    _grow(X[left], y[left], depth + 1, cfg, rng, imp)
    _grow(X[~left], y[~left], depth + 1, cfg, rng, imp)


def tree_importance(features, target, cfg: ForestConfig = ForestConfig()) -> ImportanceResult:
    """Mean-decrease-in-impurity importances of a bootstrap regression forest.

    Each tree's impurity decreases are normalized to sum to one before averaging.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(target, dtype=float)
    n, d = X.shape
    if n < 10:
        raise UsageError(f"need at least 10 rows, got {n}")
    if np.ptp(y) == 0:
        return ImportanceResult(np.zeros(d), constant_target=True)
    rng = np.random.default_rng(cfg.seed)
    acc = np.zeros(d)
    used = 0
    for _ in range(cfg.n_trees):
        idx = rng.integers(0, n, size=n)
        imp = np.zeros(d)
        _grow(X[idx], y[idx], 0, cfg, rng, imp)
        if imp.sum() > 0:
            acc += imp / imp.sum()
            used += 1
    if used == 0:
        return ImportanceResult(np.zeros(d), constant_target=True)
    return ImportanceResult(acc / used)


# ---------------------------------------------------------------- density clustering

MIN_PTS = 5


@dataclass
class ClusterModel:
    reducer: PcaResult
    points: np.ndarray  # reduced training rows (n, 2)
    labels: np.ndarray
    radius: float
    min_cluster_size: int
    min_pts: int = MIN_PTS
    too_small: bool = False

    def members(self) -> dict[int, np.ndarray]:
        return {int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels) if c >= 0}

    @property
    def n_clusters(self) -> int:
        return len(self.members())


def dbscan(points: np.ndarray, radius: float, min_pts: int = MIN_PTS) -> np.ndarray:
    """DBSCAN labels (-1 for noise). ``min_pts`` counts the point itself.

    Border points take the label of their nearest core point, which makes the
    partition independent of input order.
    """
    tree = cKDTree(points)
    nbrs = tree.query_ball_point(points, r=radius)
    core = np.array([len(nb) >= min_pts for nb in nbrs])
    labels = np.full(len(points), -1, dtype=int)
    core_idx = np.flatnonzero(core)
    # connected components of the core graph
    parent = {int(i): int(i) for i in core_idx}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in core_idx:
        for j in nbrs[i]:
            if core[j]:
                ri, rj = find(int(i)), find(int(j))
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = sorted({find(int(i)) for i in core_idx})
    root_label = {r: k for k, r in enumerate(roots)}
    for i in core_idx:
        labels[i] = root_label[find(int(i))]
    if core_idx.size:
        ctree = cKDTree(points[core_idx])
        border = np.flatnonzero(~core)
        if border.size:
            dist, nearest = ctree.query(points[border], k=1)
            ok = dist <= radius
            labels[border[ok]] = labels[core_idx[nearest[ok]]]
    return labels


def _relabel(labels: np.ndarray, min_cluster_size: int) -> np.ndarray:
    """Dissolve clusters below ``min_cluster_size`` and renumber the rest from 0."""
    out = np.full_like(labels, -1)
    keep = [c for c in np.unique(labels) if c >= 0 and (labels == c).sum() >= min_cluster_size]
    for new, c in enumerate(keep):
        out[labels == c] = new
    return out


def fit_clusters(E, min_cluster_size: int = 50, radius_quantile: float = 0.9,
                 radius: float | None = None, min_pts: int = MIN_PTS) -> ClusterModel:
    """PCA to 2-D, then DBSCAN with a k-distance radius, dropping small clusters."""
    X = E.rows if isinstance(E, EmbeddingMatrix) else np.asarray(E, dtype=float)
    reducer = pca(X, 2)
    pts = reducer.scores
    n = len(pts)
    if n < min_cluster_size:
        return ClusterModel(reducer, pts, np.full(n, -1, dtype=int), float("nan"),
                            min_cluster_size, min_pts, too_small=True)
    if radius is None:
        k = min(min_pts, n - 1)
        dist, _ = cKDTree(pts).query(pts, k=k + 1)
        radius = float(np.quantile(dist[:, k], radius_quantile))
    labels = _relabel(dbscan(pts, radius, min_pts), min_cluster_size)
    return ClusterModel(reducer, pts, labels, float(radius), min_cluster_size, min_pts)


def assign_cluster(model: ClusterModel, E_new) -> np.ndarray:
    """Majority label among training points within the fitted radius (noise votes count).

    Ties go to the lowest non-negative label; no neighbours gives -1.
    """
    X = E_new.rows if isinstance(E_new, EmbeddingMatrix) else np.asarray(E_new, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if model.too_small or not np.isfinite(model.radius):
        return np.full(len(X), -1, dtype=int)
    pts = model.reducer.transform(X)
    nbrs = cKDTree(model.points).query_ball_point(pts, r=model.radius)
    out = np.full(len(X), -1, dtype=int)
    for i, nb in enumerate(nbrs):
        if not nb:
            continue
        labs, counts = np.unique(model.labels[nb], return_counts=True)
        top = labs[counts == counts.max()]
        nonneg = top[top >= 0]
        out[i] = int(nonneg.min()) if nonneg.size else -1
    return out


@dataclass
class Attribution:
    label: int
    members: list[tuple[str, str]]
    unassigned: bool


def attribute_prediction(model: ClusterModel, catalog_train, label: int) -> Attribution:
    """Training (event_id, station_id) rows sharing ``label``, sorted."""
    rows = list(getattr(catalog_train, "rows", catalog_train))
    if len(rows) != len(model.labels):
        raise UsageError("catalog rows are not aligned with the clustered training rows")
    label = int(label)
    if label == -1:
        return Attribution(-1, [], True)
    if label < -1 or label not in model.members():
        raise UsageError(f"unknown cluster label {label}")
    idx = np.flatnonzero(model.labels == label)
    members = sorted((rows[i].event_id, rows[i].station_id) for i in idx)
    return Attribution(label, members, False)
