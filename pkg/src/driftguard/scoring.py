"""Unsupervised outlier scorers: higher score = more outlying, for all methods.

Four are nearest-neighbor-distance based (exemplar NN distance, weighted and
plain kNN distance sums, relative kNN distance) and four are density based
(reachability, chaining, reverse-neighborhood, and kernel density factors).
All consume a normalized cloud so no variable dominates the metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError
from .neighbors import (
    NeighborLists,
    PointCloud,
    default_leader_radius,
    knn,
    leader,
)


class Method(str, Enum):
    HDOUTLIERS = "HDoutliers"
    KNN_AGG = "KNN-AGG"
    KNN_SUM = "KNN-SUM"
    LOF = "LOF"
    COF = "COF"
    INFLO = "INFLO"
    LDOF = "LDOF"
    RKOF = "RKOF"

    @classmethod
    def parse(cls, text: str) -> "Method":
        norm = text.strip().replace("-", "_").upper()
        for member in cls:
            if member.name == norm:
                return member
        raise ConfigError(f"unknown scoring method {text!r}")


@dataclass(frozen=True)
class ScoringConfig:
    """Scorer selection plus the knobs shared across methods.

    k applies to every kNN-family and density method; the exemplar-distance
    method always uses the single nearest neighbor regardless of k. The
    aggregated-kNN weights are linearly decaying, w_i = (k - i + 1) / sum(1..k).
    Kernel-factor parameters: bandwidth = C * kdist(o)**lambda (Gaussian
    kernel), neighbor weights exp(-(kdist(o)/min_kdist - 1)^2 / (2 sigma^2))
    favoring neighbors that sit in the locally densest spots.
    """

    method: Method = Method.KNN_SUM
    k: int = 10
    leader_radius: float | None = None  # None -> 0.1 / (ln n)^(1/d)
    rkof_bandwidth_scale: float = 1.0  # C
    rkof_bandwidth_exponent: float = 1.0  # lambda
    rkof_weight_sigma: float = 1.0  # sigma
    inflo_empty_is_typical: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.leader_radius is not None and self.leader_radius <= 0:
            raise ConfigError("leader_radius must be positive")
        if self.rkof_bandwidth_scale <= 0 or self.rkof_weight_sigma <= 0:
            raise ConfigError("kernel parameters must be positive")


@dataclass(frozen=True)
class ScoreVector:
    """Per-point non-negative outlier scores; higher means more outlying."""

    scores: np.ndarray
    method: Method
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if not np.isfinite(s).all():
            raise DataError(f"{self.method.value}: non-finite scores produced")
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return len(self.scores)


def _check_cloud(cloud: PointCloud, k: int) -> None:
    n = len(cloud)
    if n < 2:
        raise DataError("scoring needs at least 2 points")
    if k >= n:
        raise DataError(f"k={k} must be smaller than the cloud size n={n}")


def _density_floor(cloud: PointCloud) -> float:
    """Machine-epsilon-scaled floor keeping degenerate ratios finite."""
    return float(np.finfo(np.float64).eps * max(cloud.diameter_bound(), 1.0))


def score_hdoutliers(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Exemplar nearest-neighbor distance, inherited by every cluster member.

    Leader-clusters the cloud, computes each exemplar's distance to its
    nearest fellow exemplar, and assigns that distance to all members.
    """
    n = len(cloud)
    if n < 2:
        raise DataError("scoring needs at least 2 points")
    radius = (
        cfg.leader_radius
        if cfg.leader_radius is not None
        else default_leader_radius(n, cloud.dim)
    )
    clustering = leader(cloud, radius)
    ex = clustering.exemplars
    notes = ()
    if len(ex) < 2:
        ex_scores = np.zeros(len(ex))
        notes = ("single leader cluster: all scores 0",)
    else:
        sub = PointCloud(points=cloud.points[ex])
        ex_scores = knn(sub, 1).distances[:, 0]
    return ScoreVector(ex_scores[clustering.assignment], Method.HDOUTLIERS, notes)


def score_knn_sum(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Sum of distances to the k nearest neighbors."""
    _check_cloud(cloud, cfg.k)
    nl = knn(cloud, cfg.k)
    return ScoreVector(nl.distances.sum(axis=1), Method.KNN_SUM)


def knn_agg_weights(k: int) -> np.ndarray:
    """Linearly decaying normalized weights (k, k-1, ..., 1) / sum(1..k)."""
    return np.arange(k, 0, -1, dtype=np.float64) / (k * (k + 1) / 2.0)


def score_knn_agg(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Weighted kNN distance sum giving nearer neighbors higher weight."""
    _check_cloud(cloud, cfg.k)
    nl = knn(cloud, cfg.k)
    return ScoreVector(nl.distances @ knn_agg_weights(cfg.k), Method.KNN_AGG)


def _lrd(cloud: PointCloud, nl: NeighborLists) -> np.ndarray:
    """Local reachability density with a floored denominator."""
    kdist = nl.distances[:, -1]
    reach = np.maximum(kdist[nl.indices], nl.distances)
    mean_reach = reach.mean(axis=1)
    return 1.0 / np.maximum(mean_reach, _density_floor(cloud))


def score_lof(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Classical local outlier factor: neighbor density over own density."""
    _check_cloud(cloud, cfg.k)
    nl = knn(cloud, cfg.k)
    lrd = _lrd(cloud, nl)
    return ScoreVector(lrd[nl.indices].mean(axis=1) / lrd, Method.LOF)


def _avg_chain_dists(pts: np.ndarray, neighbor_idx: np.ndarray, k: int) -> np.ndarray:
    """Average chaining distance of every point's set-based nearest path.

    The path over {point} + its k neighbors is grown greedily, connecting the
    closest unconnected member to the connected set (ties to the lowest
    index); the step-i edge carries weight 2(k+1-i) / (k(k+1)). All points
    advance through the k steps together.
    """
    n = len(pts)
    m = k + 1
    coords = np.concatenate([pts[:, None, :], pts[neighbor_idx]], axis=1)  # (n, m, d)
    diff = coords[:, :, None, :] - coords[:, None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))  # (n, m, m)
    rows = np.arange(n)
    connected = np.zeros((n, m), dtype=bool)
    connected[:, 0] = True
    best = dist[:, 0, :].copy()
    best[:, 0] = np.inf
    ac = np.zeros(n)
    for step in range(1, m):
        nxt = best.argmin(axis=1)
        ac += 2.0 * (m - step) / (k * (k + 1)) * best[rows, nxt]
        connected[rows, nxt] = True
        best = np.minimum(best, dist[rows, nxt, :])
        best[connected] = np.inf
    return ac


def score_cof(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Connectivity-based factor comparing chaining distances with neighbors'."""
    _check_cloud(cloud, cfg.k)
    k = cfg.k
    nl = knn(cloud, k)
    ac = _avg_chain_dists(cloud.points, nl.indices, k)
    denom = ac[nl.indices].sum(axis=1)
    floor = k * _density_floor(cloud)
    scores = np.where(
        (ac == 0) & (denom == 0), 1.0, ac * k / np.maximum(denom, floor)
    )
    return ScoreVector(scores, Method.COF)


def score_inflo(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Influenced outlierness over the union of kNN and reverse kNN.

    den(p) = 1 / k-distance(p); the score is the mean density of the
    influence space divided by den(p). A point with an empty influence space
    scores 1 (typical) unless configured as maximally outlying.
    """
    _check_cloud(cloud, cfg.k)
    nl = knn(cloud, cfg.k)
    n = len(cloud)
    kdist = nl.distances[:, -1]
    den = 1.0 / np.maximum(kdist, _density_floor(cloud))

    # influence edges p -> o: o in kNN(p), plus o with p in kNN(o); encode as
    # p * n + o and deduplicate the union in one pass
    src = np.repeat(np.arange(n, dtype=np.int64), cfg.k)
    dst = nl.indices.ravel()
    keys = np.unique(np.concatenate([src * n + dst, dst * n + src]))
    owners = keys // n
    members = keys % n
    sums = np.bincount(owners, weights=den[members], minlength=n)
    counts = np.bincount(owners, minlength=n)

    scores = np.empty(n)
    has_space = counts > 0  # kNN is never empty, so this never fails in practice
    scores[has_space] = sums[has_space] / counts[has_space] / den[has_space]
    notes = ()
    if not has_space.all():
        empty = ~has_space
        cap = (scores[has_space].max() if has_space.any() else 1.0) * 10.0
        scores[empty] = 1.0 if cfg.inflo_empty_is_typical else cap
        notes = (f"{int(empty.sum())} points with empty influence space",)
    return ScoreVector(scores, Method.INFLO, notes)


def score_ldof(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Relative distance factor: mean kNN distance over mean inner kNN distance."""
    if cfg.k < 2:
        raise DataError("this factor needs k >= 2")
    _check_cloud(cloud, cfg.k)
    k = cfg.k
    nl = knn(cloud, k)
    pts = cloud.points
    dbar = nl.distances.mean(axis=1)
    nbr = pts[nl.indices]  # (n, k, d)
    pair = np.sqrt(((nbr[:, :, None, :] - nbr[:, None, :, :]) ** 2).sum(axis=-1))
    inner = pair.sum(axis=(1, 2)) / (k * (k - 1))

    notes = ()
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = dbar / inner
    degenerate = inner == 0
    if degenerate.any():
        coincident = degenerate & (dbar == 0)
        scores[coincident] = 1.0
        isolated = degenerate & ~coincident
        if isolated.any():
            finite = scores[np.isfinite(scores)]
            cap = (finite.max() if finite.size else 1.0) * 10.0
            scores[isolated] = cap
            notes = (
                f"{int(isolated.sum())} points with coincident neighborhoods "
                "capped at 10x the largest finite score",
            )
    return ScoreVector(scores, Method.LDOF, notes)


def score_rkof(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Kernel-density factor: weighted neighborhood density over own density.

    Variable-bandwidth Gaussian kernel density with bandwidth
    C * kdist(o)**lambda per neighbor, floored at a machine-epsilon-scaled
    cloud diameter so coincident points stay finite.
    """
    _check_cloud(cloud, cfg.k)
    k = cfg.k
    nl = knn(cloud, k)
    pts = cloud.points
    d = cloud.dim
    kdist = nl.distances[:, -1]
    h_floor = _density_floor(cloud)
    h = np.maximum(cfg.rkof_bandwidth_scale * kdist**cfg.rkof_bandwidth_exponent, h_floor)

    diffs = pts[:, None, :] - pts[nl.indices]  # (n, k, d)
    r2 = (diffs**2).sum(axis=-1)
    hn = h[nl.indices]
    norm = (2.0 * np.pi) ** (d / 2.0) * hn**d
    kde = (np.exp(-r2 / (2.0 * hn**2)) / norm).mean(axis=1)

    kd_nbr = kdist[nl.indices]
    ref = np.maximum(kd_nbr.min(axis=1), h_floor)
    w = np.exp(-((kd_nbr / ref[:, None] - 1.0) ** 2) / (2.0 * cfg.rkof_weight_sigma**2))
    wde = (w * kde[nl.indices]).sum(axis=1) / w.sum(axis=1)

    tiny = np.finfo(np.float64).tiny
    with np.errstate(over="ignore"):
        scores = wde / np.maximum(kde, tiny)
    notes = ()
    bad = ~np.isfinite(scores)
    if bad.any():
        finite = scores[~bad]
        cap = (finite.max() if finite.size else 1.0) * 10.0
        scores[bad] = cap
        notes = (f"{int(bad.sum())} vanishing-density ratios capped",)
    return ScoreVector(scores, Method.RKOF, notes)


_SCORERS = {
    Method.HDOUTLIERS: score_hdoutliers,
    Method.KNN_SUM: score_knn_sum,
    Method.KNN_AGG: score_knn_agg,
    Method.LOF: score_lof,
    Method.COF: score_cof,
    Method.INFLO: score_inflo,
    Method.LDOF: score_ldof,
    Method.RKOF: score_rkof,
}


def score(cloud: PointCloud, cfg: ScoringConfig) -> ScoreVector:
    """Run the configured scorer on a (normalized) point cloud."""
    return _SCORERS[cfg.method](cloud, cfg)
