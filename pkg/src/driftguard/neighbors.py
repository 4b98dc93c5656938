"""Shared geometry: unit-hypercube normalization, exact kNN, Leader clustering.

kNN is kd-tree accelerated but contractually exact: candidate selection comes
from the tree, final distances are recomputed from coordinates, and boundary
ties fall back to a full scan, so the result is identical to brute force with
ties broken by lower index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError

# Extra candidates fetched per tree query; boundary ties beyond this window
# trigger an exact full-row scan.
_QUERY_PAD = 16


@dataclass(frozen=True)
class PointCloud:
    """Finite points plus the min/max record of the normalization that made them."""

    points: np.ndarray
    mins: np.ndarray | None = None
    maxs: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if not np.isfinite(pts).all():
            raise DataError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def diameter_bound(self) -> float:
        """Cheap upper bound on the cloud diameter (bounding-box diagonal)."""
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.sqrt((span**2).sum()))

    def denormalize(self, points: np.ndarray | None = None) -> np.ndarray:
        """Map (own or given) normalized coordinates back to the original scale."""
        if self.mins is None or self.maxs is None:
            raise DataError("cloud carries no normalization record")
        pts = self.points if points is None else np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts * (self.maxs - self.mins) + self.mins


@dataclass(frozen=True)
class NeighborLists:
    """Per point: its k nearest neighbors, ascending by (distance, index)."""

    indices: np.ndarray  # (n, k) int64
    distances: np.ndarray  # (n, k) float64
    k: int


@dataclass(frozen=True)
class LeaderClustering:
    exemplars: np.ndarray  # exemplar point indices, in creation order
    assignment: np.ndarray  # per point: cluster id (position in exemplars)
    radius: float


def normalize(points: np.ndarray) -> PointCloud:
    """Min-max scale each dimension into [0, 1]; degenerate dimensions map to 0.

    Idempotent: normalizing an already-normalized cloud is the identity.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not np.isfinite(pts).all():
        raise DataError("cannot normalize non-finite points")
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    span = maxs - mins
    safe = np.where(span > 0, span, 1.0)
    scaled = (pts - mins) / safe
    scaled[:, span == 0] = 0.0
    return PointCloud(points=scaled, mins=mins, maxs=maxs)


def _rank_rows(ids: np.ndarray, dists: np.ndarray, self_ids: np.ndarray, k: int):
    """Per row: sort candidates by (distance, index), drop self, take k.

    One flat lexsort ranks every row at once; the stable argsort then pulls
    the first k non-self entries of each row in that order.
    """
    n_rows, width = ids.shape
    rows = np.repeat(np.arange(n_rows), width)
    order = np.lexsort((ids.ravel(), dists.ravel(), rows))
    sorted_ids = ids.ravel()[order].reshape(n_rows, width)
    sorted_d = dists.ravel()[order].reshape(n_rows, width)
    nonself = sorted_ids != self_ids[:, None]
    pick = np.argsort(~nonself, axis=1, kind="stable")[:, :k]
    r = np.arange(n_rows)[:, None]
    return sorted_ids[r, pick], sorted_d[r, pick], sorted_d[:, -1]


def knn(cloud: PointCloud, k: int) -> NeighborLists:
    """Exact k nearest neighbors of every point, self excluded.

    Euclidean metric; ties broken by lower index. Raises when k >= n.
    """
    pts = cloud.points
    n = len(pts)
    if k < 1:
        raise DataError("k must be at least 1")
    if k >= n:
        raise DataError(f"k={k} must be smaller than the cloud size n={n}")

    tree = cKDTree(pts)
    m = min(n, k + 1 + _QUERY_PAD)
    _, cand = tree.query(pts, k=m)
    # Tree output selects candidates only; distances are recomputed from the
    # coordinates so values and tie order match a direct scan bit for bit.
    d_cand = np.sqrt(((pts[cand] - pts[:, None, :]) ** 2).sum(axis=-1))
    indices, distances, window_max = _rank_rows(cand, d_cand, np.arange(n), k)

    if m < n:
        # A window provably holds every point at distance <= the k-th selected
        # distance only when its largest candidate lies strictly beyond it;
        # otherwise the tie group may extend past the window (also covers a
        # self crowded out by >= m coincident duplicates). Those rows get an
        # exact full scan: k smallest by value, then the boundary tie group
        # re-ranked by index.
        needy = np.nonzero(window_max <= distances[:, -1])[0]
        for p in needy:
            d = np.sqrt(((pts - pts[p]) ** 2).sum(axis=-1))
            d[p] = np.inf
            kth = d[np.argpartition(d, k - 1)[:k]].max()
            in_play = np.nonzero(d <= kth)[0]
            top = np.lexsort((in_play, d[in_play]))[:k]
            indices[p] = in_play[top]
            distances[p] = d[in_play][top]
    return NeighborLists(indices=indices, distances=distances, k=k)


def leader(cloud: PointCloud, radius: float) -> LeaderClustering:
    """Hartigan's single-pass Leader clustering.

    In point order, each point joins the first exemplar (creation order)
    within ``radius``, else becomes a new exemplar. Order-dependent by design.

    Points are processed in chunks: a chunk member hit by a pre-chunk
    exemplar keeps that first hit (always earlier in creation order than any
    exemplar born inside the chunk); only uncovered members walk the chunk's
    newborn exemplars sequentially.
    """
    if radius <= 0:
        raise DataError("leader radius must be positive")
    pts = cloud.points
    n = len(pts)
    assignment = np.empty(n, dtype=np.int64)
    exemplar_idx = np.empty(n, dtype=np.int64)
    exemplar_pts = np.empty_like(pts)
    m = 0
    chunk = 256
    for start in range(0, n, chunk):
        block = pts[start : start + chunk]
        if m:
            d = np.sqrt(
                ((block[:, None, :] - exemplar_pts[None, :m, :]) ** 2).sum(axis=-1)
            )
            within = d <= radius
            covered = within.any(axis=1)
            first_hit = within.argmax(axis=1)
        else:
            covered = np.zeros(len(block), dtype=bool)
            first_hit = None
        m_at_start = m
        for j in range(len(block)):
            if covered[j]:
                assignment[start + j] = first_hit[j]
                continue
            if m > m_at_start:
                d_new = np.sqrt(
                    ((exemplar_pts[m_at_start:m] - block[j]) ** 2).sum(axis=-1)
                )
                hits = np.nonzero(d_new <= radius)[0]
                if hits.size:
                    assignment[start + j] = m_at_start + hits[0]
                    continue
            assignment[start + j] = m
            exemplar_idx[m] = start + j
            exemplar_pts[m] = block[j]
            m += 1
    return LeaderClustering(
        exemplars=exemplar_idx[:m].copy(),
        assignment=assignment,
        radius=float(radius),
    )


def default_leader_radius(n: int, dim: int) -> float:
    """Unit-hypercube Leader radius 0.1 / (ln n)^(1/d)."""
    if n < 2:
        raise DataError("need at least 2 points for a leader radius")
    return 0.1 / math.log(n) ** (1.0 / dim)
