"""Class-agnostic segment extraction: RANSAC ground removal, DBSCAN, size filtering."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, ClusterMixin

from .cloud_io import read_labels, write_labels
from .errors import DegenerateInput, FormatError

NOISE = -1
GROUND = -2

NOISE_CODE = 0xFFFFFFFF
GROUND_CODE = 0xFFFFFFFE


@dataclass(frozen=True)
class PlaneModel:
    """Plane ``normal . p + offset = 0`` with a unit normal pointing to +z."""

    normal: np.ndarray
    offset: float
    inlier_count: int

    def signed_distance(self, xyz) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64)[:, :3] @ self.normal + self.offset


@dataclass(frozen=True)
class SegmentationParams:
    ransac_iterations: int = 100
    ransac_distance: float = 0.25
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 10
    top_delta: int = 50
    min_segment_points: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        if self.ransac_iterations < 1:
            raise ValueError("ransac_iterations must be >= 1")
        if not self.ransac_distance > 0:
            raise ValueError("ransac_distance must be > 0")
        if not self.dbscan_eps > 0:
            raise ValueError("dbscan_eps must be > 0")
        if self.dbscan_min_pts < 1:
            raise ValueError("dbscan_min_pts must be >= 1")
        if self.top_delta < 1:
            raise ValueError("top_delta must be >= 1")
        if self.min_segment_points < 1:
            raise ValueError("min_segment_points must be >= 1")


@dataclass
class SegmentAssignment:
    """Per-point tags: ``GROUND`` (-2), ``NOISE`` (-1) or a segment id ``k >= 0``.

    Segment ids are dense and ordered by descending size.
    """

    tags: np.ndarray
    segment_sizes: np.ndarray

    @property
    def num_segments(self) -> int:
        return int(len(self.segment_sizes))

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.tags == k)

    def to_codes(self) -> np.ndarray:
        """uint32 encoding used on disk."""
        codes = self.tags.astype(np.int64).astype(np.uint32)
        codes[self.tags == NOISE] = NOISE_CODE
        codes[self.tags == GROUND] = GROUND_CODE
        return codes

    @classmethod
    def from_codes(cls, codes) -> "SegmentAssignment":
        codes = np.asarray(codes, dtype=np.uint32)
        tags = codes.astype(np.int64)
        tags[codes == NOISE_CODE] = NOISE
        tags[codes == GROUND_CODE] = GROUND
        seg = tags[tags >= 0]
        sizes = np.bincount(seg) if seg.size else np.zeros(0, dtype=np.int64)
        if sizes.size and (sizes == 0).any():
            raise FormatError("segment ids are not dense")
        return cls(tags, sizes.astype(np.int64))


def write_segments(assignment: SegmentAssignment, path) -> None:
    write_labels(assignment.to_codes(), path)


def read_segments(path, expected_count=None) -> SegmentAssignment:
    return SegmentAssignment.from_codes(read_labels(path, expected_count))


# ---------------------------------------------------------------------------
# RANSAC

def _plane_from_triples(p0, p1, p2):
    normal = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(normal, axis=-1)
    return normal, norm


def ransac_ground_fit(cloud, params: SegmentationParams) -> PlaneModel:
    """Best-consensus plane over ``params.ransac_iterations`` seeded 3-point samples."""
    xyz = np.asarray(cloud, dtype=np.float64)[:, :3]
    n = xyz.shape[0]
    if n < 3:
        raise DegenerateInput(f"RANSAC needs at least 3 points, got {n}")
    rng = np.random.default_rng(params.rng_seed)
    samples = np.stack([rng.choice(n, size=3, replace=False) for _ in range(params.ransac_iterations)])
    normals, norms = _plane_from_triples(xyz[samples[:, 0]], xyz[samples[:, 1]], xyz[samples[:, 2]])

    scale = max(float(np.ptp(xyz, axis=0).max()), 1.0)
    best = None
    best_count = -1
    for i in range(params.ransac_iterations):
        if norms[i] <= 1e-12 * scale * scale:
            continue  # collinear triple
        normal = normals[i] / norms[i]
        offset = -float(normal @ xyz[samples[i, 0]])
        count = int(np.count_nonzero(np.abs(xyz @ normal + offset) <= params.ransac_distance))
        if count > best_count:
            best, best_count = (normal, offset), count
    if best is None:
        raise DegenerateInput("every sampled triple was collinear")
    normal, offset = best
    if normal[2] < 0:
        normal, offset = -normal, -offset
    return PlaneModel(normal=normal, offset=offset, inlier_count=best_count)


def remove_ground(cloud, plane: PlaneModel, distance: float) -> Tuple[np.ndarray, np.ndarray]:
    """Drop points within ``distance`` of the plane; returns kept points and their original indices."""
    cloud = np.asarray(cloud)
    keep = np.abs(plane.signed_distance(cloud)) > distance
    index_map = np.flatnonzero(keep)
    return cloud[index_map], index_map


# ---------------------------------------------------------------------------
# DBSCAN

def _neighbor_pairs(xyz: np.ndarray, eps: float):
    """All ordered pairs (i, j), i != j, with ``|x_i - x_j| <= eps``, found via an eps-sized voxel grid."""
    # slightly oversized cells keep every eps-neighbour within +-1 cell despite rounding
    cell = eps * (1.0 + 1e-9)
    cells = np.floor((xyz - xyz.min(axis=0)) / cell).astype(np.int64) + 1
    dims = cells.max(axis=0) + 2
    keys = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]

    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    uniq, starts, counts = np.unique(sorted_keys, return_index=True, return_counts=True)
    cell_of = np.searchsorted(uniq, keys)

    src_all, dst_all = [], []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                shift = (dx * dims[1] + dy) * dims[2] + dz
                target = uniq + shift
                pos = np.searchsorted(uniq, target)
                pos = np.minimum(pos, len(uniq) - 1)
                nb_cell = np.where(uniq[pos] == target, pos, -1)

                nb = nb_cell[cell_of]
                has = nb >= 0
                src_pts = np.flatnonzero(has)
                if src_pts.size == 0:
                    continue
                nb = nb[has]
                reps = counts[nb]
                src = np.repeat(src_pts, reps)
                first = np.repeat(starts[nb], reps)
                within = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
                dst = order[first + within]
                d2 = np.einsum("ij,ij->i", xyz[src] - xyz[dst], xyz[src] - xyz[dst])
                ok = (d2 <= eps * eps) & (src != dst)
                src_all.append(src[ok])
                dst_all.append(dst[ok])
    if not src_all:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(src_all), np.concatenate(dst_all)


def dbscan_cluster(cloud, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN over 3D Euclidean distance.

    Returns ``-1`` for noise and ``0..K-1`` for clusters. The labelling is
    the one produced by the classic sequential algorithm scanning points in
    index order: clusters are numbered by their lowest-index core point and a
    border point joins the earliest-numbered cluster whose core reaches it.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    xyz = np.asarray(cloud, dtype=np.float64)[:, :3]
    n = xyz.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels

    src, dst = _neighbor_pairs(xyz, eps)
    degree = np.bincount(src, minlength=n) + 1  # self counts
    core = degree >= min_pts
    if not core.any():
        return labels

    core_idx = np.flatnonzero(core)
    core_pos = np.full(n, -1, dtype=np.int64)
    core_pos[core_idx] = np.arange(core_idx.size)
    cc = core[src] & core[dst]
    graph = coo_matrix(
        (np.ones(int(cc.sum()), dtype=np.int8), (core_pos[src[cc]], core_pos[dst[cc]])),
        shape=(core_idx.size, core_idx.size),
    )
    _, comp = connected_components(graph, directed=False)

    # renumber components by their lowest member index (core_idx is sorted)
    first_seen = np.full(comp.max() + 1, np.iinfo(np.int64).max)
    np.minimum.at(first_seen, comp, np.arange(comp.size))
    rank = np.empty_like(first_seen)
    rank[np.argsort(first_seen)] = np.arange(first_seen.size)
    labels[core_idx] = rank[comp]

    border = ~core[src] & core[dst]
    if border.any():
        bsrc = src[border]
        bcl = labels[dst[border]]
        best = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(best, bsrc, bcl)
        hit = np.unique(bsrc)
        labels[hit] = best[hit]
    return labels


def filter_segments(raw, params: SegmentationParams) -> SegmentAssignment:
    """Keep the ``top_delta`` largest clusters having at least ``min_segment_points`` points.

    Survivors are renumbered ``0..S-1`` by descending size, ties broken by
    smallest member index; everything else becomes ``NOISE``.
    """
    raw = np.asarray(raw, dtype=np.int64)
    tags = np.full(raw.shape, NOISE, dtype=np.int64)
    valid = raw >= 0
    if not valid.any():
        return SegmentAssignment(tags, np.zeros(0, dtype=np.int64))
    ids = raw[valid]
    sizes = np.bincount(ids)
    first = np.full(sizes.size, raw.size, dtype=np.int64)
    np.minimum.at(first, ids, np.flatnonzero(valid))
    candidates = np.flatnonzero(sizes >= params.min_segment_points)
    ranked = candidates[np.lexsort((first[candidates], -sizes[candidates]))][: params.top_delta]
    new_id = np.full(sizes.size, NOISE, dtype=np.int64)
    new_id[ranked] = np.arange(ranked.size)
    tags[valid] = new_id[ids]
    return SegmentAssignment(tags, sizes[ranked].astype(np.int64))


def segment_scan(cloud, params: SegmentationParams) -> SegmentAssignment:
    """Ground fit, ground removal, clustering and filtering over one scan."""
    cloud = np.asarray(cloud)
    plane = ransac_ground_fit(cloud, params)
    rest, index_map = remove_ground(cloud, plane, params.ransac_distance)
    raw = dbscan_cluster(rest, params.dbscan_eps, params.dbscan_min_pts)
    sub = filter_segments(raw, params)
    tags = np.full(cloud.shape[0], GROUND, dtype=np.int64)
    tags[index_map] = sub.tags
    return SegmentAssignment(tags, sub.segment_sizes)


# ---------------------------------------------------------------------------
# estimator wrappers

class GridDBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN on xyz coordinates with an eps-sized voxel grid for neighbour search.

    Parameters
    ----------
    eps : float
        Neighbourhood radius in meters.
    min_samples : int
        Core threshold, the point itself included.
    """

    def __init__(self, eps=0.5, min_samples=10):
        self.eps = eps
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] < 3:
            raise ValueError(f"expected (n, >=3) coordinates, got {X.shape}")
        self.labels_ = dbscan_cluster(X, self.eps, self.min_samples)
        return self


class RansacGroundRemover(BaseEstimator):
    """Fit a ground plane and drop its inliers via ``transform``."""

    def __init__(self, n_iterations=100, distance=0.25, random_state=0):
        self.n_iterations = n_iterations
        self.distance = distance
        self.random_state = random_state

    def fit(self, X, y=None):
        params = SegmentationParams(
            ransac_iterations=self.n_iterations, ransac_distance=self.distance, rng_seed=self.random_state
        )
        self.plane_ = ransac_ground_fit(X, params)
        return self

    def transform(self, X):
        if not hasattr(self, "plane_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("RansacGroundRemover is not fitted")
        kept, self.kept_indices_ = remove_ground(X, self.plane_, self.distance)
        return kept

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)


class SegmentExtractor(ClusterMixin, BaseEstimator):
    """Full segment pipeline; ``labels_`` holds per-point tags after ``fit``."""

    def __init__(self, ransac_iterations=100, ransac_distance=0.25, eps=0.5, min_samples=10,
                 top_delta=50, min_segment_points=20, random_state=0):
        self.ransac_iterations = ransac_iterations
        self.ransac_distance = ransac_distance
        self.eps = eps
        self.min_samples = min_samples
        self.top_delta = top_delta
        self.min_segment_points = min_segment_points
        self.random_state = random_state

    def to_params(self) -> SegmentationParams:
        return SegmentationParams(
            ransac_iterations=self.ransac_iterations,
            ransac_distance=self.ransac_distance,
            dbscan_eps=self.eps,
            dbscan_min_pts=self.min_samples,
            top_delta=self.top_delta,
            min_segment_points=self.min_segment_points,
            rng_seed=self.random_state,
        )

    def fit(self, X, y=None):
        self.assignment_ = segment_scan(X, self.to_params())
        self.labels_ = self.assignment_.tags
        return self
