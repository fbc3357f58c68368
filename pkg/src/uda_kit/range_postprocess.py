"""Spherical range-image projection and depth-gated kNN label cleanup."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .cloud_io import SEMANTIC_MASK, check_paired
from .errors import ZeroRangePoint

EMPTY = -1.0


@dataclass
class RangeImage:
    """Depth image plus per-point pixel coordinates.

    ``depth`` holds ``EMPTY`` for unoccupied pixels, ``index`` holds -1 there.
    """

    width: int
    height: int
    fov_up: float
    fov_down: float
    depth: np.ndarray
    index: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    ranges: np.ndarray


@dataclass(frozen=True)
class KnnParams:
    k: int = 5
    window: int = 5
    sigma: float = 1.0
    depth_cutoff: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd number")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.depth_cutoff > 0:
            raise ValueError("depth_cutoff must be > 0")


def pixel_coordinates(xyz, width: int, height: int, fov_up: float, fov_down: float):
    """Row/column of each point under the spherical projection, plus its range."""
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]
    r = np.linalg.norm(xyz, axis=1)
    if (r <= 0).any():
        raise ZeroRangePoint(f"point {int(np.argmax(r <= 0))} sits at the sensor origin")
    yaw = np.arctan2(xyz[:, 1], xyz[:, 0])
    pitch = np.arcsin(np.clip(xyz[:, 2] / r, -1.0, 1.0))
    u = (1.0 - (yaw / math.pi + 1.0) / 2.0) * width
    v = (1.0 - (pitch - fov_down) / (fov_up - fov_down)) * height
    cols = np.mod(np.floor(u).astype(np.int64), width)
    rows = np.clip(np.floor(v).astype(np.int64), 0, height - 1)
    return rows, cols, r


def project_spherical(cloud, width: int = 2048, height: int = 64, fov_up: float = math.radians(3.0),
                      fov_down: float = math.radians(-25.0)) -> RangeImage:
    """Project points into a ``height x width`` range image; each pixel keeps its nearest point.

    Angles are in radians. Equal ranges resolve to the lower point index.
    """
    if not fov_up > fov_down:
        raise ValueError("fov_up must exceed fov_down")
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    rows, cols, r = pixel_coordinates(cloud, width, height, fov_up, fov_down)
    depth = np.full((height, width), EMPTY)
    index = np.full((height, width), -1, dtype=np.int64)
    # write far-to-near so the nearest (then lowest index) point lands last
    order = np.lexsort((-np.arange(r.size), -r))
    depth[rows[order], cols[order]] = r[order]
    index[rows[order], cols[order]] = order
    return RangeImage(width, height, fov_up, fov_down, depth, index, rows, cols, r)


def _window_offsets(window: int):
    h = window // 2
    dr, dc = np.meshgrid(np.arange(-h, h + 1), np.arange(-h, h + 1), indexing="ij")
    return dr.ravel(), dc.ravel()


def knn_filter(cloud, labels, image: RangeImage, params: KnnParams) -> np.ndarray:
    """Relabel each point by a Gaussian-weighted vote of its depth-gated image neighbours.

    For point ``p`` the candidates are the points stored in the pixels of a
    ``window x window`` patch around ``p``'s pixel (columns wrap, rows are
    cut at the border). Candidates whose range differs from ``p``'s by more
    than ``depth_cutoff`` are discarded. The ``k`` survivors closest in pixel
    distance (ties by range difference, then point index) vote with weight
    ``exp(-d^2 / (2 sigma^2))``; the heaviest semantic id wins, ties to the
    smaller id. Points without survivors keep their original label.
    Relabelled points carry no instance bits.
    """
    labels = np.asarray(labels, dtype=np.uint32)
    check_paired(np.asarray(cloud), labels)
    if params.window > image.width:
        raise ValueError("window cannot exceed the image width")
    sem = (labels & SEMANTIC_MASK).astype(np.int64)
    n = labels.size
    if n == 0:
        return labels.copy()

    dr, dc = _window_offsets(params.window)
    rr = image.rows[:, None] + dr[None, :]
    cc = np.mod(image.cols[:, None] + dc[None, :], image.width)
    inside = (rr >= 0) & (rr < image.height)
    cand = np.where(inside, image.index[np.clip(rr, 0, image.height - 1), cc], -1)
    valid = cand >= 0
    cand_safe = np.where(valid, cand, 0)
    dr_range = np.abs(image.ranges[cand_safe] - image.ranges[:, None])
    valid &= dr_range <= params.depth_cutoff

    pix_d2 = np.broadcast_to((dr * dr + dc * dc).astype(np.float64), cand.shape)
    big = np.inf
    key1 = np.where(valid, pix_d2, big)
    key2 = np.where(valid, dr_range, big)
    key3 = np.where(valid, cand_safe, np.iinfo(np.int64).max)
    order = np.lexsort((key3, key2, key1), axis=1)[:, : params.k]
    rows_idx = np.arange(n)[:, None]
    sel_valid = valid[rows_idx, order]
    sel_labels = np.where(sel_valid, sem[cand_safe[rows_idx, order]], -1)
    sel_w = np.where(sel_valid, np.exp(-pix_d2[rows_idx, order] / (2.0 * params.sigma ** 2)), 0.0)

    # score[i, s] = total weight of slot s's label
    same = sel_labels[:, :, None] == sel_labels[:, None, :]
    score = (same * sel_w[:, None, :]).sum(axis=2)
    score = np.where(sel_valid, score, -1.0)
    best = score.max(axis=1, keepdims=True)
    cand_label = np.where(score == best, sel_labels, np.iinfo(np.int64).max)
    winner = cand_label.min(axis=1)

    has = sel_valid.any(axis=1)
    out = labels.copy()
    changed = has & (winner != sem)
    out[changed] = winner[changed].astype(np.uint32)
    return out


class RangeKnnRefiner(TransformerMixin, BaseEstimator):
    """``transform(X, labels)`` projects ``X`` and runs :func:`knn_filter`."""

    def __init__(self, width=2048, height=64, fov_up=math.radians(3.0), fov_down=math.radians(-25.0),
                 k=5, window=5, sigma=1.0, depth_cutoff=1.0):
        self.width = width
        self.height = height
        self.fov_up = fov_up
        self.fov_down = fov_down
        self.k = k
        self.window = window
        self.sigma = sigma
        self.depth_cutoff = depth_cutoff

    def fit(self, X=None, y=None):
        self.params_ = KnnParams(self.k, self.window, self.sigma, self.depth_cutoff)
        return self

    def transform(self, X, labels):
        params = getattr(self, "params_", None) or KnnParams(self.k, self.window, self.sigma, self.depth_cutoff)
        image = project_spherical(X, self.width, self.height, self.fov_up, self.fov_down)
        return knn_filter(X, labels, image, params)
