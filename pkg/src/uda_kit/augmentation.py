"""Augmented views for segment contrast and PolarMix scene mixing.

Every draw comes from ``numpy.random.Generator`` seeded from ``AugmentationSpec.rng_seed``, and the
transforms run in a fixed order (crop, dropout, z-rotation, scale, flip,
jitter, fine rotation), so a view is reproducible from ``(cloud, seed)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

from .cloud_io import check_paired, semantic_ids
from .errors import EmptyResult

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class AugmentationSpec:
    crop_enabled: bool = True
    crop_extent: Tuple[float, float, float] = (40.0, 40.0, math.inf)
    rotation_z_range: Tuple[float, float] = (0.0, TWO_PI)
    scale_range: Tuple[float, float] = (0.95, 1.05)
    flip_probability: Tuple[float, float] = (0.5, 0.5)
    dropout_cuboids: int = 1
    dropout_extent: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    fine_rotation_sigma: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi < math.inf):
            raise ValueError(f"scale_range must lie in (0, inf) with lo <= hi, got {self.scale_range}")
        if self.rotation_z_range[0] > self.rotation_z_range[1]:
            raise ValueError("rotation_z_range must be ordered")
        for p in self.flip_probability:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"flip probability {p} outside [0, 1]")
        if self.jitter_clip < 0 or self.jitter_sigma < 0 or self.fine_rotation_sigma < 0:
            raise ValueError("jitter_sigma, jitter_clip and fine_rotation_sigma must be >= 0")
        if self.dropout_cuboids < 0:
            raise ValueError("dropout_cuboids must be >= 0")
        if any(e <= 0 for e in self.crop_extent) or any(e <= 0 for e in self.dropout_extent):
            raise ValueError("cuboid extents must be positive")

    @classmethod
    def disabled(cls, rng_seed: int = 0) -> "AugmentationSpec":
        return cls(
            crop_enabled=False,
            rotation_z_range=(0.0, 0.0),
            scale_range=(1.0, 1.0),
            flip_probability=(0.0, 0.0),
            dropout_cuboids=0,
            jitter_sigma=0.0,
            jitter_clip=0.0,
            fine_rotation_sigma=0.0,
            rng_seed=rng_seed,
        )


@dataclass(frozen=True)
class RealizedDraws:
    """Parameter values actually drawn for one view."""

    seed_entropy: int
    seed_spawn_key: Tuple[int, ...]
    crop_center: Optional[Tuple[float, float, float]] = None
    dropout_centers: Tuple[Tuple[float, float, float], ...] = ()
    angle_z: float = 0.0
    scale: float = 1.0
    flip_x: bool = False
    flip_y: bool = False
    fine_angles: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_text(self) -> str:
        return " ".join(f"{k}={v}" for k, v in asdict(self).items())


@dataclass
class ViewPair:
    view_a: np.ndarray
    view_b: np.ndarray
    map_a: np.ndarray
    map_b: np.ndarray
    spec_a: RealizedDraws
    spec_b: RealizedDraws


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotation_xyz(ax: float, ay: float, az: float) -> np.ndarray:
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    return rotation_z(az) @ ry @ rx


def _inside_cuboid(xyz, center, extent) -> np.ndarray:
    half = np.asarray(extent, dtype=np.float64) / 2.0
    return np.all(np.abs(xyz - np.asarray(center)) <= half, axis=1)


def _augment(cloud, spec: AugmentationSpec, seed: np.random.SeedSequence):
    rng = np.random.default_rng(seed)
    pts = np.array(cloud, dtype=np.float64, copy=True)
    index_map = np.arange(pts.shape[0])
    draws = {"seed_entropy": int(seed.entropy), "seed_spawn_key": tuple(int(k) for k in seed.spawn_key)}

    if spec.crop_enabled:
        if pts.shape[0] == 0:
            raise EmptyResult("cannot crop an empty cloud")
        center = pts[rng.integers(pts.shape[0]), :3].copy()
        keep = _inside_cuboid(pts[:, :3], center, spec.crop_extent)
        pts, index_map = pts[keep], index_map[keep]
        draws["crop_center"] = tuple(float(c) for c in center)

    centers = []
    for _ in range(spec.dropout_cuboids):
        if pts.shape[0] == 0:
            break
        center = pts[rng.integers(pts.shape[0]), :3].copy()
        keep = ~_inside_cuboid(pts[:, :3], center, spec.dropout_extent)
        pts, index_map = pts[keep], index_map[keep]
        centers.append(tuple(float(c) for c in center))
    draws["dropout_centers"] = tuple(centers)

    if pts.shape[0] == 0:
        raise EmptyResult("crop/dropout removed every point")

    lo, hi = spec.rotation_z_range
    angle = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    if angle != 0.0:
        pts[:, :3] = pts[:, :3] @ rotation_z(angle).T
    draws["angle_z"] = angle

    lo, hi = spec.scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    if scale != 1.0:
        pts[:, :3] *= scale
    draws["scale"] = scale

    flip_x = bool(rng.random() < spec.flip_probability[0]) if spec.flip_probability[0] > 0 else False
    flip_y = bool(rng.random() < spec.flip_probability[1]) if spec.flip_probability[1] > 0 else False
    if flip_x:
        pts[:, 0] = -pts[:, 0]
    if flip_y:
        pts[:, 1] = -pts[:, 1]
    draws["flip_x"], draws["flip_y"] = flip_x, flip_y

    if spec.jitter_sigma > 0:
        noise = np.clip(spec.jitter_sigma * rng.standard_normal((pts.shape[0], 3)), -spec.jitter_clip, spec.jitter_clip)
        pts[:, :3] += noise

    if spec.fine_rotation_sigma > 0:
        fine = spec.fine_rotation_sigma * rng.standard_normal(3)
        pts[:, :3] = pts[:, :3] @ _rotation_xyz(*fine).T
        draws["fine_angles"] = tuple(float(a) for a in fine)

    return pts, index_map, RealizedDraws(**draws)


def apply_augmentation(cloud, spec: AugmentationSpec):
    """Augment one cloud; returns ``(points, index_map)`` with points in float64."""
    pts, index_map, _ = _augment(cloud, spec, np.random.SeedSequence(spec.rng_seed))
    return pts, index_map


def make_view_pair(cloud, spec: AugmentationSpec, seed=None) -> ViewPair:
    """Two independent views from child seeds of ``seed`` (default ``spec.rng_seed``).

    A view that comes out empty is redrawn once from a grandchild seed before
    ``EmptyResult`` is raised.
    """
    if isinstance(seed, np.random.SeedSequence):
        # fresh copy: spawn() advances the caller's sequence
        root = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    else:
        root = np.random.SeedSequence(spec.rng_seed if seed is None else seed)
    views = []
    for child in root.spawn(2):
        try:
            views.append(_augment(cloud, spec, child))
        except EmptyResult:
            views.append(_augment(cloud, spec, child.spawn(1)[0]))
    (va, ma, da), (vb, mb, db) = views
    return ViewPair(va, vb, ma, mb, da, db)


# ---------------------------------------------------------------------------
# PolarMix

SMALL_DYNAMIC_NAMES = {"person", "bicyclist", "motorcyclist", "rider", "bicycle", "motorcycle", "bike"}


@dataclass(frozen=True)
class PolarMixParams:
    """Sector swap plus rotate-paste of instance classes.

    ``sector_start=None`` draws the start azimuth uniformly from ``rng_seed``.
    """

    sector_start: Optional[float] = None
    sector_width: float = math.pi
    instance_classes: frozenset = field(default_factory=frozenset)
    paste_rotations: Tuple[float, ...] = (math.pi / 2, math.pi, 3 * math.pi / 2)
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.sector_width <= TWO_PI:
            raise ValueError(f"sector_width must lie in (0, 2pi], got {self.sector_width}")


def default_instance_classes(class_map) -> frozenset:
    """Target ids of the small dynamic classes in ``class_map`` (matched by name)."""
    return frozenset(
        c for c, name in class_map.names.items() if name.strip().lower() in SMALL_DYNAMIC_NAMES
    )


def _in_sector(xyz, start, width) -> np.ndarray:
    if width >= TWO_PI:
        return np.ones(xyz.shape[0], dtype=bool)
    az = np.arctan2(xyz[:, 1], xyz[:, 0])
    return np.mod(az - start, TWO_PI) < width


def polar_mix(points_a, labels_a, points_b, labels_b, params: PolarMixParams):
    """Mix scene B's azimuth sector into scene A and paste rotated copies of B's instances.

    Output order: A's points outside the sector, B's points inside it, then
    one rotated copy of B's instance-class points per paste rotation.
    """
    points_a, points_b = np.asarray(points_a), np.asarray(points_b)
    labels_a, labels_b = np.asarray(labels_a, dtype=np.uint32), np.asarray(labels_b, dtype=np.uint32)
    check_paired(points_a, labels_a)
    check_paired(points_b, labels_b)

    start = params.sector_start
    if start is None:
        start = float(np.random.default_rng(params.rng_seed).uniform(-math.pi, math.pi))
    in_a = _in_sector(points_a, start, params.sector_width)
    in_b = _in_sector(points_b, start, params.sector_width)

    dtype = np.result_type(points_a.dtype, points_b.dtype)
    parts = [points_a[~in_a].astype(dtype), points_b[in_b].astype(dtype)]
    label_parts = [labels_a[~in_a], labels_b[in_b]]

    if params.instance_classes:
        inst = np.isin(semantic_ids(labels_b), np.fromiter(params.instance_classes, dtype=np.int64))
        if inst.any():
            src = points_b[inst].astype(np.float64)
            for angle in params.paste_rotations:
                pasted = src.copy()
                pasted[:, :3] = src[:, :3] @ rotation_z(angle).T
                parts.append(pasted.astype(dtype))
                label_parts.append(labels_b[inst])
    return np.concatenate(parts), np.concatenate(label_parts)


__all__ = [
    "AugmentationSpec",
    "PolarMixParams",
    "RealizedDraws",
    "ViewPair",
    "apply_augmentation",
    "default_instance_classes",
    "make_view_pair",
    "polar_mix",
    "rotation_z",
]
