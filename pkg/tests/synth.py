"""Synthetic scenes shared by the tests."""
import math

import numpy as np


def with_remission(xyz, rng=None):
    xyz = np.asarray(xyz, dtype=np.float64)
    rem = np.zeros((len(xyz), 1)) if rng is None else rng.uniform(0, 1, (len(xyz), 1))
    return np.hstack([xyz, rem])


def tilted_normal(rng, max_tilt_deg):
    tilt = math.radians(rng.uniform(0, max_tilt_deg))
    az = rng.uniform(0, 2 * math.pi)
    return np.array([math.sin(tilt) * math.cos(az), math.sin(tilt) * math.sin(az), math.cos(tilt)])


def plane_points(rng, n, normal, offset, half_extent=15.0, noise=0.0, gaussian=False):
    """``n`` points near the plane ``normal . p + offset = 0``."""
    normal = np.asarray(normal, dtype=np.float64)
    u = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    a, b = rng.uniform(-half_extent, half_extent, (2, n))
    pts = a[:, None] * u + b[:, None] * v - offset * normal
    if noise:
        d = rng.normal(0, noise, n) if gaussian else rng.uniform(-noise, noise, n)
        pts += d[:, None] * normal
    return pts


def ball(rng, center, n, radius):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0, 1, n) ** (1 / 3)
    return np.asarray(center, dtype=np.float64) + d * r[:, None]


def blob_scene(rng, centers, sizes, radius=0.4, ground_n=2000, ground_z=-1.7, extent=15.0):
    """Flat ground plus spherical blobs; returns (cloud, truth) with truth -2 ground, k blob k."""
    parts = [plane_points(rng, ground_n, [0, 0, 1], -ground_z, extent, noise=0.02)]
    truth = [np.full(ground_n, -2)]
    for k, (c, n) in enumerate(zip(centers, sizes)):
        parts.append(ball(rng, c, n, radius))
        truth.append(np.full(n, k))
    return with_remission(np.vstack(parts), rng), np.concatenate(truth)


def ring_centers(count, radius=6.0, z=-0.7):
    ang = np.arange(count) * 2 * math.pi / count
    return [(radius * math.cos(a), radius * math.sin(a), z) for a in ang]


def random_cluster_cloud(rng, n, box=8.0):
    """Gaussian blobs plus uniform clutter; used for DBSCAN sweeps."""
    n_blobs = int(rng.integers(1, 8))
    n_noise = int(rng.integers(0, n // 4 + 1))
    sizes = rng.multinomial(n - n_noise, np.ones(n_blobs) / n_blobs)
    parts = [rng.uniform(-box, box, (n_noise, 3))]
    for s in sizes:
        parts.append(rng.normal(rng.uniform(-box, box, 3), rng.uniform(0.2, 1.0), (s, 3)))
    pts = np.vstack(parts)
    return pts[rng.permutation(len(pts))]


def noisy_predictions(rng, truth, rates, num_classes):
    """Truth corrupted independently per model; a corrupted point takes a uniform wrong class."""
    preds = []
    for r in rates:
        wrong = (truth + rng.integers(1, num_classes, truth.size)) % num_classes
        preds.append(np.where(rng.random(truth.size) < r, wrong, truth))
    return preds


def range_scene(rng, n_objects=6, width=256, height=32):
    """Points on a few depth layers around the sensor; returns xyz and a per-point object label."""
    pts, labels = [], []
    for obj in range(n_objects):
        yaw0 = rng.uniform(-math.pi, math.pi)
        span = rng.uniform(0.1, 0.6)
        depth = rng.uniform(4.0, 30.0)
        n = int(rng.integers(100, 400))
        yaw = yaw0 + rng.uniform(0, span, n)
        pitch = np.radians(rng.uniform(-24.0, 2.0, n))
        r = depth + rng.normal(0, 0.3, n)
        pts.append(np.stack([r * np.cos(pitch) * np.cos(yaw), r * np.cos(pitch) * np.sin(yaw),
                             r * np.sin(pitch)], axis=1))
        labels.append(np.full(n, obj % 4 + 1))
    return np.vstack(pts), np.concatenate(labels).astype(np.uint32)
