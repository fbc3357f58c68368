"""Segment-level contrastive pre-training and pseudo-label fine-tuning at toy scale.

The backbone is a per-point MLP ``4 -> 32 -> 32`` (ReLU after the hidden
layer). Segment embeddings are built as

    head1 (32 -> 32) -> dropout -> max-pool over members -> head2 (32 -> 16) -> L2 normalise

and trained with InfoNCE using in-batch negatives. Fine-tuning drops both heads
and attaches a linear classifier ``32 -> C`` trained with cross-entropy.
All math is float64 and every gradient is written out by hand.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .augmentation import AugmentationSpec, make_view_pair
from .cloud_io import SEMANTIC_MASK, check_paired
from .errors import AllIgnored, EmptySegment, FormatError, InsufficientBatch, IoError

INPUT_DIM = 4
FEATURE_DIM = 32
EMBED_DIM = 16

_HEADER = struct.Struct("<4sIQ")
_VERSION = 1


# ---------------------------------------------------------------------------
# parameter containers

class _ParamBundle:
    """Shared flatten/update/serialise helpers for the dataclass parameter sets."""

    MAGIC = b"????"

    def arrays(self) -> List[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def shapes(self):
        return [(f.name, getattr(self, f.name).shape) for f in fields(self)]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ValueError(f"expected {self.size} values, got {vec.size}")
        out, pos = {}, 0
        for name, shape in self.shapes():
            n = int(np.prod(shape))
            out[name] = vec[pos:pos + n].reshape(shape).copy()
            pos += n
        return type(self)(**out)

    def zeros_like(self):
        return type(self)(**{f.name: np.zeros_like(getattr(self, f.name)) for f in fields(self)})

    def step(self, grads, learning_rate: float):
        """Plain gradient-descent update, returning a new bundle."""
        return type(self)(**{
            f.name: getattr(self, f.name) - learning_rate * getattr(grads, f.name) for f in fields(self)
        })

    def equals(self, other) -> bool:
        return type(self) is type(other) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def shape_hash(self) -> int:
        text = ";".join(f"{n}:{'x'.join(map(str, s))}" for n, s in self.shapes())
        return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(self.MAGIC, _VERSION, self.shape_hash())
        return header + self.to_vector().astype("<f8").tobytes()

    def save(self, path) -> None:
        try:
            Path(path).write_bytes(self.to_bytes())
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def _read_payload(cls, path):
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        if len(raw) < _HEADER.size or (len(raw) - _HEADER.size) % 8:
            raise FormatError(f"{path}: truncated parameter file")
        magic, version, shape_hash = _HEADER.unpack_from(raw)
        if magic != cls.MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {cls.MAGIC!r}")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        return shape_hash, np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)

    @classmethod
    def _check_loaded(cls, bundle, shape_hash, path):
        if bundle.shape_hash() != shape_hash:
            raise FormatError(f"{path}: layer-shape hash mismatch")
        return bundle


@dataclass
class EncoderParams(_ParamBundle):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    head1_w: np.ndarray
    head1_b: np.ndarray
    head2_w: np.ndarray
    head2_b: np.ndarray

    MAGIC = b"UDAE"

    @classmethod
    def initialize(cls, seed: int = 0) -> "EncoderParams":
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)

        def he(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)

        return cls(
            w1=he(INPUT_DIM, FEATURE_DIM), b1=np.zeros(FEATURE_DIM),
            w2=he(FEATURE_DIM, FEATURE_DIM), b2=np.zeros(FEATURE_DIM),
            head1_w=he(FEATURE_DIM, FEATURE_DIM), head1_b=np.zeros(FEATURE_DIM),
            head2_w=he(FEATURE_DIM, EMBED_DIM), head2_b=np.zeros(EMBED_DIM),
        )

    @classmethod
    def zeros(cls) -> "EncoderParams":
        return cls.initialize(0).zeros_like()

    @classmethod
    def load(cls, path) -> "EncoderParams":
        shape_hash, vec = cls._read_payload(path)
        template = cls.zeros()
        if vec.size != template.size:
            raise FormatError(f"{path}: {vec.size} values, expected {template.size}")
        return cls._check_loaded(template.with_vector(vec), shape_hash, path)


@dataclass
class FinetuneParams(_ParamBundle):
    """Backbone weights plus a linear classifier; the projection heads are not carried over."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray

    MAGIC = b"UDAF"

    @property
    def num_classes(self) -> int:
        return self.cls_w.shape[1]

    @classmethod
    def from_encoder(cls, encoder: EncoderParams, num_classes: int, seed: int = 0) -> "FinetuneParams":
        rng = np.random.default_rng(seed)
        return cls(
            w1=encoder.w1.copy(), b1=encoder.b1.copy(), w2=encoder.w2.copy(), b2=encoder.b2.copy(),
            cls_w=rng.standard_normal((FEATURE_DIM, num_classes)) * np.sqrt(1.0 / FEATURE_DIM),
            cls_b=np.zeros(num_classes),
        )

    @classmethod
    def load(cls, path) -> "FinetuneParams":
        shape_hash, vec = cls._read_payload(path)
        backbone = INPUT_DIM * FEATURE_DIM + FEATURE_DIM + FEATURE_DIM * FEATURE_DIM + FEATURE_DIM
        num_classes, rem = divmod(vec.size - backbone, FEATURE_DIM + 1)
        if rem or num_classes < 1:
            raise FormatError(f"{path}: {vec.size} values do not match any classifier size")
        template = cls.from_encoder(EncoderParams.zeros(), num_classes).zeros_like()
        return cls._check_loaded(template.with_vector(vec), shape_hash, path)


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.1
    learning_rate: float = 1e-2
    dropout_rate: float = 0.1
    steps: int = 100
    batch_segments: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_segments < 2:
            raise ValueError("batch_segments must be >= 2")


@dataclass(frozen=True)
class SegmentEmbedding:
    vector: np.ndarray
    segment_id: int
    view_id: int


# ---------------------------------------------------------------------------
# forward / backward building blocks

def _as_inputs(cloud) -> np.ndarray:
    x = np.asarray(cloud, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < INPUT_DIM:
        raise ValueError(f"expected (N, 4) points, got {x.shape}")
    return x[:, :INPUT_DIM]


def _backbone_forward(x, params):
    pre = x @ params.w1 + params.b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ params.w2 + params.b2, (x, pre, hidden)


def _backbone_backward(d_feat, cache, params):
    x, pre, hidden = cache
    d_w2 = hidden.T @ d_feat
    d_b2 = d_feat.sum(axis=0)
    d_pre = (d_feat @ params.w2.T) * (pre > 0)
    return x.T @ d_pre, d_pre.sum(axis=0), d_w2, d_b2


def encode_points(cloud, params) -> np.ndarray:
    """Per-point 32-dim features; row ``i`` depends on point ``i`` only."""
    feats, _ = _backbone_forward(_as_inputs(cloud), params)
    return feats


def _pool_forward(features, members, params, keep, dropout_rate):
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise EmptySegment("segment has no members")
    proj = features[members] @ params.head1_w + params.head1_b
    if keep is not None:
        scale = np.asarray(keep, dtype=np.float64) / (1.0 - dropout_rate)
        proj = proj * scale
    else:
        scale = None
    arg = np.argmax(proj, axis=0)
    return proj[arg, np.arange(proj.shape[1])], (members, scale, arg, proj.shape[0])


def pool_segment(features, member_indices, params, dropout_mask=None, dropout_rate: float = 0.0) -> np.ndarray:
    """Head-1 on each member, optional inverted dropout, then coordinatewise max.

    ``dropout_mask`` is a boolean keep-mask of shape ``(len(member_indices), 32)``;
    kept activations are scaled by ``1 / (1 - dropout_rate)``.
    """
    vec, _ = _pool_forward(np.asarray(features, dtype=np.float64), member_indices, params, dropout_mask, dropout_rate)
    return vec


def _pool_backward(d_vec, cache, features, params):
    members, scale, arg, n = cache
    cols = np.arange(d_vec.size)
    d_proj = np.zeros((n, d_vec.size))
    d_proj[arg, cols] = d_vec
    if scale is not None:
        d_proj *= scale
    d_w = features[members].T @ d_proj
    d_b = d_proj.sum(axis=0)
    d_feat_rows = d_proj @ params.head1_w.T
    return d_w, d_b, d_feat_rows


def _embed_forward(pooled, params):
    z = pooled @ params.head2_w + params.head2_b
    norm = np.linalg.norm(z)
    return z / norm, (pooled, z, norm)


def _embed_backward(d_e, cache, params):
    pooled, z, norm = cache
    e = z / norm
    d_z = (d_e - e * (e @ d_e)) / norm
    return np.outer(pooled, d_z), d_z, params.head2_w @ d_z


def embed_segment(features, member_indices, params, dropout_mask=None, dropout_rate: float = 0.0) -> np.ndarray:
    """Unit-norm 16-dim segment embedding."""
    pooled = pool_segment(features, member_indices, params, dropout_mask, dropout_rate)
    e, _ = _embed_forward(pooled, params)
    return e


def info_nce_loss(anchors, positives, temperature: float):
    """InfoNCE with in-batch negatives.

    ``loss_i = -log softmax_j(a_i . p_j / tau)[i]``, averaged over anchors.
    Returns ``(loss, d_anchors, d_positives)``.
    """
    a = np.asarray(anchors, dtype=np.float64)
    p = np.asarray(positives, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 2:
        raise ValueError(f"anchors {a.shape} and positives {p.shape} must be matching (B, D) arrays")
    b = a.shape[0]
    if b < 2:
        raise InsufficientBatch(f"InfoNCE needs at least 2 pairs, got {b}")
    logits = a @ p.T / temperature
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    loss = float(np.mean(lse - np.diag(logits)))
    soft = np.exp(logits - lse[:, None])
    d_logits = (soft - np.eye(b)) / b
    d_a = d_logits @ p / temperature
    d_p = d_logits.T @ a / temperature
    return max(loss, 0.0), d_a, d_p


def cross_entropy_loss(logits, labels, ignore_id: int):
    """Mean softmax cross-entropy over points whose semantic label is not ``ignore_id``.

    Returns ``(loss, d_logits)``; ignored rows get zero gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    sem = np.asarray(labels, dtype=np.int64) & SEMANTIC_MASK
    if logits.ndim != 2 or logits.shape[0] != sem.shape[0]:
        raise ValueError(f"logits {logits.shape} do not match {sem.shape[0]} labels")
    valid = sem != ignore_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise AllIgnored("every point carries the ignore label")
    target = sem[valid]
    if target.max() >= logits.shape[1]:
        raise ValueError(f"label {int(target.max())} outside 0..{logits.shape[1] - 1}")
    z = logits[valid]
    top = z.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(z - top).sum(axis=1))
    rows = np.arange(n_valid)
    loss = float(np.mean(lse - z[rows, target]))
    d = np.exp(z - lse[:, None])
    d[rows, target] -= 1.0
    grad = np.zeros_like(logits)
    grad[valid] = d / n_valid
    return loss, grad


# ---------------------------------------------------------------------------
# pre-training

@dataclass
class PretrainBatch:
    """Everything random about one pre-training step, frozen so the objective is deterministic."""

    view_a: np.ndarray
    view_b: np.ndarray
    members_a: List[np.ndarray]
    members_b: List[np.ndarray]
    keep_a: List[np.ndarray]
    keep_b: List[np.ndarray]
    segment_ids: np.ndarray
    dropout_rate: float


def _step_seed(rng_seed: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(rng_seed), spawn_key=(int(step),))


def build_pretrain_batch(cloud, assignment, config: TrainConfig, aug_spec: Optional[AugmentationSpec] = None,
                         step: int = 0) -> PretrainBatch:
    """Draw the view pair, segment subset and dropout masks for ``step``."""
    aug_spec = aug_spec or AugmentationSpec()
    view_seed, draw_seed = _step_seed(config.rng_seed, step).spawn(2)
    pair = make_view_pair(cloud, aug_spec, seed=view_seed)
    rng = np.random.default_rng(draw_seed)

    tags = np.asarray(assignment.tags)
    tags_a, tags_b = tags[pair.map_a], tags[pair.map_b]
    ids, mem_a, mem_b = [], [], []
    for k in range(assignment.num_segments):
        in_a = np.flatnonzero(tags_a == k)
        in_b = np.flatnonzero(tags_b == k)
        if in_a.size and in_b.size:
            ids.append(k)
            mem_a.append(in_a)
            mem_b.append(in_b)
    if len(ids) < 2:
        raise InsufficientBatch(f"only {len(ids)} segment(s) survive both views")
    if len(ids) > config.batch_segments:
        pick = np.sort(rng.choice(len(ids), size=config.batch_segments, replace=False))
        ids = [ids[i] for i in pick]
        mem_a = [mem_a[i] for i in pick]
        mem_b = [mem_b[i] for i in pick]

    def masks(members):
        if config.dropout_rate == 0.0:
            return [None] * len(members)
        return [rng.random((m.size, FEATURE_DIM)) >= config.dropout_rate for m in members]

    return PretrainBatch(
        view_a=pair.view_a, view_b=pair.view_b, members_a=mem_a, members_b=mem_b,
        keep_a=masks(mem_a), keep_b=masks(mem_b),
        segment_ids=np.asarray(ids, dtype=np.int64), dropout_rate=config.dropout_rate,
    )


def _view_embeddings(view, members, keeps, params, rate):
    feats, bb_cache = _backbone_forward(_as_inputs(view), params)
    embs, caches = [], []
    for m, keep in zip(members, keeps):
        pooled, pool_cache = _pool_forward(feats, m, params, keep, rate)
        e, emb_cache = _embed_forward(pooled, params)
        embs.append(e)
        caches.append((pool_cache, emb_cache))
    return np.stack(embs), feats, bb_cache, caches


def _view_backward(d_embs, feats, bb_cache, caches, params, grads):
    d_feats = np.zeros_like(feats)
    for d_e, (pool_cache, emb_cache) in zip(d_embs, caches):
        d_w, d_b, d_pooled = _embed_backward(d_e, emb_cache, params)
        grads["head2_w"] += d_w
        grads["head2_b"] += d_b
        d_w, d_b, d_rows = _pool_backward(d_pooled, pool_cache, feats, params)
        grads["head1_w"] += d_w
        grads["head1_b"] += d_b
        np.add.at(d_feats, pool_cache[0], d_rows)
    d_w1, d_b1, d_w2, d_b2 = _backbone_backward(d_feats, bb_cache, params)
    grads["w1"] += d_w1
    grads["b1"] += d_b1
    grads["w2"] += d_w2
    grads["b2"] += d_b2


def segment_embeddings(batch: PretrainBatch, params: EncoderParams):
    """View-A and view-B :class:`SegmentEmbedding` lists for a batch."""
    out = []
    for view_id, (view, members, keeps) in enumerate(
        [(batch.view_a, batch.members_a, batch.keep_a), (batch.view_b, batch.members_b, batch.keep_b)]
    ):
        embs = _view_embeddings(view, members, keeps, params, batch.dropout_rate)[0]
        out.append([SegmentEmbedding(e, int(k), view_id) for e, k in zip(embs, batch.segment_ids)])
    return out


def pretrain_objective(params: EncoderParams, batch: PretrainBatch, temperature: float):
    """InfoNCE loss of a frozen batch and its exact gradient w.r.t. every encoder parameter."""
    emb_a, feats_a, bb_a, caches_a = _view_embeddings(
        batch.view_a, batch.members_a, batch.keep_a, params, batch.dropout_rate)
    emb_b, feats_b, bb_b, caches_b = _view_embeddings(
        batch.view_b, batch.members_b, batch.keep_b, params, batch.dropout_rate)
    loss, d_a, d_b = info_nce_loss(emb_a, emb_b, temperature)
    grads = {f.name: np.zeros_like(getattr(params, f.name)) for f in fields(params)}
    _view_backward(d_a, feats_a, bb_a, caches_a, params, grads)
    _view_backward(d_b, feats_b, bb_b, caches_b, params, grads)
    return loss, EncoderParams(**grads)


def pretrain_step(cloud, assignment, params: EncoderParams, config: TrainConfig,
                  aug_spec: Optional[AugmentationSpec] = None, step: int = 0):
    """One gradient-descent step; returns ``(updated_params, loss_before_update)``."""
    batch = build_pretrain_batch(cloud, assignment, config, aug_spec, step)
    loss, grads = pretrain_objective(params, batch, config.temperature)
    return params.step(grads, config.learning_rate), loss


def run_pretraining(clouds: Sequence, assignments: Sequence, params: EncoderParams, config: TrainConfig,
                    aug_spec: Optional[AugmentationSpec] = None, start_step: int = 0,
                    steps: Optional[int] = None,
                    on_step: Optional[Callable[[int, float], None]] = None):
    """Serial loop; step ``s`` uses scan ``s % len(clouds)`` and a seed derived from ``(rng_seed, s)``.

    Because every step is a pure function of ``(params, s)``, resuming from saved
    parameters at ``start_step`` continues the uninterrupted trajectory exactly.
    Returns ``(params, losses)``.
    """
    if len(clouds) != len(assignments) or not clouds:
        raise ValueError("need one assignment per cloud and at least one cloud")
    steps = config.steps if steps is None else steps
    losses = []
    for s in range(start_step, start_step + steps):
        i = s % len(clouds)
        params, loss = pretrain_step(clouds[i], assignments[i], params, config, aug_spec, s)
        losses.append(loss)
        if on_step is not None:
            on_step(s, loss)
    return params, losses


# ---------------------------------------------------------------------------
# fine-tuning

def classifier_logits(cloud, params: FinetuneParams) -> np.ndarray:
    return encode_points(cloud, params) @ params.cls_w + params.cls_b


def finetune_objective(params: FinetuneParams, cloud, labels, ignore_id: int):
    x = _as_inputs(cloud)
    check_paired(x, labels)
    feats, cache = _backbone_forward(x, params)
    logits = feats @ params.cls_w + params.cls_b
    loss, d_logits = cross_entropy_loss(logits, labels, ignore_id)
    d_w1, d_b1, d_w2, d_b2 = _backbone_backward(d_logits @ params.cls_w.T, cache, params)
    grads = FinetuneParams(w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2,
                           cls_w=feats.T @ d_logits, cls_b=d_logits.sum(axis=0))
    return loss, grads


def finetune_step(cloud, pseudo_labels, params: FinetuneParams, config: TrainConfig, ignore_id: int):
    """One cross-entropy descent step on pseudo-labels; returns ``(updated_params, loss_before_update)``."""
    loss, grads = finetune_objective(params, cloud, pseudo_labels, ignore_id)
    return params.step(grads, config.learning_rate), loss


def run_finetuning(clouds: Sequence, labels: Sequence, params: FinetuneParams, config: TrainConfig,
                   ignore_id: int, start_step: int = 0, steps: Optional[int] = None,
                   on_step: Optional[Callable[[int, float], None]] = None):
    if len(clouds) != len(labels) or not clouds:
        raise ValueError("need one label array per cloud and at least one cloud")
    steps = config.steps if steps is None else steps
    losses = []
    for s in range(start_step, start_step + steps):
        i = s % len(clouds)
        params, loss = finetune_step(clouds[i], labels[i], params, config, ignore_id)
        losses.append(loss)
        if on_step is not None:
            on_step(s, loss)
    return params, losses


# ---------------------------------------------------------------------------
# estimators

def _as_cloud_list(X):
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [X]
    return list(X)


class SegmentContrastEncoder(TransformerMixin, BaseEstimator):
    """Contrastively pre-trained per-point encoder.

    ``fit`` takes a cloud or a list of clouds; segments come from
    ``assignments`` when given, otherwise from :func:`segment_scan` with
    ``segmentation`` parameters. ``transform`` returns 32-dim point features.
    """

    def __init__(self, temperature=0.1, learning_rate=1e-2, dropout_rate=0.1, n_steps=100,
                 batch_segments=32, augmentation=None, segmentation=None, init_params=None, random_state=0):
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.dropout_rate = dropout_rate
        self.n_steps = n_steps
        self.batch_segments = batch_segments
        self.augmentation = augmentation
        self.segmentation = segmentation
        self.init_params = init_params
        self.random_state = random_state

    def _config(self):
        return TrainConfig(self.temperature, self.learning_rate, self.dropout_rate, self.n_steps,
                           self.batch_segments, self.random_state)

    def fit(self, X, y=None, assignments=None):
        from .segmentation import SegmentationParams, segment_scan

        clouds = _as_cloud_list(X)
        if assignments is None:
            seg = self.segmentation or SegmentationParams(rng_seed=self.random_state)
            assignments = [segment_scan(c, seg) for c in clouds]
        elif not isinstance(assignments, (list, tuple)):
            assignments = [assignments]
        params = self.init_params or EncoderParams.initialize(self.random_state)
        self.params_, self.loss_curve_ = run_pretraining(
            clouds, assignments, params, self._config(), self.augmentation)
        return self

    def transform(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError("SegmentContrastEncoder is not fitted")
        return encode_points(X, self.params_)


class PseudoLabelSegmenter(ClassifierMixin, BaseEstimator):
    """Per-point classifier fine-tuned on (pseudo-)labels.

    ``X`` is an ``(N, 4)`` point array, ``y`` the per-point labels; points
    labelled ``ignore_id`` are excluded from the loss.
    """

    def __init__(self, n_classes=None, learning_rate=1e-2, n_steps=500, ignore_id=255,
                 encoder=None, random_state=0):
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.ignore_id = ignore_id
        self.encoder = encoder
        self.random_state = random_state

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.int64) & SEMANTIC_MASK
        valid = y != self.ignore_id
        if not valid.any():
            raise AllIgnored("every point carries the ignore label")
        n_classes = self.n_classes or int(y[valid].max()) + 1
        encoder = self.encoder or EncoderParams.initialize(self.random_state)
        params = FinetuneParams.from_encoder(encoder, n_classes, self.random_state)
        config = TrainConfig(learning_rate=self.learning_rate, steps=self.n_steps, rng_seed=self.random_state)
        self.params_, self.loss_curve_ = run_finetuning([X], [y], params, config, self.ignore_id)
        self.classes_ = np.arange(n_classes)
        return self

    def decision_function(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError("PseudoLabelSegmenter is not fitted")
        return classifier_logits(X, self.params_)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
