"""SemanticKITTI-layout readers and writers, plus taxonomy remapping.

Point clouds are ``(N, 4)`` float arrays with columns ``x, y, z, remission``.
Label arrays are ``(N,)`` uint32 arrays with the semantic id in the low 16
bits and the instance id in the high 16 bits.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import CountMismatch, FormatError, IoError, LengthMismatch, UnmappedClass

POINT_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
POINT_RECORD_BYTES = 16
LABEL_RECORD_BYTES = 4

SEMANTIC_MASK = 0xFFFF


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_point_cloud(path) -> np.ndarray:
    """Read a ``.bin`` scan into an ``(N, 4)`` float32 array."""
    raw = _read_bytes(path)
    if len(raw) % POINT_RECORD_BYTES:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {POINT_RECORD_BYTES} bytes")
    cloud = np.frombuffer(raw, dtype=POINT_DTYPE).reshape(-1, 4)
    bad = ~np.isfinite(cloud).all(axis=1)
    if bad.any():
        raise FormatError(f"{path}: non-finite value in point {int(np.argmax(bad))}")
    return cloud.astype(np.float32, copy=True)


def write_point_cloud(cloud, path) -> None:
    cloud = check_cloud(cloud)
    _write_bytes(path, np.ascontiguousarray(cloud, dtype=POINT_DTYPE).tobytes())


def read_labels(path, expected_count: Optional[int] = None) -> np.ndarray:
    """Read a ``.label`` file into a uint32 array."""
    raw = _read_bytes(path)
    if len(raw) % LABEL_RECORD_BYTES:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {LABEL_RECORD_BYTES} bytes")
    labels = np.frombuffer(raw, dtype=LABEL_DTYPE).astype(np.uint32)
    if expected_count is not None and labels.shape[0] != expected_count:
        raise CountMismatch(f"{path}: {labels.shape[0]} labels, expected {expected_count}")
    return labels


def write_labels(labels, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    _write_bytes(path, np.ascontiguousarray(labels, dtype=LABEL_DTYPE).tobytes())


def semantic_ids(labels) -> np.ndarray:
    return (np.asarray(labels, dtype=np.uint32) & SEMANTIC_MASK).astype(np.uint32)


def instance_ids(labels) -> np.ndarray:
    return (np.asarray(labels, dtype=np.uint32) >> 16).astype(np.uint32)


def pack_labels(semantic, instance=None) -> np.ndarray:
    semantic = np.asarray(semantic, dtype=np.uint32)
    if instance is None:
        return semantic & SEMANTIC_MASK
    instance = np.asarray(instance, dtype=np.uint32)
    return ((instance & SEMANTIC_MASK) << 16) | (semantic & SEMANTIC_MASK)


def check_cloud(cloud) -> np.ndarray:
    """Validate shape and finiteness of an in-memory point cloud."""
    cloud = np.asarray(cloud)
    if cloud.ndim != 2 or cloud.shape[1] != 4:
        raise ValueError(f"point cloud must have shape (N, 4), got {cloud.shape}")
    if not np.isfinite(cloud).all():
        raise FormatError("point cloud contains non-finite values")
    return cloud


def check_paired(cloud, labels) -> None:
    if len(cloud) != len(labels):
        raise LengthMismatch(f"{len(cloud)} points but {len(labels)} labels")


# ---------------------------------------------------------------------------
# class maps

_MAP_LINE = re.compile(r"^\s*(-?\d+)\s*->\s*(-?\d+)\s*(?:#\s*(.*?))?\s*$")
_IGNORE_LINE = re.compile(r"^\s*ignore\s*=\s*(-?\d+)\s*(?:#.*)?$")


@dataclass(frozen=True)
class ClassMap:
    """Source-to-target semantic id mapping.

    Target ids other than ``ignore_id`` form the contiguous range
    ``0..num_classes-1``.
    """

    entries: Dict[int, int]
    ignore_id: int
    names: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        targets = sorted({t for t in self.entries.values() if t != self.ignore_id})
        if targets != list(range(len(targets))):
            raise FormatError(f"target ids must be contiguous from 0, got {targets}")
        for sid, tid in self.entries.items():
            if not (0 <= sid <= SEMANTIC_MASK and 0 <= tid <= SEMANTIC_MASK):
                raise FormatError(f"ids must fit in 16 bits: {sid} -> {tid}")
        if not 0 <= self.ignore_id <= SEMANTIC_MASK:
            raise FormatError(f"ignore id must fit in 16 bits: {self.ignore_id}")

    @property
    def num_classes(self) -> int:
        return len({t for t in self.entries.values() if t != self.ignore_id})

    def class_names(self) -> List[str]:
        return [self.names.get(c, f"class_{c}") for c in range(self.num_classes)]

    @classmethod
    def identity(cls, num_classes: int, ignore_id: int = 255, names=None) -> "ClassMap":
        """Map for labels already expressed in a target taxonomy."""
        entries = {c: c for c in range(num_classes)}
        if ignore_id >= num_classes:
            entries[ignore_id] = ignore_id
        return cls(entries, ignore_id, dict(names or {}))

    def target_identity(self) -> "ClassMap":
        return ClassMap.identity(self.num_classes, self.ignore_id, self.names)

    def lookup_table(self) -> np.ndarray:
        """Dense 65536-entry table; unmapped ids hold -1."""
        table = np.full(SEMANTIC_MASK + 1, -1, dtype=np.int64)
        for sid, tid in self.entries.items():
            table[sid] = tid
        if table[self.ignore_id] < 0:
            table[self.ignore_id] = self.ignore_id
        return table

    def to_text(self) -> str:
        lines = [f"ignore = {self.ignore_id}"]
        named = set()
        for sid in sorted(self.entries, key=lambda s: (self.entries[s], s)):
            tid = self.entries[sid]
            name = self.names.get(tid) if tid not in named else None
            named.add(tid)
            lines.append(f"{sid} -> {tid}" + (f" # {name}" if name else ""))
        return "\n".join(lines) + "\n"


def parse_class_map(text: str, source: str = "<string>") -> ClassMap:
    entries: Dict[int, int] = {}
    names: Dict[int, str] = {}
    ignore_id = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _IGNORE_LINE.match(stripped)
        if m:
            ignore_id = int(m.group(1))
            continue
        m = _MAP_LINE.match(stripped)
        if not m:
            raise FormatError(f"{source}:{lineno}: cannot parse {line!r}")
        sid, tid = int(m.group(1)), int(m.group(2))
        if sid in entries and entries[sid] != tid:
            raise FormatError(f"{source}:{lineno}: source id {sid} mapped twice")
        entries[sid] = tid
        # first comment per target names it; later ones annotate the source class
        name = m.group(3)
        if name:
            names.setdefault(tid, name)
    if ignore_id is None:
        raise FormatError(f"{source}: missing 'ignore = <id>' directive")
    names.pop(ignore_id, None)
    return ClassMap(entries, ignore_id, names)


def load_class_map(path) -> ClassMap:
    raw = _read_bytes(path)
    return parse_class_map(raw.decode("utf-8"), str(path))


def default_class_map(name: str = "semantickitti_to_poss") -> ClassMap:
    """Load one of the bundled maps (``semantickitti_to_poss`` or ``semanticposs``)."""
    text = resources.files("uda_kit").joinpath("data", f"{name}.map").read_text(encoding="utf-8")
    return parse_class_map(text, f"{name}.map")


def remap_labels(labels, class_map: ClassMap) -> np.ndarray:
    """Replace semantic ids through ``class_map``; instance bits are kept."""
    labels = np.asarray(labels, dtype=np.uint32)
    sem = labels & SEMANTIC_MASK
    mapped = class_map.lookup_table()[sem]
    bad = mapped < 0
    if bad.any():
        first = int(np.argmax(bad))
        raise UnmappedClass(sem[first], first)
    return (labels & ~np.uint32(SEMANTIC_MASK)) | mapped.astype(np.uint32)


# ---------------------------------------------------------------------------
# multi-model predictions

@dataclass
class PredictionSet:
    """K per-model label arrays over one scan; ``model_names`` order is vote priority."""

    model_names: List[str]
    per_model_labels: List[np.ndarray]

    def __post_init__(self):
        if len(self.model_names) != len(self.per_model_labels):
            raise ValueError("one label array per model name is required")
        self.per_model_labels = [np.asarray(a, dtype=np.uint32) for a in self.per_model_labels]
        lengths = {a.shape[0] for a in self.per_model_labels}
        if len(lengths) > 1:
            raise LengthMismatch(f"prediction lengths differ across models: {sorted(lengths)}")

    def __len__(self):
        return len(self.model_names)

    @property
    def num_points(self) -> int:
        return self.per_model_labels[0].shape[0] if self.per_model_labels else 0

    def stacked(self) -> np.ndarray:
        """``(K, N)`` array of semantic ids."""
        if not self.per_model_labels:
            return np.zeros((0, 0), dtype=np.uint32)
        return semantic_ids(np.stack(self.per_model_labels))

    def remapped(self, class_map: ClassMap) -> "PredictionSet":
        return PredictionSet(list(self.model_names), [remap_labels(a, class_map) for a in self.per_model_labels])


def read_prediction_set(scan_id: str, model_dirs: Sequence, expected_count: Optional[int] = None) -> PredictionSet:
    """Read ``<dir>/<scan_id>.label`` for each ``(name, dir)`` pair."""
    from .errors import MissingPrediction

    names, arrays = [], []
    for name, directory in model_dirs:
        path = Path(directory) / f"{scan_id}.label"
        if not path.is_file():
            raise MissingPrediction(scan_id, name, path)
        arr = read_labels(path)
        if expected_count is None:
            expected_count = arr.shape[0]
        elif arr.shape[0] != expected_count:
            raise CountMismatch(f"{path}: {arr.shape[0]} labels, expected {expected_count}")
        names.append(name)
        arrays.append(arr)
    return PredictionSet(names, arrays)


def read_scan_list(path) -> List[str]:
    """Scan ids, one per line; blank lines and ``#`` comments skipped."""
    text = _read_bytes(path).decode("utf-8")
    ids = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            ids.append(line)
    return ids
