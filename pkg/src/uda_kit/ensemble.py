"""Hard-vote fusion of per-model predictions into pseudo-labels."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .cloud_io import POINT_RECORD_BYTES, ClassMap, PredictionSet, read_prediction_set, write_labels
from .errors import EmptyEnsemble, LengthMismatch, MissingFile


@dataclass
class VoteTally:
    """Votes at a single point."""

    counts: Dict[int, int]
    winner: int
    tie_flag: bool


def _vote(stacked: np.ndarray):
    """``stacked`` is ``(K, N)`` semantic ids. Returns winners, winning vote counts, tie flags."""
    k, n = stacked.shape
    # agree[j, i] = number of models voting for model j's label at point i
    agree = np.zeros((k, n), dtype=np.int64)
    for j in range(k):
        agree[j] = (stacked == stacked[j]).sum(axis=0)
    top = agree.max(axis=0)
    first = np.argmax(agree == top, axis=0)  # earliest model holding a top label
    winner = stacked[first, np.arange(n)]
    tie = ((agree == top) & (stacked != winner)).any(axis=0)
    return winner, top, tie


def hard_vote(predictions: PredictionSet) -> Tuple[np.ndarray, int]:
    """Per-point majority label; ties go to the earliest model in ``model_names``.

    Instance bits of the output are zero. Returns ``(labels, tie_count)``.
    """
    if len(predictions) == 0:
        raise EmptyEnsemble("no models in the ensemble")
    lengths = {a.shape[0] for a in predictions.per_model_labels}
    if len(lengths) != 1:
        raise LengthMismatch(f"prediction lengths differ: {sorted(lengths)}")
    winner, _, tie = _vote(predictions.stacked())
    return winner.astype(np.uint32), int(tie.sum())


def tally_point(predictions: PredictionSet, index: int) -> VoteTally:
    column = predictions.stacked()[:, index]
    labels, counts = np.unique(column, return_counts=True)
    winner, _, tie = _vote(column[:, None])
    return VoteTally({int(l): int(c) for l, c in zip(labels, counts)}, int(winner[0]), bool(tie[0]))


@dataclass
class FusionSummary:
    num_models: int
    scans: int = 0
    points: int = 0
    ties: int = 0
    # agreement[c, v] = points fused to class c with exactly v winning votes
    agreement: Optional[np.ndarray] = None
    per_scan: List[Tuple[str, int, int]] = field(default_factory=list)

    def add(self, scan_id: str, winner: np.ndarray, votes: np.ndarray, ties: int, num_classes: int):
        if self.agreement is None:
            self.agreement = np.zeros((num_classes, self.num_models + 1), dtype=np.int64)
        keep = winner < num_classes
        np.add.at(self.agreement, (winner[keep].astype(np.int64), votes[keep]), 1)
        self.scans += 1
        self.points += int(winner.size)
        self.ties += int(ties)
        self.per_scan.append((scan_id, int(winner.size), int(ties)))

    def to_text(self, class_names: Optional[Sequence[str]] = None) -> str:
        lines = [
            f"scans processed: {self.scans}",
            f"total points: {self.points}",
            f"tie-broken points: {self.ties}",
            "vote agreement (points per winning vote count):",
        ]
        if self.agreement is not None:
            header = "  class".ljust(20) + "".join(f"{v:>10d}" for v in range(1, self.num_models + 1))
            lines.append(header)
            for c, row in enumerate(self.agreement):
                name = class_names[c] if class_names and c < len(class_names) else str(c)
                lines.append(f"  {name}".ljust(20) + "".join(f"{x:>10d}" for x in row[1:]))
        return "\n".join(lines) + "\n"

    def to_csv(self, class_names: Optional[Sequence[str]] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class"] + [f"votes_{v}" for v in range(1, self.num_models + 1)])
        if self.agreement is not None:
            for c, row in enumerate(self.agreement):
                name = class_names[c] if class_names and c < len(class_names) else str(c)
                w.writerow([name] + [int(x) for x in row[1:]])
        return buf.getvalue()


def _point_count(points_dir, scan_id) -> int:
    path = Path(points_dir) / f"{scan_id}.bin"
    if not path.is_file():
        raise MissingFile(f"missing point cloud for scan {scan_id!r} ({path})")
    return path.stat().st_size // POINT_RECORD_BYTES


def fuse_scan(scan_id: str, model_dirs: Sequence[Tuple[str, str]], class_map: ClassMap, points_dir=None):
    """Read, remap and vote one scan. Returns ``(fused, winning_votes, tie_count)``.

    With ``points_dir`` every prediction must match the scan's point count.
    """
    expected = None if points_dir is None else _point_count(points_dir, scan_id)
    preds = read_prediction_set(scan_id, model_dirs, expected).remapped(class_map)
    if len(preds) == 0:
        raise EmptyEnsemble("no models in the ensemble")
    winner, votes, tie = _vote(preds.stacked())
    return winner.astype(np.uint32), votes, int(tie.sum())


def generate_pseudo_labels(scan_ids: Sequence[str], model_dirs: Sequence[Tuple[str, str]], class_map: ClassMap,
                           out_dir, workers: int = 1, write: bool = True, points_dir=None) -> FusionSummary:
    """Fuse every scan in ``scan_ids`` and write ``<out_dir>/<scan>.label``.

    ``model_dirs`` is an ordered list of ``(model_name, directory)`` pairs;
    its order is the tie-break priority.
    """
    if not model_dirs:
        raise EmptyEnsemble("no models in the ensemble")
    out_dir = Path(out_dir)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)

    def work(scan_id):
        fused, votes, ties = fuse_scan(scan_id, model_dirs, class_map, points_dir)
        if write:
            write_labels(fused, out_dir / f"{scan_id}.label")
        return scan_id, fused, votes, ties

    summary = FusionSummary(num_models=len(model_dirs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, scan_ids))
    else:
        results = [work(s) for s in scan_ids]
    for scan_id, fused, votes, ties in results:
        summary.add(scan_id, fused, votes, ties, class_map.num_classes)
    return summary


class HardVoter(ClassifierMixin, BaseEstimator):
    """Hard-vote over columns of ``X``; column ``j`` is model ``j``'s per-point prediction.

    Column order is the tie-break priority. ``fit`` only records the model
    count and the label set seen.
    """

    def __init__(self, model_names=None):
        self.model_names = model_names

    def fit(self, X, y=None):
        X = self._check(X)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.unique(X)
        return self

    def _check(self, X):
        X = np.asarray(X)
        if X.ndim != 2:
            raise ValueError(f"expected (n_points, n_models) predictions, got {X.shape}")
        if X.shape[1] == 0:
            raise EmptyEnsemble("no models in the ensemble")
        if self.model_names is not None and len(self.model_names) != X.shape[1]:
            raise ValueError("model_names must have one entry per column")
        return X.astype(np.uint32)

    def predict(self, X):
        X = self._check(X)
        names = list(self.model_names or [f"model_{j}" for j in range(X.shape[1])])
        labels, self.tie_count_ = hard_vote(PredictionSet(names, list(X.T)))
        return labels
