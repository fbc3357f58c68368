"""Confusion-matrix accumulation and segmentation metrics (per-class IoU, mIoU, accuracy)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .cloud_io import ClassMap, read_labels, remap_labels, semantic_ids
from .errors import EmptyMatrix, LengthMismatch, MissingFile, NoDefinedClasses


class ConfusionMatrix:
    """C x C int64 counts, rows = ground truth, columns = prediction.

    Points whose truth is ``ignore_id`` are never counted. Points with a
    valid truth but a prediction equal to ``ignore_id`` are left out of the
    matrix as well and tallied in ``ignored_predictions``.
    """

    def __init__(self, num_classes: int, ignore_id: int = 255, counts=None, ignored_predictions: int = 0):
        self.num_classes = int(num_classes)
        self.ignore_id = int(ignore_id)
        if counts is None:
            counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise ValueError(f"counts must be {self.num_classes}x{self.num_classes}")
        self.ignored_predictions = int(ignored_predictions)

    @classmethod
    def for_map(cls, class_map: ClassMap) -> "ConfusionMatrix":
        return cls(class_map.num_classes, class_map.ignore_id)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.ignore_id, self.counts.copy(), self.ignored_predictions)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if (self.num_classes, self.ignore_id) != (other.num_classes, other.ignore_id):
            raise ValueError("cannot merge matrices over different class sets")
        return ConfusionMatrix(self.num_classes, self.ignore_id, self.counts + other.counts,
                               self.ignored_predictions + other.ignored_predictions)

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.ignore_id == other.ignore_id
                and np.array_equal(self.counts, other.counts)
                and self.ignored_predictions == other.ignored_predictions)

    def add_semantic(self, truth, pred) -> "ConfusionMatrix":
        """Tally target-space semantic ids in place."""
        truth = np.asarray(truth, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        if truth.shape != pred.shape:
            raise LengthMismatch(f"{truth.size} truth labels vs {pred.size} predictions")
        valid = truth != self.ignore_id
        scored = valid & (pred != self.ignore_id)
        t, p = truth[scored], pred[scored]
        c = self.num_classes
        if t.size and (t.max() >= c or p.max() >= c or t.min() < 0 or p.min() < 0):
            raise ValueError(f"labels must lie in 0..{c - 1} or equal the ignore id")
        self.counts += np.bincount(t * c + p, minlength=c * c).reshape(c, c)
        self.ignored_predictions += int((valid & ~scored).sum())
        return self

    def to_csv(self, class_names: Optional[Sequence[str]] = None) -> str:
        names = list(class_names or range(self.num_classes))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred"] + names)
        for name, row in zip(names, self.counts):
            w.writerow([name] + [int(x) for x in row])
        return buf.getvalue()


def accumulate_confusion(matrix: ConfusionMatrix, truth, pred, class_map: Optional[ClassMap] = None,
                         pred_map: Optional[ClassMap] = None) -> ConfusionMatrix:
    """Add one truth/prediction pair to ``matrix`` (in place, also returned).

    ``class_map`` remaps the truth labels, and the predictions too unless
    ``pred_map`` is given. ``None`` means the labels are already target ids.
    """
    truth = np.asarray(truth, dtype=np.uint32)
    pred = np.asarray(pred, dtype=np.uint32)
    if truth.shape != pred.shape:
        raise LengthMismatch(f"{truth.size} truth labels vs {pred.size} predictions")
    pred_map = class_map if pred_map is None else pred_map
    if class_map is not None:
        truth = remap_labels(truth, class_map)
    if pred_map is not None:
        pred = remap_labels(pred, pred_map)
    return matrix.add_semantic(semantic_ids(truth), semantic_ids(pred))


def class_iou(matrix: ConfusionMatrix, c: int) -> Optional[float]:
    """TP / (TP + FP + FN), or ``None`` when the class never occurs in truth or prediction."""
    counts = matrix.counts
    tp = int(counts[c, c])
    union = int(counts[c, :].sum()) + int(counts[:, c].sum()) - tp
    if union == 0:
        return None
    return tp / union


def per_class_iou(matrix: ConfusionMatrix) -> List[Optional[float]]:
    return [class_iou(matrix, c) for c in range(matrix.num_classes)]


def mean_iou(matrix: ConfusionMatrix) -> float:
    """Mean IoU over classes whose IoU is defined."""
    values = [v for v in per_class_iou(matrix) if v is not None]
    if not values:
        raise NoDefinedClasses("no class has a defined IoU")
    return float(sum(values) / len(values))


def overall_accuracy(matrix: ConfusionMatrix) -> float:
    total = matrix.total
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return int(np.trace(matrix.counts)) / total


def mean_class_accuracy(matrix: ConfusionMatrix) -> float:
    """Macro recall over classes present in the ground truth."""
    support = matrix.counts.sum(axis=1)
    present = support > 0
    if not present.any():
        raise EmptyMatrix("confusion matrix is empty")
    return float(np.mean(np.diag(matrix.counts)[present] / support[present]))


@dataclass
class EvalReport:
    class_names: List[str]
    iou: List[Optional[float]]
    miou: float
    accuracy: float
    class_accuracy: float
    matrix: ConfusionMatrix

    @classmethod
    def from_matrix(cls, matrix: ConfusionMatrix, class_names=None) -> "EvalReport":
        names = list(class_names or [f"class_{c}" for c in range(matrix.num_classes)])
        return cls(names, per_class_iou(matrix), mean_iou(matrix), overall_accuracy(matrix),
                   mean_class_accuracy(matrix), matrix)

    def to_text(self) -> str:
        def fmt(v):
            return "   n/a" if v is None else f"{v:6.3f}"

        cols = ["IoU avg", "Acc avg"] + self.class_names
        width = max(8, max(len(c) for c in cols) + 1)
        header = "".join(c.rjust(width) for c in cols)
        values = [self.miou, self.accuracy] + self.iou
        row = "".join(fmt(v).rjust(width) for v in values)
        extra = [
            f"mean class accuracy: {self.class_accuracy:.3f}",
            f"scored points: {self.matrix.total}",
        ]
        if self.matrix.ignored_predictions:
            extra.append(f"points predicted as ignore (not scored): {self.matrix.ignored_predictions}")
        return "\n".join([header, row] + extra) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["iou_avg", repr(self.miou)])
        w.writerow(["acc_avg", repr(self.accuracy)])
        w.writerow(["mean_class_acc", repr(self.class_accuracy)])
        for name, v in zip(self.class_names, self.iou):
            w.writerow([f"iou_{name}", "" if v is None else repr(v)])
        return buf.getvalue()


def eval_report(truth_dir, pred_dir, scan_ids: Sequence[str], class_map: ClassMap,
                pred_map: Optional[ClassMap] = None) -> EvalReport:
    """Accumulate every scan's ``<scan>.label`` pair, then compute all metrics once."""
    matrix = ConfusionMatrix.for_map(class_map)
    for scan_id in scan_ids:
        paths = [Path(truth_dir) / f"{scan_id}.label", Path(pred_dir) / f"{scan_id}.label"]
        for path in paths:
            if not path.is_file():
                raise MissingFile(f"missing label file for scan {scan_id!r}: {path}")
        truth = read_labels(paths[0])
        pred = read_labels(paths[1])
        if truth.shape != pred.shape:
            raise LengthMismatch(f"scan {scan_id!r}: {truth.size} truth labels vs {pred.size} predictions")
        accumulate_confusion(matrix, truth, pred, class_map, pred_map)
    if matrix.total == 0:
        raise EmptyMatrix("nothing to evaluate (empty scan list or all points ignored)")
    return EvalReport.from_matrix(matrix, class_map.class_names())
