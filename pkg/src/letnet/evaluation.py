"""Confusion-matrix based per-class IoU and mean IoU."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError

IGNORE_INDEX = 255


class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns predictions."""

    def __init__(self, num_classes: int, ignore_index: int = IGNORE_INDEX):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, predictions, truth) -> ConfusionMatrix:
        pred = np.asarray(predictions)
        gt = np.asarray(truth)
        if pred.shape != gt.shape:
            raise DataError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
        keep = gt != self.ignore_index
        pred, gt = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
        k = self.num_classes
        for name, arr in (("ground truth", gt), ("prediction", pred)):
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                bad = arr[(arr < 0) | (arr >= k)][0]
                raise DataError(f"{name} class {int(bad)} outside [0, {k})")
        self.counts += np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)
        return self

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        out = ConfusionMatrix(self.num_classes, self.ignore_index)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accumulate(cm: ConfusionMatrix, predictions, truth) -> ConfusionMatrix:
    return cm.accumulate(predictions, truth)


@dataclass
class IoUReport:
    per_class: list[float | None]
    class_names: list[str]

    @property
    def mean(self) -> float:
        defined = [v for v in self.per_class if v is not None]
        return float(np.mean(defined)) if defined else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "iou"])
        for name, value in zip(self.class_names, self.per_class):
            writer.writerow([name, "" if value is None else repr(value)])
        writer.writerow(["mean", repr(self.mean)])
        return buf.getvalue()

    def table(self) -> str:
        """Class names as column headers, IoU in percent, mean last."""
        cells = [(n, "-" if v is None else f"{100 * v:.1f}") for n, v in zip(self.class_names, self.per_class)]
        cells.append(("Avg", f"{100 * self.mean:.1f}"))
        widths = [max(len(a), len(b)) for a, b in cells]
        head = " | ".join(a.rjust(w) for (a, _), w in zip(cells, widths))
        body = " | ".join(b.rjust(w) for (_, b), w in zip(cells, widths))
        return f"{head}\n{'-' * len(head)}\n{body}"


def iou(cm: ConfusionMatrix, class_names: list[str] | None = None) -> IoUReport:
    c = cm.counts
    tp = np.diag(c)
    denom = c.sum(axis=0) + c.sum(axis=1) - tp
    per_class = [None if d == 0 else float(t / d) for t, d in zip(tp, denom)]
    names = class_names or [str(i) for i in range(cm.num_classes)]
    return IoUReport(per_class, list(names))
