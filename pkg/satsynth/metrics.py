"""
Confusion matrices and intersection-over-union.

Rows of a confusion matrix are ground truth, columns predictions.  IoU is kept
as an exact fraction next to its float value; a class that appears in neither
ground truth nor prediction has no IoU and is left out of the mean.
"""
import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional

import numpy as np

from satsynth.exceptions import InvalidClassIndex, ShapeMismatch
from satsynth.utils import format_float


log = logging.getLogger(__name__)

CLASS_NAMES = ('Water', 'Tree Canopy', 'Low Vegetation', 'Barren Land',
               'Impervious other', 'Impervious road')


class ConfusionMatrix(object):

    def __init__(self, num_classes, counts=None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise ShapeMismatch('confusion matrix', (num_classes, num_classes),
                                self.counts.shape)

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix)
                and np.array_equal(self.counts, other.counts))

    def __add__(self, other):
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def update(self, pred, gt):
        """Tally one batch (any shape, pred and gt alike) into the matrix."""
        pred = np.asarray(pred, dtype=np.int64).ravel()
        gt = np.asarray(gt, dtype=np.int64).ravel()
        if pred.shape != gt.shape:
            raise ShapeMismatch('prediction vs ground truth', gt.shape, pred.shape)
        for values in (pred, gt):
            if values.size:
                lo, hi = int(values.min()), int(values.max())
                if lo < 0 or hi >= self.num_classes:
                    raise InvalidClassIndex(lo if lo < 0 else hi, self.num_classes)
        index = self.num_classes * gt + pred
        self.counts += np.bincount(index, minlength=self.num_classes ** 2).reshape(
            self.num_classes, self.num_classes)
        return self


def confusion_update(cm, pred_classes, gt_mask):
    return cm.update(pred_classes, gt_mask)


@dataclass
class SegMetrics:
    iou_per_class: List[Optional[float]]
    miou: Optional[float]
    exact: List[Optional[Fraction]] = field(default_factory=list, repr=False)
    class_names: List[str] = field(default_factory=list)

    @property
    def absent(self):
        return [i for i, v in enumerate(self.iou_per_class) if v is None]

    def row(self):
        """Per-class IoU cells followed by the mean, as table text."""
        return [format_float(v, 4) for v in self.iou_per_class] + [format_float(self.miou, 4)]

    def to_dict(self):
        return {'iou': dict(zip(self.class_names, self.iou_per_class)), 'miou': self.miou}


def class_names_for(num_classes):
    if num_classes == len(CLASS_NAMES):
        return list(CLASS_NAMES)
    return ['class %d' % i for i in range(num_classes)]


def iou_from_cm(cm, class_names=None):
    counts = cm.counts
    exact = []
    for c in range(cm.num_classes):
        inter = int(counts[c, c])
        union = int(counts[c, :].sum() + counts[:, c].sum()) - inter
        exact.append(Fraction(inter, union) if union else None)
    present = [v for v in exact if v is not None]
    miou = sum(present, Fraction(0)) / len(present) if present else None
    return SegMetrics(
        iou_per_class=[None if v is None else float(v) for v in exact],
        miou=None if miou is None else float(miou),
        exact=exact,
        class_names=list(class_names or class_names_for(cm.num_classes)),
    )


def write_iou_table(rows, path, class_names):
    """
    Per-class IoU CSV: one row per (label, SegMetrics) pair.

    Columns are ``run``, the class names in index order, then ``Mean``.
    """
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['run'] + list(class_names) + ['Mean'])
        for label, metrics in rows:
            writer.writerow([label] + metrics.row())
    return path
