"""Scoring fused groundtruth against reference groundtruth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CategoryMismatch, CrowdfuseError
from .geometry import iou_3d, iou_matrix, iou_pixels
from .model import ClassLabel, Count, LabeledBox, Segment

NO_LABEL = "<none>"


@dataclass
class MatchReport:
    n_fused: int
    n_reference: int
    matched: list = field(default_factory=list)  # (fused_idx, reference_idx, iou)
    confusion: dict = field(default_factory=dict)  # reference label -> fused label -> count

    @property
    def n_matched(self) -> int:
        return len(self.matched)

    @property
    def match_precision(self) -> float:
        # vacuously precise when nothing was emitted
        return self.n_matched / self.n_fused if self.n_fused else 1.0

    @property
    def match_recall(self) -> float:
        return self.n_matched / self.n_reference if self.n_reference else 1.0


def merge_reports(reports: Sequence[MatchReport]) -> MatchReport:
    """Micro-average per-task reports; merged pairs are prefixed by the report index."""
    out = MatchReport(sum(r.n_fused for r in reports), sum(r.n_reference for r in reports))
    out.matched = [(k, *m) for k, r in enumerate(reports) for m in r.matched]
    for r in reports:
        for ref, row in r.confusion.items():
            dst = out.confusion.setdefault(ref, {})
            for fused, k in row.items():
                dst[fused] = dst.get(fused, 0) + k
    return out


def _kind(elements: Sequence) -> Optional[type]:
    kinds = {type(e) for e in elements}
    if len(kinds) > 1:
        raise CategoryMismatch(f"mixed element types: {sorted(k.__name__ for k in kinds)}")
    return kinds.pop() if kinds else None


def _common_kind(fused: Sequence, reference: Sequence) -> Optional[type]:
    a, b = _kind(fused), _kind(reference)
    if a is not None and b is not None and a is not b:
        raise CategoryMismatch(f"cannot compare {a.__name__} with {b.__name__}")
    return a or b


def _safe_iou(fn, a, b) -> float:
    try:
        return fn(a, b)
    except CrowdfuseError:
        return 0.0


def overlap_matrix(fused: Sequence, reference: Sequence) -> np.ndarray:
    kind = _common_kind(fused, reference)
    if kind is LabeledBox:
        m = iou_matrix([e.box for e in fused], [e.box for e in reference])
    else:
        fn = iou_pixels if kind is Segment else iou_3d
        m = np.array([[_safe_iou(fn, a, b) for b in reference] for a in fused], dtype=float)
        m = m.reshape(len(fused), len(reference))
    labels_f = [e.label for e in fused]
    labels_r = [e.label for e in reference]
    same = np.array([[lf == lr for lr in labels_r] for lf in labels_f], dtype=bool)
    return np.where(same.reshape(m.shape), m, 0.0)


def _greedy(overlaps: np.ndarray, threshold: float) -> list:
    fi, ri = np.nonzero(overlaps > threshold)
    cands = sorted(zip((-overlaps[fi, ri]).tolist(), fi.tolist(), ri.tolist()))
    used_f, used_r, out = set(), set(), []
    for neg, i, j in cands:
        if i in used_f or j in used_r:
            continue
        used_f.add(i)
        used_r.add(j)
        out.append((i, j, -neg))
    return out


def match_pr(fused: Sequence, reference: Sequence, iou_threshold: float = 0.5) -> MatchReport:
    """One-to-one greedy matching, best overlap first.

    Spatial elements match when their IoU is strictly above the threshold
    and their labels agree; class labels match when equal.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    kind = _common_kind(fused, reference)
    report = MatchReport(len(fused), len(reference))
    if kind is None:
        return report
    if kind is Count:
        raise CategoryMismatch("counts are scored by error, not by matching")
    if kind is ClassLabel:
        free = list(range(len(fused)))
        for j, ref in enumerate(reference):
            hit = next((i for i in free if fused[i].label == ref.label), None)
            if hit is not None:
                free.remove(hit)
                report.matched.append((hit, j, 1.0))
        by_ref = {j: fused[i].label for i, j, _ in report.matched}
        spare = [fused[i].label for i in free]
        for j, ref in enumerate(reference):
            got = by_ref.get(j) or (spare.pop(0) if spare else NO_LABEL)
            row = report.confusion.setdefault(ref.label, {})
            row[got] = row.get(got, 0) + 1
        return report
    report.matched = _greedy(overlap_matrix(fused, reference), iou_threshold)
    return report


def iou_thresholds(start: float = 0.5, stop: float = 0.95, step: float = 0.05) -> list[float]:
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n)]


def average_precision(
    fused: Sequence, reference: Sequence, start: float = 0.5, stop: float = 0.95, step: float = 0.05
) -> float:
    """Mean match precision over the IoU thresholds ``start..stop``."""
    return average_precision_tasks([(fused, reference)], start, stop, step)


def average_precision_tasks(pairs: Sequence, start: float = 0.5, stop: float = 0.95, step: float = 0.05) -> float:
    """Like ``average_precision`` with precision micro-averaged over ``(fused, reference)`` pairs."""
    for fused, reference in pairs:
        kind = _common_kind(fused, reference)
        if kind in (ClassLabel, Count):
            raise CategoryMismatch("average precision applies to spatial categories only")
    overlaps = [overlap_matrix(f, r) if len(f) and len(r) else None for f, r in pairs]
    n_fused = sum(len(f) for f, _ in pairs)
    precisions = []
    for t in iou_thresholds(start, stop, step):
        matched = sum(len(_greedy(m, t)) for m in overlaps if m is not None)
        precisions.append(matched / n_fused if n_fused else 1.0)
    return float(np.mean(precisions))


def price_convergence(trace: Sequence[float], target: float, tolerance: float) -> Optional[int]:
    """First index from which every price stays within ``tolerance`` (relative) of ``target``."""
    if not len(trace):
        raise ValueError("empty price trace")
    band = tolerance * target
    last_out = None
    for i, p in enumerate(trace):
        if abs(p - target) > band:
            last_out = i
    if last_out is None:
        return 0
    return last_out + 1 if last_out + 1 < len(trace) else None
