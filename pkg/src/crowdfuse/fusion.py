"""Groundtruth fusion for each job category.

Every algorithm reduces to a dominant-compact-cluster search with a
category-specific distance, fusion function and threshold. Spatial
categories first associate elements across workers, then cluster each
association group separately.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable, Optional, Sequence

import numpy as np

from .association import associate_elements
from .dcc import Cluster, dcc
from .errors import CategoryMismatch, EmptyInput, GridMismatch
from .geometry import box_average, corner_distance, iou_3d, iou_matrix, iou_pixels, pixel_iou_matrix
from .model import (
    Category,
    ClassLabel,
    Count,
    FusedResult,
    FusionParams,
    LabeledBox,
    Segment,
    Track,
    WorkerResult,
)

SEGMENT_VOTES = 3
_EPS = 1e-9


# --------------------------------------------------------------------------
# classification


def fuse_classification(labels: Sequence[tuple[str, object]], beta: float) -> Optional[tuple[str, int]]:
    """Return ``(label, support)`` for the label reaching a ``beta`` vote share, else None."""
    if not labels:
        raise EmptyInput("no labels to fuse")
    n = len(labels)
    votes = Counter(label for label, _ in labels)
    # most_common keeps first-seen order among equal counts
    label, support = votes.most_common(1)[0]
    if support / n >= beta - _EPS:
        return label, support
    return None


# --------------------------------------------------------------------------
# counting


def count_threshold(epsilon: float) -> Callable[[float], float]:
    return lambda mean: math.floor(epsilon * mean + _EPS)


def cluster_counts(counts: Sequence[tuple[float, object]], epsilon: float) -> tuple[Cluster, list[Cluster]]:
    """DCC over counts: distance ``|a - b|``, head = mean, threshold ``floor(epsilon * mean)``.

    Membership is inclusive (distance <= threshold) so equal small counts
    still agree.
    """
    if not counts:
        raise EmptyInput("no counts to fuse")
    return dcc(
        [(float(c), w) for c, w in counts],
        distance=lambda a, b: abs(a - b),
        fuse=lambda xs: sum(xs) / len(xs),
        tau=count_threshold(epsilon),
        strict=False,
    )


def fuse_counts(counts: Sequence[tuple[float, object]], epsilon: float) -> tuple[float, Cluster]:
    """Mean of the dominant cluster of counts."""
    dominant, _ = cluster_counts(counts, epsilon)
    return dominant.head, dominant


def count_support_needed(n: int) -> int:
    return math.ceil(n / 2)


# --------------------------------------------------------------------------
# spatial categories


def box_distance(a: LabeledBox, b: LabeledBox) -> float:
    return corner_distance(a.box, b.box)


def fuse_boxes(items: list) -> LabeledBox:
    return LabeledBox(box_average([it.box for it in items]), items[0].label)


def inverse_iou(iou: Callable) -> Callable:
    def distance(a, b) -> float:
        v = iou(a, b)
        return math.inf if v <= 0 else 1.0 / v

    return distance


segment_distance = inverse_iou(iou_pixels)
track_distance = inverse_iou(iou_3d)


def fuse_segment_cells(items: list, votes: int = SEGMENT_VOTES) -> Segment:
    """Pixels marked by at least ``min(votes, len(items))`` of the segments."""
    need = min(votes, len(items))
    tally = Counter()
    for seg in items:
        tally.update(seg.cells)
    first = items[0]
    return Segment(
        frozenset(c for c, k in tally.items() if k >= need), first.label, first.width, first.height
    )


def fuse_track_frames(items: list) -> Track:
    frames: dict = {}
    for t in items:
        for f, box in t.frames.items():
            frames.setdefault(f, []).append(box)
    return Track(items[0].label, {f: box_average(bs) for f, bs in frames.items()})


def _require(results: Sequence[WorkerResult], kind: type, category: str) -> None:
    for r in results:
        for e in r.elements:
            if not isinstance(e, kind):
                raise CategoryMismatch(
                    f"{category} fusion got {type(e).__name__} from worker {r.worker_id}"
                )


def _fuse_spatial(
    results: Sequence[WorkerResult],
    params: FusionParams,
    distance: Callable,
    fuse: Callable,
    *,
    similarity: Optional[Callable] = None,
    matrix_fn: Optional[Callable] = None,
) -> FusedResult:
    worker_ids = [r.worker_id for r in results]
    accept = {w: 0 for w in worker_ids}
    corroborated = []
    uncorroborated = 0
    details = []

    labels = sorted({e.label for r in results for e in r.elements})
    for label in labels:
        per_worker = [[e for e in r.elements if e.label == label] for r in results]
        flat = [e for elems in per_worker for e in elems]
        matrix = matrix_fn(flat) if matrix_fn is not None else None
        groups = associate_elements(per_worker, similarity, matrix=matrix)
        for group in groups:
            members = [(per_worker[w][k], worker_ids[w]) for w, k in group.members]
            dominant, clusters = dcc(members, distance, fuse, params.tau)
            ok = dominant.size >= params.n_corr
            details.append((dominant, clusters, ok))
            if ok:
                corroborated.append((dominant.head, dominant.size))
                for w in dominant.workers:
                    accept[w] += 1
            else:
                uncorroborated += 1

    return FusedResult(corroborated, uncorroborated, accept, details)


def _box_matrix(flat: list) -> np.ndarray:
    return iou_matrix([e.box for e in flat], [e.box for e in flat])


def fuse_detections(results: Sequence[WorkerResult], params: FusionParams) -> FusedResult:
    _require(results, LabeledBox, "detection")
    return _fuse_spatial(results, params, box_distance, fuse_boxes, matrix_fn=_box_matrix)


def _safe(iou: Callable) -> Callable:
    def sim(a, b) -> float:
        try:
            return iou(a, b)
        except GridMismatch:
            raise
        except ValueError:
            return 0.0

    return sim


def fuse_segments(results: Sequence[WorkerResult], params: FusionParams) -> FusedResult:
    _require(results, Segment, "segmentation")
    grids = {e.grid for r in results for e in r.elements}
    if len(grids) > 1:
        raise GridMismatch(f"segments drawn on different grids: {sorted(grids)}")
    return _fuse_spatial(results, params, segment_distance, fuse_segment_cells, matrix_fn=pixel_iou_matrix)


def fuse_tracks(results: Sequence[WorkerResult], params: FusionParams) -> FusedResult:
    _require(results, Track, "tracking")
    return _fuse_spatial(results, params, track_distance, fuse_track_frames, similarity=_safe(iou_3d))


# --------------------------------------------------------------------------
# dispatch


def fuse_task(category: Category, results: Sequence[WorkerResult], params: FusionParams) -> FusedResult:
    """Run the category's fusion and express the outcome as a ``FusedResult``."""
    category = Category(category)
    if not results:
        raise EmptyInput("no results to fuse")
    if category.is_classification:
        _require(results, ClassLabel, "classification")
        votes = [(r.elements[0].label, r.worker_id) for r in results if r.elements]
        accept = {r.worker_id: 0 for r in results}
        best = fuse_classification(votes, params.beta) if votes else None
        if best is None:
            return FusedResult([], 1, accept)
        label, support = best
        for v, w in votes:
            if v == label:
                accept[w] = 1
        return FusedResult([(ClassLabel(label), support)], 0, accept)
    if category is Category.COUNTING:
        _require(results, Count, "counting")
        counts = [(r.elements[0].value if r.elements else 0.0, r.worker_id) for r in results]
        value, cluster = fuse_counts(counts, params.epsilon)
        accept = {r.worker_id: 0 for r in results}
        if cluster.size >= count_support_needed(len(counts)):
            for w in cluster.workers:
                accept[w] = 1
            fused = FusedResult([(Count(value), cluster.size)], 0, accept)
        else:
            fused = FusedResult([], 1, accept)
        fused.details = [(cluster, None, fused.corroborated != [])]
        return fused
    if category is Category.DETECTION:
        return fuse_detections(results, params)
    if category is Category.SEGMENTATION:
        return fuse_segments(results, params)
    return fuse_tracks(results, params)
