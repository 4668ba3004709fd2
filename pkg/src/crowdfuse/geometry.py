"""Overlap measures and box arithmetic."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DegeneratePair, EmptyInput, EmptyTracks, GridMismatch
from .model import BoundingBox, Segment, Track


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_br, b.x_br) - max(a.x_tl, b.x_tl)
    h = min(a.y_br, b.y_br) - max(a.y_tl, b.y_tl)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou_box(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        raise DegeneratePair(f"both boxes have zero area: {a}, {b}")
    return inter / union


def iou_pixels(a: Segment, b: Segment) -> float:
    if a.grid != b.grid:
        raise GridMismatch(f"segment grids differ: {a.grid} vs {b.grid}")
    union = len(a.cells | b.cells)
    if union == 0:
        raise DegeneratePair("both segments are empty")
    return len(a.cells & b.cells) / union


def iou_3d(a: Track, b: Track) -> float:
    """Per-frame intersections summed over per-frame unions.

    A frame annotated in only one track adds that box's area to the union
    and nothing to the intersection.
    """
    if not a.frames and not b.frames:
        raise EmptyTracks("both tracks have no frames")
    inter = union = 0.0
    for f in a.frames.keys() | b.frames.keys():
        ba, bb = a.frames.get(f), b.frames.get(f)
        if ba is None:
            union += bb.area
        elif bb is None:
            union += ba.area
        else:
            i = intersection_area(ba, bb)
            inter += i
            union += ba.area + bb.area - i
    if union <= 0:
        raise DegeneratePair("tracks cover zero total area")
    return inter / union


def corner_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Largest absolute difference over the four corner coordinates."""
    return max(
        abs(a.x_tl - b.x_tl), abs(a.y_tl - b.y_tl), abs(a.x_br - b.x_br), abs(a.y_br - b.y_br)
    )


def box_average(boxes: Sequence[BoundingBox]) -> BoundingBox:
    if not boxes:
        raise EmptyInput("box_average needs at least one box")
    n = len(boxes)
    if n == 1:
        return boxes[0]
    return BoundingBox(
        sum(b.x_tl for b in boxes) / n,
        sum(b.y_tl for b in boxes) / n,
        sum(b.x_br for b in boxes) / n,
        sum(b.y_br for b in boxes) / n,
    )


def iou_matrix(a: Sequence[BoundingBox], b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise box IoU; degenerate pairs score 0."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    A = np.array([x.as_tuple() for x in a], dtype=float)
    B = np.array([x.as_tuple() for x in b], dtype=float)
    w = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    h = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(w, 0, None) * np.clip(h, 0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def pixel_iou_matrix(segments: Sequence[Segment]) -> np.ndarray:
    """Pairwise pixel IoU of segments on one grid; empty pairs score 0.

    Matches ``iou_pixels`` exactly: intersections are integer counts taken
    over the pixels that any segment occupies.
    """
    n = len(segments)
    if n == 0:
        return np.zeros((0, 0))
    width = segments[0].grid[0]
    flat = [np.fromiter((x + y * width for x, y in s.cells), dtype=np.int64, count=len(s.cells)) for s in segments]
    used, inverse = np.unique(np.concatenate(flat), return_inverse=True)
    mask = np.zeros((n, len(used)), dtype=np.float64)
    start = 0
    for i, f in enumerate(flat):
        mask[i, inverse[start : start + len(f)]] = 1.0
        start += len(f)
    inter = mask @ mask.T
    areas = np.array([len(f) for f in flat], dtype=np.float64)
    union = areas[:, None] + areas[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
