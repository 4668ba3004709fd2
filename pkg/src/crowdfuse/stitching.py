"""Splitting videos into overlapping chunks and joining per-chunk tracks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import CrowdfuseError, OverlapMismatch
from .geometry import iou_3d
from .model import Track

STITCH_MIN_IOU = 0.3


@dataclass
class Chunk:
    """Fused tracks of one chunk covering frames ``[start, stop)`` in video coordinates."""

    start: int
    stop: int
    tracks: list = field(default_factory=list)


def chunk_video(n_frames: int, chunk_frames: int, overlap_frames: int) -> list[tuple[int, int]]:
    """``[start, stop)`` frame ranges; consecutive ranges share ``overlap_frames`` frames."""
    if n_frames < 1:
        return []
    if not 1 <= overlap_frames < chunk_frames:
        raise OverlapMismatch(f"need 1 <= overlap < chunk length, got {overlap_frames}, {chunk_frames}")
    spans = []
    start = 0
    while True:
        stop = min(start + chunk_frames, n_frames)
        spans.append((start, stop))
        if stop >= n_frames:
            return spans
        start = stop - overlap_frames


def chunk_frames_for(frame_rate: float, chunk_seconds: float = 3.0, overlap_seconds: float = 0.5) -> tuple[int, int]:
    return round(chunk_seconds * frame_rate), round(overlap_seconds * frame_rate)


def _overlap_iou(a: Track, b: Track) -> float:
    try:
        return iou_3d(a, b)
    except CrowdfuseError:
        return 0.0


def stitch_chunks(chunks: Sequence[Chunk], overlap_frames: int) -> list[Track]:
    """Join per-chunk tracks into video-level tracks.

    Tracks of consecutive chunks are paired greedily by 3D-IoU over the
    shared frames, best pair first, keeping pairs with IoU >= 0.3 and equal
    labels. A paired track continues the earlier track's identity, and in
    shared frames the earlier chunk's boxes are kept.
    """
    if overlap_frames < 1:
        raise OverlapMismatch(f"overlap_frames must be >= 1, got {overlap_frames}")
    if not chunks:
        return []

    labels: list[str] = []
    frames: list[dict] = []

    def new_identity(track: Track) -> int:
        labels.append(track.label)
        frames.append(dict(track.frames))
        return len(frames) - 1

    ids = [new_identity(t) for t in chunks[0].tracks]
    for prev, cur in zip(chunks, chunks[1:]):
        shared = prev.stop - cur.start
        if shared != overlap_frames:
            raise OverlapMismatch(
                f"chunks [{prev.start},{prev.stop}) and [{cur.start},{cur.stop}) share {shared} frames, "
                f"expected {overlap_frames}"
            )
        lo, hi = cur.start, prev.stop
        prev_cut = [t.restricted(lo, hi) for t in prev.tracks]
        cur_cut = [t.restricted(lo, hi) for t in cur.tracks]
        pairs = []
        for i, a in enumerate(prev_cut):
            for j, b in enumerate(cur_cut):
                if a.label != b.label:
                    continue
                score = _overlap_iou(a, b)
                if score >= STITCH_MIN_IOU:
                    pairs.append((-score, i, j))
        pairs.sort()

        taken_prev, next_ids = set(), [None] * len(cur.tracks)
        for _, i, j in pairs:
            if i in taken_prev or next_ids[j] is not None:
                continue
            taken_prev.add(i)
            g = ids[i]
            next_ids[j] = g
            for f, box in cur.tracks[j].frames.items():
                frames[g].setdefault(f, box)
        for j, t in enumerate(cur.tracks):
            if next_ids[j] is None:
                next_ids[j] = new_identity(t)
        ids = next_ids

    return [Track(label, fr) for label, fr in zip(labels, frames)]
