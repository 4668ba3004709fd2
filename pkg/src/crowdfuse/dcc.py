"""Dominant-compact-cluster search by greedy agglomeration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Optional, Sequence, Union

from .errors import EmptyInput

Distance = Callable[[Any, Any], float]
Fuse = Callable[[list], Any]
Threshold = Union[float, Callable[[Any], float]]


@dataclass
class Cluster:
    members: list  # (element, worker_id) pairs in input order
    indices: list  # input positions of the members
    head: Any

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def workers(self) -> list:
        return [w for _, w in self.members]

    def spread(self, distance: Distance) -> float:
        """Mean member-to-head distance."""
        return sum(distance(self.head, e) for e, _ in self.members) / self.size


def _threshold(tau: Threshold, head) -> float:
    return tau(head) if callable(tau) else tau


def is_compact(head, elements: Sequence, distance: Distance, tau: Threshold, strict: bool = True) -> bool:
    t = _threshold(tau, head)
    if strict:
        return all(distance(head, e) < t for e in elements)
    return all(distance(head, e) <= t for e in elements)


def dcc(
    elements: Sequence[tuple[Any, Optional[Hashable]]],
    distance: Distance,
    fuse: Fuse,
    tau: Threshold,
    *,
    strict: bool = True,
) -> tuple[Cluster, list[Cluster]]:
    """Cluster ``(element, worker_id)`` pairs and return ``(dominant, clusters)``.

    Starts from singletons and repeatedly merges the pair of clusters whose
    heads are closest. A pair is skipped when its heads are ``tau`` or more
    apart, when the merged head (``fuse`` over the union) would leave a
    member at distance ``tau`` or more (more than ``tau`` when ``strict`` is
    false for both tests), or when it would hold two elements from the same
    worker. ``tau`` may be a callable of the candidate head. Ties are
    broken by the lowest input index, so the result depends only on input
    order.
    """
    if not elements:
        raise EmptyInput("dcc needs at least one element")

    clusters = [Cluster([pair], [i], fuse([pair[0]])) for i, pair in enumerate(elements)]
    rejected: set = set()
    # heads are a function of member indices, so head distances can be reused
    head_dist: dict = {}

    while len(clusters) > 1:
        candidates = []
        keys = [tuple(c.indices) for c in clusters]
        for i in range(len(clusters)):
            ci = clusters[i]
            wi = {w for w in ci.workers if w is not None}
            for j in range(i + 1, len(clusters)):
                cj = clusters[j]
                if wi.intersection(cj.workers):
                    continue
                key = (keys[i], keys[j])
                d = head_dist.get(key)
                if d is None:
                    d = head_dist[key] = distance(ci.head, cj.head)
                if math.isinf(d):
                    continue
                candidates.append((d, i, j))
        candidates.sort()

        for d, i, j in candidates:
            key = (keys[i], keys[j])
            if key in rejected:
                continue
            idx = sorted(clusters[i].indices + clusters[j].indices)
            items = [elements[k][0] for k in idx]
            head = fuse(items)
            t = _threshold(tau, head)
            if (d < t or (not strict and d <= t)) and is_compact(head, items, distance, tau, strict):
                clusters[i] = Cluster([elements[k] for k in idx], idx, head)
                del clusters[j]
                break
            rejected.add(key)
        else:
            break

    dominant = min(clusters, key=lambda c: (-c.size, c.spread(distance), c.indices[0]))
    return dominant, clusters
