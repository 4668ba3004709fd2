"""Greedy multipartite association of elements drawn by different workers."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass
class AssociationGroup:
    """Elements hypothesised to describe one object, at most one per worker.

    ``members`` holds ``(worker_position, element_position)`` pairs indexing
    into the per-worker lists passed to ``associate_elements``.
    """

    members: list

    @property
    def workers(self) -> list:
        return [w for w, _ in self.members]


def associate_elements(
    per_worker: Sequence[Sequence],
    similarity: Optional[Callable] = None,
    *,
    matrix: Optional[np.ndarray] = None,
) -> list[AssociationGroup]:
    """Group elements across workers by greedy average-linkage merging.

    Every element starts in its own set. At each step the two sets with the
    highest average pairwise similarity are merged, provided the result
    keeps at most one element per worker and the average is positive.
    Either ``similarity(a, b)`` or a precomputed ``matrix`` over the
    flattened element list (worker-major order) must be given.
    """
    owners: list[int] = []
    positions: list[tuple[int, int]] = []
    flat = []
    for w, elems in enumerate(per_worker):
        for k, e in enumerate(elems):
            owners.append(w)
            positions.append((w, k))
            flat.append(e)
    n = len(flat)
    if n == 0:
        return []

    # sums[a][c]: summed similarity between live sets a and c (positive only)
    sums: list[dict] = [dict() for _ in range(n)]
    if matrix is None:
        if similarity is None:
            raise TypeError("associate_elements needs `similarity` or `matrix`")
        for i in range(n):
            for j in range(i + 1, n):
                if owners[i] != owners[j]:
                    s = similarity(flat[i], flat[j])
                    if s > 0:
                        sums[i][j] = sums[j][i] = s
    else:
        same = np.equal.outer(owners, owners)
        ii, jj = np.nonzero(np.triu((matrix > 0) & ~same, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            s = float(matrix[i, j])
            sums[i][j] = sums[j][i] = s

    sets = [[i] for i in range(n)]
    workers = [{owners[i]} for i in range(n)]
    alive = [True] * n
    version = [0] * n
    heap = []
    for i in range(n):
        for j, s in sums[i].items():
            if j > i:
                heap.append((-s, i, j, 0, 0))
    heapq.heapify(heap)

    while heap:
        neg_avg, a, b, va, vb = heapq.heappop(heap)
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        if workers[a] & workers[b]:
            # sets only grow, so this pair stays illegal
            continue
        sets[a].extend(sets[b])
        workers[a] |= workers[b]
        alive[b] = False
        version[a] += 1
        for c, s in sums[b].items():
            if c == a:
                continue
            sums[a][c] = sums[a].get(c, 0.0) + s
            del sums[c][b]
            sums[c][a] = sums[a][c]
        sums[a].pop(b, None)
        sums[b] = {}
        size_a = len(sets[a])
        for c, s in sums[a].items():
            if workers[a] & workers[c]:
                continue
            lo, hi = (a, c) if a < c else (c, a)
            heapq.heappush(heap, (-s / (size_a * len(sets[c])), lo, hi, version[lo], version[hi]))

    return [
        AssociationGroup(sorted(positions[i] for i in sets[a]))
        for a in range(n)
        if alive[a]
    ]
