"""Per-task quality-control loop and worker approval."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .errors import AlreadyAggregated
from .fusion import fuse_counts, fuse_task
from .model import Category, FusedResult, FusionParams, TaskState, TaskStatus, WorkerResult

_EPS = 1e-9


@dataclass(frozen=True)
class NeedMore:
    additional: int = 1


@dataclass(frozen=True)
class Aggregated:
    fused: FusedResult
    # False when the task was closed by hitting n_max rather than by agreement
    converged: bool = True


LoopDecision = Union[NeedMore, Aggregated]


def qc_step(task: TaskState, params: FusionParams, category: Category) -> LoopDecision:
    if task.status is not TaskStatus.OPEN:
        raise AlreadyAggregated(f"task {task.task_id} is {task.status.value}")
    n = len(task.results)
    if n < params.n_min:
        return NeedMore(1)
    category = Category(category)
    fused = fuse_task(category, task.results, params)
    if category.is_spatial:
        done = fused.coverage >= params.eta_cov - _EPS
    else:
        done = bool(fused.corroborated)
    if done:
        return Aggregated(fused, True)
    if n >= params.n_max:
        return Aggregated(fused, False)
    return NeedMore(1)


def _first_label(result: WorkerResult) -> Optional[str]:
    return result.elements[0].label if result.elements else None


def evaluate_classification(
    results: Sequence[WorkerResult], fused_label: Optional[str], beta: float
) -> dict[str, bool]:
    """Approve voters of the fused label; without one, voters of the smallest
    most-voted label set that jointly reaches a ``beta`` share."""
    votes = [(r.worker_id, _first_label(r)) for r in results]
    if fused_label is not None:
        return {w: label == fused_label for w, label in votes}
    n = len(votes)
    tally = Counter(label for _, label in votes if label is not None)
    chosen, covered = set(), 0
    for label, k in tally.most_common():
        chosen.add(label)
        covered += k
        if covered / n >= beta - _EPS:
            break
    return {w: label in chosen for w, label in votes}


def evaluate_counting(results: Sequence[WorkerResult], fused: float, epsilon: float) -> dict[str, bool]:
    out = {}
    for r in results:
        c = r.elements[0].value if r.elements else 0.0
        out[r.worker_id] = abs(c - fused) <= epsilon * fused + _EPS
    return out


def evaluate_spatial(results: Sequence[WorkerResult], fused: FusedResult) -> dict[str, bool]:
    """Approve workers present in more than half of the corroborated objects' dominant clusters."""
    k = len(fused.corroborated)
    if k == 0:
        return {r.worker_id: True for r in results}
    return {r.worker_id: fused.per_worker_accept.get(r.worker_id, 0) > k / 2 for r in results}


def evaluate_task(
    category: Category, results: Sequence[WorkerResult], fused: FusedResult, params: FusionParams
) -> dict[str, bool]:
    category = Category(category)
    if category.is_classification:
        label = fused.corroborated[0][0].label if fused.corroborated else None
        return evaluate_classification(results, label, params.beta)
    if category is Category.COUNTING:
        if fused.corroborated:
            value = fused.corroborated[0][0].value
        else:
            counts = [(r.elements[0].value if r.elements else 0.0, r.worker_id) for r in results]
            value, _ = fuse_counts(counts, params.epsilon)
        return evaluate_counting(results, value, params.epsilon)
    return evaluate_spatial(results, fused)
