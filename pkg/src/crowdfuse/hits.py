"""HIT lifecycle: generation, delayed task binding, pricing, payment, filtering, purge."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NoEligibleTasks, NotAggregated, NotSubmitted
from .model import (
    HitRecord,
    HitStatus,
    JobSpec,
    PricingState,
    TaskState,
    TaskStatus,
    WorkerProfile,
    WorkerResult,
)
from .quality import Aggregated, evaluate_task, qc_step


@dataclass(frozen=True)
class AdmissionPolicy:
    min_approval_rate: float = 0.5
    exploration_share: float = 0.2

    def __post_init__(self):
        for name in ("min_approval_rate", "exploration_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def compute_deficit(open_tasks: int, unfinished_hits: int, batch_size: int) -> int:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return max(0, math.ceil(open_tasks / batch_size) - unfinished_hits)


def select_tasks(
    worker_id: str,
    job_id: str,
    k: int,
    tasks: Iterable[TaskState],
    rng,
    subgroup: Optional[set] = None,
) -> list[str]:
    """Pick up to ``k`` least-worked-on open tasks this worker has not seen.

    Ties are broken at random under ``rng`` (a seed or numpy Generator).
    When ``subgroup`` is given, its tasks are preferred so that they finish
    early; the rest of the pool is used only if none of them is eligible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(rng)
    eligible = [
        t
        for t in tasks
        if t.job_id == job_id and t.wants_more() and worker_id not in t.served_workers
    ]
    if subgroup:
        preferred = [t for t in eligible if t.task_id in subgroup]
        if preferred:
            eligible = preferred
    if not eligible:
        raise NoEligibleTasks(f"no task of job {job_id} is eligible for worker {worker_id}")
    keys = rng.random(len(eligible))
    order = sorted(range(len(eligible)), key=lambda i: (eligible[i].attempts, keys[i]))
    return [eligible[i].task_id for i in order[:k]]


def update_price(state: PricingState, approved_duration: float) -> PricingState:
    """Fold one approved duration into the job's median-based task price."""
    if not approved_duration > 0:
        raise ValueError("approved_duration must be > 0")
    state.approved_durations.append(float(approved_duration))
    state.current_price = state.target_hourly_rate * statistics.median(state.approved_durations) / 3600.0
    return state


def settle_hit(
    hit: HitRecord,
    per_task_accept: Sequence[bool],
    payment_threshold: float,
    profile: Optional[WorkerProfile] = None,
) -> Optional[HitStatus]:
    """Pay when the accepted fraction exceeds the threshold; None defers (no evidence yet)."""
    if hit.status is not HitStatus.SUBMITTED:
        raise NotSubmitted(f"HIT {hit.hit_id} is {hit.status.value}")
    if not per_task_accept:
        return None
    frac = sum(bool(a) for a in per_task_accept) / len(per_task_accept)
    outcome = HitStatus.PAID if frac > payment_threshold else HitStatus.REJECTED
    hit.transition(outcome)
    if profile is not None:
        for a in per_task_accept:
            profile.record(hit.job_id, bool(a))
    return outcome


def admit_worker(
    profile: Optional[WorkerProfile],
    job_id: str,
    policy: Optional[AdmissionPolicy],
    rng,
) -> bool:
    """Decide whether a worker may take the HIT being offered.

    Workers below the approval floor are never admitted. Otherwise one draw
    per offer picks the bucket: the exploration share is reserved for
    workers without history on this job, the rest for proven workers.
    """
    if policy is None:
        return True
    rate = profile.approval_rate(job_id) if profile is not None else None
    if rate is not None and rate < policy.min_approval_rate:
        return False
    explore = np.random.default_rng(rng).random() < policy.exploration_share
    return (rate is None) == explore


def purge_task(task: TaskState) -> TaskState:
    if task.status is not TaskStatus.AGGREGATED:
        raise NotAggregated(f"task {task.task_id} is {task.status.value}")
    task.transition(TaskStatus.PURGED)
    return task


def subgroup_size(n_min: int) -> int:
    return max(10, 2 * n_min)


# --------------------------------------------------------------------------
# single-writer job tables


@dataclass
class Event:
    time: float
    event_type: str
    job_id: str
    task_id: Optional[str] = None
    hit_id: Optional[str] = None
    worker_id: Optional[str] = None
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "event_type": self.event_type,
            "job_id": self.job_id,
            "task_id": self.task_id,
            "hit_id": self.hit_id,
            "worker_id": self.worker_id,
            "payload": self.payload,
        }


class HitManager:
    """Task, HIT, worker and pricing tables of one job, mutated by one caller.

    The caller feeds events in timestamp order: ``schedule`` at each
    scheduling round, ``offer`` when a worker asks for a HIT and ``submit``
    when a worker returns one.
    """

    def __init__(
        self,
        job: JobSpec,
        task_ids: Sequence[str],
        *,
        policy: Optional[AdmissionPolicy] = AdmissionPolicy(),
        admission_rng=None,
        selection_rng=None,
        media: Optional[Sequence[str]] = None,
    ):
        self.job = job
        self.params = job.params
        self.policy = policy
        self.admission_rng = np.random.default_rng(admission_rng)
        self.selection_rng = np.random.default_rng(selection_rng)
        media = list(media) if media is not None else [""] * len(task_ids)
        self.tasks: dict[str, TaskState] = {
            tid: TaskState(tid, job.job_id, m, target=self.params.n_min)
            for tid, m in zip(task_ids, media)
        }
        self.hits: dict[str, HitRecord] = {}
        # indexes over self.hits, insertion-ordered
        self._unbound: dict[str, HitRecord] = {}
        self._bound: dict[str, HitRecord] = {}
        self._awaiting: dict[str, HitRecord] = {}
        self.profiles: dict[str, WorkerProfile] = {}
        self.pricing = PricingState.for_job(job)
        self.verdicts: dict[str, dict[str, bool]] = {}
        self.qc_history: dict[str, list] = {tid: [] for tid in task_ids}
        self.dropped: dict[str, set] = {}
        self.events: list[Event] = []
        self.price_trace: list[tuple[int, float, float]] = []
        self.results_solicited = 0
        self._hit_seq = 0
        self._subgroup = set(list(task_ids)[: subgroup_size(self.params.n_min)])

    # -- bookkeeping -------------------------------------------------------

    def _log(self, time, kind, **kw) -> None:
        self.events.append(Event(time, kind, self.job.job_id, **kw))

    def profile(self, worker_id: str) -> WorkerProfile:
        if worker_id not in self.profiles:
            self.profiles[worker_id] = WorkerProfile(worker_id)
        return self.profiles[worker_id]

    def open_tasks(self) -> list[TaskState]:
        return [t for t in self.tasks.values() if t.status is TaskStatus.OPEN]

    def unfinished_hits(self) -> list[HitRecord]:
        return [*self._unbound.values(), *self._bound.values()]

    def listed_hits(self) -> list[HitRecord]:
        return list(self._unbound.values())

    @property
    def done(self) -> bool:
        return all(t.status is TaskStatus.PURGED for t in self.tasks.values())

    def is_blocked(self, worker_id: str) -> bool:
        if self.policy is None or worker_id not in self.profiles:
            return False
        rate = self.profiles[worker_id].approval_rate(self.job.job_id)
        return rate is not None and rate < self.policy.min_approval_rate

    # -- HIT generator -----------------------------------------------------

    def schedule(self, now: float) -> list[HitRecord]:
        unfinished = len(self._unbound) + len(self._bound)
        n = compute_deficit(len(self.open_tasks()), unfinished, self.job.batch_size)
        created = []
        for _ in range(n):
            hit = HitRecord(f"{self.job.job_id}-h{self._hit_seq:06d}", self.job.job_id, self.pricing.hit_price)
            self._hit_seq += 1
            self.hits[hit.hit_id] = hit
            self._unbound[hit.hit_id] = hit
            created.append(hit)
            self._log(now, "hit_listed", hit_id=hit.hit_id, payload={"price": hit.price})
        return created

    # -- delayed binding ---------------------------------------------------

    def offer(self, worker_id: str, now: float) -> Optional[HitRecord]:
        """Bind a listed HIT and its tasks to ``worker_id``, or return None."""
        if not self._unbound:
            return None
        profile = self.profiles.get(worker_id)
        if not admit_worker(profile, self.job.job_id, self.policy, self.admission_rng):
            return None
        subgroup = self._subgroup if any(
            self.tasks[t].status is TaskStatus.OPEN for t in self._subgroup
        ) else None
        try:
            chosen = select_tasks(
                worker_id, self.job.job_id, self.job.batch_size, self.tasks.values(),
                self.selection_rng, subgroup,
            )
        except NoEligibleTasks:
            return None
        hit = self._unbound.pop(next(iter(self._unbound)))
        self._bound[hit.hit_id] = hit
        hit.worker_id = worker_id
        hit.task_ids = chosen
        hit.accepted_at = now
        for tid in chosen:
            task = self.tasks[tid]
            task.in_flight += 1
            task.served_workers.add(worker_id)
        self.results_solicited += len(chosen)
        self._log(now, "hit_accepted", hit_id=hit.hit_id, worker_id=worker_id, payload={"tasks": chosen})
        return hit

    # -- results -----------------------------------------------------------

    def submit(self, hit_id: str, results: Sequence[WorkerResult], now: float) -> None:
        hit = self.hits[hit_id]
        hit.transition(HitStatus.SUBMITTED)
        del self._bound[hit_id]
        self._awaiting[hit_id] = hit
        self._log(now, "hit_submitted", hit_id=hit_id, worker_id=hit.worker_id)
        aggregated = []
        for r in results:
            task = self.tasks[r.task_id]
            task.in_flight -= 1
            if task.status is not TaskStatus.OPEN:
                self.dropped.setdefault(hit_id, set()).add(r.task_id)
                self._log(now, "result_dropped", task_id=r.task_id, hit_id=hit_id, worker_id=r.worker_id)
                continue
            r.hit_id = hit_id
            task.add_result(r)
            self._log(
                now, "result_recorded", task_id=r.task_id, hit_id=hit_id, worker_id=r.worker_id,
                payload={"duration": r.duration, "n_results": len(task.results)},
            )
            if len(task.results) >= task.target and task.in_flight == 0:
                if self._run_qc(task, now):
                    aggregated.append(task)
        self._settle_ready(now)
        for task in aggregated:
            purge_task(task)
            self._log(now, "task_purged", task_id=task.task_id)
        if aggregated:
            self._dispose(now)

    def _run_qc(self, task: TaskState, now: float) -> bool:
        decision = qc_step(task, self.params, self.job.category)
        n = len(task.results)
        if isinstance(decision, Aggregated):
            self.qc_history[task.task_id].append((n, "Aggregated"))
            task.fused = decision.fused
            task.transition(TaskStatus.AGGREGATED)
            self.verdicts[task.task_id] = evaluate_task(
                self.job.category, task.results, decision.fused, self.params
            )
            self._log(
                now, "task_aggregated", task_id=task.task_id,
                payload={"n_results": n, "coverage": decision.fused.coverage, "converged": decision.converged},
            )
            return True
        self.qc_history[task.task_id].append((n, "NeedMore"))
        task.target = n + decision.additional
        return False

    # -- payments ----------------------------------------------------------

    def _settle_ready(self, now: float) -> None:
        for hit in list(self._awaiting.values()):
            dropped = self.dropped.get(hit.hit_id, set())
            live = [t for t in hit.task_ids if t not in dropped]
            if any(t not in self.verdicts for t in live):
                continue
            accepts = [self.verdicts[t][hit.worker_id] for t in live]
            del self._awaiting[hit.hit_id]
            if not accepts:
                # every task closed before this HIT came back; nothing to judge
                hit.transition(HitStatus.PAID)
                self._log(now, "hit_paid", hit_id=hit.hit_id, worker_id=hit.worker_id, payload={"evidence": 0})
                continue
            outcome = settle_hit(hit, accepts, self.job.payment_threshold, self.profile(hit.worker_id))
            self._log(
                now, "hit_paid" if outcome is HitStatus.PAID else "hit_rejected",
                hit_id=hit.hit_id, worker_id=hit.worker_id,
                payload={"accepted": sum(accepts), "evidence": len(accepts)},
            )
            if outcome is HitStatus.PAID:
                for t in live:
                    for r in self.tasks[t].results:
                        if r.hit_id == hit.hit_id:
                            update_price(self.pricing, r.duration)
                            self.price_trace.append(
                                (len(self.pricing.approved_durations), now, self.pricing.current_price)
                            )

    # -- disposer ----------------------------------------------------------

    def _dispose(self, now: float) -> None:
        keep = max(0, math.ceil(len(self.open_tasks()) / self.job.batch_size) - len(self._bound))
        for hit in list(self._unbound.values())[keep:]:
            hit.transition(HitStatus.DISPOSED)
            del self._unbound[hit.hit_id]
            self._log(now, "hit_disposed", hit_id=hit.hit_id)
