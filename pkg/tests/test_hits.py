from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdfuse.errors import NoEligibleTasks, NotAggregated
from crowdfuse.hits import (
    AdmissionPolicy,
    HitManager,
    admit_worker,
    compute_deficit,
    purge_task,
    select_tasks,
    settle_hit,
    subgroup_size,
    update_price,
)
from crowdfuse.model import (
    Category,
    ClassLabel,
    FusionParams,
    HitRecord,
    HitStatus,
    JobSpec,
    PricingState,
    TaskState,
    TaskStatus,
    WorkerProfile,
    WorkerResult,
)


def test_compute_deficit():
    assert compute_deficit(100, 4, 10) == 6
    assert compute_deficit(0, 3, 10) == 0
    assert compute_deficit(5, 0, 10) == 1
    assert compute_deficit(10, 20, 1) == 0


def tasks_with_counts(counts, served=None):
    out = []
    for i, k in enumerate(counts):
        t = TaskState(f"t{i}", "j", target=10)
        t.results = [None] * k
        out.append(t)
    if served:
        for t in out:
            if t.task_id in served:
                t.served_workers.add("w")
    return out


def test_select_least_worked_on():
    assert sorted(select_tasks("w", "j", 2, tasks_with_counts([0, 0, 2]), 0)) == ["t0", "t1"]


def test_select_excludes_served():
    assert select_tasks("w", "j", 3, tasks_with_counts([0, 0, 0], {"t1"}), 0).count("t1") == 0


def test_select_none_eligible():
    with pytest.raises(NoEligibleTasks):
        select_tasks("w", "j", 1, tasks_with_counts([0, 1], {"t0", "t1"}), 0)


def test_select_prefers_subgroup_then_falls_back():
    tasks = tasks_with_counts([5, 0, 0])
    assert select_tasks("w", "j", 1, tasks, 0, subgroup={"t0"}) == ["t0"]
    tasks[0].served_workers.add("w")
    assert select_tasks("w", "j", 1, tasks, 0, subgroup={"t0"}) in (["t1"], ["t2"])


def test_select_ties_are_seeded():
    tasks = tasks_with_counts([0] * 20)
    assert select_tasks("w", "j", 5, tasks, 3) == select_tasks("w", "j", 5, tasks, 3)


def test_update_price():
    state = PricingState("j", 8.0, 0.05)
    assert state.current_price == 0.05
    update_price(state, 45.0)
    assert state.current_price == pytest.approx(0.10)
    doubled = PricingState("j", 8.0, 0.05)
    for d in (20.0, 40.0, 90.0):
        update_price(state, d)
        update_price(doubled, 2 * d)
    update_price(doubled, 90.0)
    assert doubled.current_price == pytest.approx(2 * state.current_price)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1, 3600), min_size=1, max_size=30), st.floats(0.5, 50))
def test_price_is_median_formula(durations, rate):
    state = PricingState("j", rate, 0.05)
    for d in durations:
        update_price(state, d)
        assert state.current_price > 0
    assert state.current_price == pytest.approx(rate * float(np.median(durations)) / 3600)


def submitted(n=10):
    hit = HitRecord("h", "j", 0.5, [f"t{i}" for i in range(n)], "w")
    hit.transition(HitStatus.SUBMITTED)
    return hit


def test_settle_hit():
    profile = WorkerProfile("w")
    assert settle_hit(submitted(), [True] * 6 + [False] * 4, 0.5, profile) is HitStatus.PAID
    assert profile.approval_rate("j") == 0.6
    assert settle_hit(submitted(), [True] * 4 + [False] * 6, 0.5) is HitStatus.REJECTED
    assert settle_hit(submitted(), [True] * 5 + [False] * 5, 0.5) is HitStatus.REJECTED
    hit = submitted()
    assert settle_hit(hit, [], 0.5) is None and hit.status is HitStatus.SUBMITTED


class FixedDraw:
    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


def rated(rate):
    p = WorkerProfile("w")
    k = round(rate * 10)
    for i in range(10):
        p.record("j", i < k)
    return p


def test_admit_worker(monkeypatch):
    policy = AdmissionPolicy()
    monkeypatch.setattr(np.random, "default_rng", lambda r=None: r)
    assert not admit_worker(rated(0.4), "j", policy, FixedDraw(0.9))
    assert admit_worker(rated(0.9), "j", policy, FixedDraw(0.5))
    assert not admit_worker(rated(0.9), "j", policy, FixedDraw(0.1))
    assert admit_worker(None, "j", policy, FixedDraw(0.1))
    assert not admit_worker(None, "j", policy, FixedDraw(0.5))
    assert admit_worker(rated(0.4), "j", None, FixedDraw(0.5))


def test_admission_share_is_about_eighty_twenty():
    rng = np.random.default_rng(0)
    policy = AdmissionPolicy()
    proven = sum(admit_worker(rated(0.9), "j", policy, rng) for _ in range(4000)) / 4000
    assert proven == pytest.approx(0.8, abs=0.03)


def test_blocked_worker_may_work_other_jobs():
    p = rated(0.2)
    assert not admit_worker(p, "j", AdmissionPolicy(exploration_share=1.0), 0)
    assert admit_worker(p, "other", AdmissionPolicy(exploration_share=1.0), 0)


def test_purge_task():
    t = TaskState("t", "j")
    with pytest.raises(NotAggregated):
        purge_task(t)
    t.transition(TaskStatus.AGGREGATED)
    assert purge_task(t).status is TaskStatus.PURGED
    assert compute_deficit(0, 0, 1) == 0


def test_subgroup_size():
    assert subgroup_size(3) == 10 and subgroup_size(10) == 20


# -- manager traces ---------------------------------------------------------


def classification_job(n_min=3, batch=2):
    params = FusionParams.defaults(Category.IMAGE_CLASSIFICATION).with_overrides(n_min=n_min, n_max=6)
    return JobSpec("j", Category.IMAGE_CLASSIFICATION, ("a", "b", "c"), params, batch_size=batch)


def drive(manager, behaviours, rng, rounds=400):
    """Run a toy loop: each round every worker may take one HIT and returns it immediately."""
    served = {}
    blocked_offers = []
    clock = 0.0
    for _ in range(rounds):
        if manager.done:
            break
        manager.schedule(clock)
        for worker, answer in behaviours.items():
            clock += 1.0
            was_blocked = manager.is_blocked(worker)
            hit = manager.offer(worker, clock)
            if hit is None:
                continue
            blocked_offers.append(was_blocked)
            for tid in hit.task_ids:
                assert (worker, tid) not in served
                served[(worker, tid)] = hit.hit_id
            results = [WorkerResult(t, worker, [ClassLabel(answer(rng))], 5.0 + rng.random()) for t in hit.task_ids]
            manager.submit(hit.hit_id, results, clock)
            assert manager.pricing.current_price > 0
    return served, blocked_offers


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4))
def test_manager_trace_invariants(seed, batch, n_min):
    rng = np.random.default_rng(seed)
    behaviours = {f"good{i}": (lambda r: "a") for i in range(6)}
    behaviours.update({f"spam{i}": (lambda r: str(r.choice(["a", "b", "c"]))) for i in range(4)})
    job = classification_job(n_min=n_min, batch=batch)
    manager = HitManager(job, [f"t{i}" for i in range(12)], admission_rng=seed, selection_rng=seed + 1)
    served, blocked_offers = drive(manager, behaviours, rng)
    assert manager.done
    assert not any(blocked_offers)
    for task in manager.tasks.values():
        assert task.status is TaskStatus.PURGED
        assert len(task.results) <= job.params.n_max
        history = manager.qc_history[task.task_id]
        assert history[0][0] >= n_min
        assert all(b[0] == a[0] + 1 for a, b in zip(history, history[1:]))
        assert history[-1][1] == "Aggregated"
    for hit in manager.hits.values():
        assert hit.status in (HitStatus.PAID, HitStatus.REJECTED, HitStatus.DISPOSED)
    assert manager.unfinished_hits() == []


def test_deficit_closed_each_round():
    job = classification_job(batch=3)
    manager = HitManager(job, [f"t{i}" for i in range(10)])
    manager.schedule(0.0)
    assert len(manager.unfinished_hits()) == 4
    manager.schedule(1.0)
    assert len(manager.unfinished_hits()) == 4


def test_one_task_one_worker_at_a_time():
    params = FusionParams.defaults(Category.IMAGE_CLASSIFICATION).with_overrides(n_min=2, n_max=4)
    job = JobSpec("j", Category.IMAGE_CLASSIFICATION, ("a", "b"), params)
    manager = HitManager(job, ["t0"], policy=None)
    manager.schedule(0.0)
    h1 = manager.offer("w1", 0.0)
    assert manager.schedule(0.0) == [] and manager.offer("w2", 0.0) is None
    manager.submit(h1.hit_id, [WorkerResult("t0", "w1", [ClassLabel("a")], 3.0)], 1.0)
    assert manager.hits[h1.hit_id].status is HitStatus.SUBMITTED
    manager.schedule(1.0)
    assert manager.offer("w1", 1.0) is None
    h2 = manager.offer("w2", 1.0)
    manager.submit(h2.hit_id, [WorkerResult("t0", "w2", [ClassLabel("a")], 5.0)], 2.0)
    assert manager.tasks["t0"].status is TaskStatus.PURGED
    assert {h.status for h in manager.hits.values()} == {HitStatus.PAID}
    assert manager.pricing.current_price == pytest.approx(8.0 * 4.0 / 3600)
