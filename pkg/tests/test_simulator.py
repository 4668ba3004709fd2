from __future__ import annotations

import itertools

import pytest

from crowdfuse.geometry import iou_box
from crowdfuse.model import Category, FusionParams, TaskStatus
from crowdfuse.serialization import dumps
from crowdfuse.simulator import (
    PopulationShare,
    Scenario,
    WorkerKind,
    WorkerModel,
    build_population,
    default_job,
    generate_scene,
    generate_video,
    run_job,
    scenario_from_dict,
    stream,
    sweep_runs,
    worker_respond,
)

PERFECT = WorkerModel(WorkerKind.PERFECT)
SPAM = WorkerModel(WorkerKind.SPAMMER)
LABELS = tuple(f"c{i}" for i in range(10))


def scenario(category=Category.DETECTION, population=((1.0, PERFECT),), **kw):
    kw.setdefault("class_labels", ("car", "person") if category is not Category.COUNTING else ())
    kw.setdefault("n_tasks", 6)
    kw.setdefault("n_workers", 12)
    return Scenario("s", kw.pop("seed", 1), category, population=[PopulationShare(f, m) for f, m in population], **kw)


def test_scene_is_deterministic():
    s = scenario()
    assert generate_scene(s, 0) == generate_scene(s, 0)
    assert generate_scene(s, 0) != generate_scene(s, 1)


def test_k_boxes_and_spacing():
    s = scenario(objects_per_task=(10, 10))
    for i in range(5):
        boxes = [e.box for e in generate_scene(s, i).truth]
        assert len(boxes) == 10
        assert all(iou_box(a, b) < 0.3 for a, b in itertools.combinations(boxes, 2))


def test_planted_tracks_separated():
    s = scenario(Category.TRACKING, objects_per_task=(3, 3))
    tracks = generate_video(s, 0)
    assert len(tracks) == 3
    assert all(t.first_frame == 0 and t.last_frame == s.video_frames - 1 for t in tracks)


def test_perfect_worker_returns_truth():
    s = scenario(objects_per_task=(3, 3))
    scene = generate_scene(s, 0)
    r = worker_respond(PERFECT, scene.task_id, "w", scene, stream(0, "x"), s)
    assert r.elements == scene.truth and r.duration > 0


def test_zero_jitter_is_perfect():
    s = scenario()
    scene = generate_scene(s, 2)
    jitter = WorkerModel(WorkerKind.JITTERED, sigma=0.0)
    a = worker_respond(PERFECT, scene.task_id, "w", scene, stream(0, "x"), s)
    b = worker_respond(jitter, scene.task_id, "w", scene, stream(0, "x"), s)
    assert a.elements == b.elements


def test_certain_miss_returns_nothing():
    s = scenario()
    scene = generate_scene(s, 0)
    lazy = WorkerModel(WorkerKind.LAZY, p_miss=1.0)
    assert worker_respond(lazy, scene.task_id, "w", scene, stream(0, "x"), s).elements == []


def test_population_split():
    s = scenario(population=((0.7, PERFECT), (0.3, SPAM)), n_workers=10)
    kinds = [m.kind for _, m in build_population(s)]
    assert kinds.count(WorkerKind.PERFECT) == 7 and kinds.count(WorkerKind.SPAMMER) == 3


def test_population_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        scenario(population=((0.5, PERFECT),))


@pytest.mark.parametrize("category", [Category.DETECTION, Category.COUNTING, Category.SEGMENTATION, Category.TRACKING])
def test_perfect_workers_finish_at_n_min(category):
    kw = {"image_size": (120, 90), "box_size": (15, 30)} if category is Category.SEGMENTATION else {}
    s = scenario(category, n_tasks=4, **kw)
    report = run_job(s)
    n_min = FusionParams.defaults(category).n_min
    assert not report.budget_exhausted
    for t in report.tasks:
        assert t.status is TaskStatus.PURGED
        assert len(t.results) == n_min
        assert t.fused.coverage == 1.0


def test_spammers_drive_classification_to_n_max():
    s = scenario(Category.IMAGE_CLASSIFICATION, population=((1.0, SPAM),), class_labels=LABELS, n_tasks=20,
                 n_workers=30, worker_filtering=False)
    report = run_job(s)
    at_max = sum(len(t.results) == 20 for t in report.tasks)
    assert at_max >= 15


def test_report_bytes_are_deterministic():
    s = scenario(population=((0.5, PERFECT), (0.5, WorkerModel(WorkerKind.JITTERED, sigma=4.0))))
    assert dumps(run_job(s).to_dict()) == dumps(run_job(s).to_dict())


def test_trace_properties():
    s = scenario(
        Category.IMAGE_CLASSIFICATION, population=((0.6, PERFECT), (0.4, SPAM)), class_labels=LABELS,
        n_tasks=15, n_workers=15,
    )
    report = run_job(s, default_job(s, batch_size=3))
    m = report.manager
    times = [e.time for e in m.events]
    assert times == sorted(times)
    admitted = {e.worker_id for e in m.events if e.event_type == "hit_accepted"}
    listed = {e.hit_id for e in m.events if e.event_type == "hit_listed"}
    for t in report.tasks:
        workers = [r.worker_id for r in t.results]
        assert len(workers) == len(set(workers))
        for r in t.results:
            assert r.worker_id in admitted and r.hit_id in listed
            assert m.hits[r.hit_id].worker_id == r.worker_id
            assert r.task_id in m.hits[r.hit_id].task_ids


def test_adding_workers_keeps_scenes():
    a, b = scenario(n_workers=5), scenario(n_workers=25)
    assert [generate_scene(a, i) for i in range(3)] == [generate_scene(b, i) for i in range(3)]


def test_scenario_file_and_sweep():
    doc = {
        "name": "x",
        "seed": 3,
        "category": "ImageClassification",
        "n_tasks": 5,
        "class_labels": ["a", "b"],
        "population": [{"fraction": 1.0, "kind": "Perfect"}],
        "job": {"params": {"beta": 0.8}},
        "sweep": {"beta": [0.6, 0.9], "n_min": [1, 3]},
    }
    s, job, sweep = scenario_from_dict(doc)
    assert s.seed == 3 and job.params.beta == 0.8
    runs = sweep_runs(s, job, sweep)
    assert [o for o, _, _ in runs] == [
        {"beta": 0.6, "n_min": 1}, {"beta": 0.6, "n_min": 3}, {"beta": 0.9, "n_min": 1}, {"beta": 0.9, "n_min": 3}
    ]
    assert runs[3][2].params.n_min == 3 and runs[3][2].params.beta == 0.9
