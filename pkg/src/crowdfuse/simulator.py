"""Deterministic discrete-event simulation of a job against planted groundtruth.

Worker populations are drawn from a handful of behaviour models; the run
goes through the real HIT manager, quality loop and evaluators, so a report
shows what the system would have produced given those workers.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import zlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import CategoryMismatch, SchemaError
from .geometry import iou_3d, iou_box, iou_pixels
from .hits import AdmissionPolicy, HitManager
from .metrics import average_precision_tasks, match_pr, merge_reports
from .model import (
    BoundingBox,
    Category,
    ClassLabel,
    Count,
    FusionParams,
    JobSpec,
    LabeledBox,
    Segment,
    Track,
    TaskStatus,
    WorkerResult,
    validate_job,
)
from .serialization import (
    FORMAT_VERSION,
    decode_params,
    encode_element,
    encode_fused,
    encode_job,
    format_price,
    parse_price,
    validate,
)
from .stitching import Chunk, chunk_frames_for, chunk_video, stitch_chunks

TRACK_SEPARATION = 0.1  # max 3D-IoU between planted tracks of one video


class WorkerKind(str, enum.Enum):
    PERFECT = "Perfect"
    JITTERED = "Jittered"
    LAZY = "Lazy"
    SPAMMER = "Spammer"
    OVERCOUNTER = "Overcounter"


@dataclass(frozen=True)
class WorkerModel:
    """How a simulated worker answers.

    ``sigma`` is corner noise in pixels (count noise for counting jobs),
    ``flip_prob`` the chance of reporting a wrong class label, ``p_miss``
    the chance of skipping each object and ``bias`` the relative overcount.
    Durations are log-normal with log-seconds mean ``speed_mu`` and spread
    ``speed_sigma``.
    """

    kind: WorkerKind = WorkerKind.PERFECT
    sigma: float = 0.0
    flip_prob: float = 0.0
    p_miss: float = 0.0
    bias: float = 0.0
    speed_mu: float = math.log(30.0)
    speed_sigma: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", WorkerKind(self.kind))
        for name in ("flip_prob", "p_miss"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.sigma < 0 or self.speed_sigma < 0:
            raise ValueError("sigma values must be >= 0")
        if self.bias <= -1:
            raise ValueError("bias must exceed -1")


@dataclass(frozen=True)
class PopulationShare:
    fraction: float
    model: WorkerModel


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    category: Category
    n_tasks: int
    population: tuple
    class_labels: tuple = ()
    n_workers: int = 30
    objects_per_task: tuple = (1, 5)
    count_range: tuple = (5, 50)
    crowding: bool = False
    image_size: tuple = (640, 480)
    box_size: tuple = (30, 120)
    frame_rate: float = 10.0
    chunk_seconds: float = 3.0
    overlap_seconds: float = 0.5
    video_seconds: float = 5.5
    arrival_prob: float = 0.2
    tick_seconds: float = 10.0
    max_ticks: int = 100_000
    worker_filtering: bool = True

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        object.__setattr__(self, "population", tuple(self.population))
        total = sum(s.fraction for s in self.population)
        if not self.population or abs(total - 1.0) > 1e-9:
            raise ValueError(f"population fractions must sum to 1, got {total}")
        if any(s.fraction < 0 for s in self.population):
            raise ValueError("population fractions must be non-negative")
        if self.n_tasks < 1 or self.n_workers < 1:
            raise ValueError("need at least one task and one worker")
        lo, hi = self.objects_per_task
        if not 0 <= lo <= hi:
            raise ValueError("objects_per_task must be an increasing non-negative range")
        if not 0 < self.arrival_prob <= 1:
            raise ValueError("arrival_prob must lie in (0, 1]")
        needs_labels = self.category.is_classification or self.category.is_spatial
        if needs_labels and not self.class_labels:
            raise ValueError(f"{self.category.value} scenarios need class labels")

    @property
    def chunk_geometry(self) -> tuple[int, int]:
        return chunk_frames_for(self.frame_rate, self.chunk_seconds, self.overlap_seconds)

    @property
    def video_frames(self) -> int:
        return round(self.video_seconds * self.frame_rate)


# --------------------------------------------------------------------------
# random streams


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator per named stream, so adding consumers never shifts others."""
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# --------------------------------------------------------------------------
# scenes


@dataclass
class Scene:
    task_id: str
    truth: list
    video: Optional[int] = None
    start: Optional[int] = None
    stop: Optional[int] = None
    # ellipse parameters (cx, cy, rx, ry) behind each planted segment
    shapes: list = field(default_factory=list)


def task_layout(scenario: Scenario) -> list[tuple[str, Optional[int], Optional[int], Optional[int]]]:
    if scenario.category is not Category.TRACKING:
        return [(f"t{i:04d}", None, None, None) for i in range(scenario.n_tasks)]
    length, overlap = scenario.chunk_geometry
    out = []
    for v in range(scenario.n_tasks):
        for c, (start, stop) in enumerate(chunk_video(scenario.video_frames, length, overlap)):
            out.append((f"v{v:03d}c{c:02d}", v, start, stop))
    return out


def _random_box(rng, scenario: Scenario) -> BoundingBox:
    width, height = scenario.image_size
    lo, hi = scenario.box_size
    w, h = rng.uniform(lo, hi), rng.uniform(lo, hi)
    x, y = rng.uniform(0, width - w), rng.uniform(0, height - h)
    return BoundingBox(float(round(x)), float(round(y)), float(round(x + w)), float(round(y + h)))


def _place_boxes(rng, k: int, scenario: Scenario) -> list[BoundingBox]:
    boxes: list[BoundingBox] = []
    for _ in range(2000 * max(k, 1)):
        if len(boxes) == k:
            break
        b = _random_box(rng, scenario)
        if scenario.crowding or all(iou_box(b, o) < 0.3 for o in boxes):
            boxes.append(b)
    if len(boxes) < k:
        raise ValueError(f"could not place {k} separated boxes in {scenario.image_size}")
    return boxes


def rasterize_ellipse(cx: float, cy: float, rx: float, ry: float, width: int, height: int) -> frozenset:
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    inside = ((xs[None, :] - cx) / rx) ** 2 + ((ys[:, None] - cy) / ry) ** 2 <= 1.0
    yy, xx = np.nonzero(inside)
    return frozenset(zip(xx.tolist(), yy.tolist()))


def _random_ellipse(rng, scenario: Scenario) -> tuple:
    width, height = scenario.image_size
    lo, hi = scenario.box_size
    rx, ry = rng.uniform(lo, hi) / 2, rng.uniform(lo, hi) / 2
    return (rng.uniform(rx, width - rx), rng.uniform(ry, height - ry), rx, ry)


def _linear_track(rng, scenario: Scenario, label: str, start: int, stop: int) -> Track:
    width, height = scenario.image_size
    box = _random_box(rng, scenario)
    w, h = box.x_br - box.x_tl, box.y_br - box.y_tl
    vx, vy = rng.uniform(-2.0, 2.0, size=2)
    frames = {}
    for f in range(start, stop):
        x = min(max(box.x_tl + vx * (f - start), 0.0), width - w)
        y = min(max(box.y_tl + vy * (f - start), 0.0), height - h)
        frames[f] = BoundingBox(x, y, x + w, y + h)
    return Track(label, frames)


def generate_video(scenario: Scenario, video: int) -> list[Track]:
    """Planted tracks of one video, moving linearly over every frame."""
    rng = stream(scenario.seed, "scene", "video", video)
    lo, hi = scenario.objects_per_task
    k = int(rng.integers(lo, hi + 1))
    tracks: list[Track] = []
    for _ in range(2000 * max(k, 1)):
        if len(tracks) == k:
            break
        label = scenario.class_labels[int(rng.integers(len(scenario.class_labels)))]
        t = _linear_track(rng, scenario, label, 0, scenario.video_frames)
        if scenario.crowding or all(iou_3d(t, o) < TRACK_SEPARATION for o in tracks):
            tracks.append(t)
    if len(tracks) < k:
        raise ValueError("could not place separated tracks")
    return tracks


def generate_scene(scenario: Scenario, task_index: int) -> Scene:
    """Planted groundtruth of one task; a pure function of the scenario and index."""
    task_id, video, start, stop = task_layout(scenario)[task_index]
    rng = stream(scenario.seed, "scene", task_index)
    cat = scenario.category
    labels = scenario.class_labels
    if cat.is_classification:
        return Scene(task_id, [ClassLabel(labels[int(rng.integers(len(labels)))])])
    if cat is Category.COUNTING:
        lo, hi = scenario.count_range
        return Scene(task_id, [Count(float(rng.integers(lo, hi + 1)))])
    if cat is Category.TRACKING:
        tracks = [t.restricted(start, stop) for t in generate_video(scenario, video)]
        return Scene(task_id, [t for t in tracks if t.frames], video, start, stop)
    lo, hi = scenario.objects_per_task
    k = int(rng.integers(lo, hi + 1))
    if cat is Category.DETECTION:
        boxes = _place_boxes(rng, k, scenario)
        return Scene(task_id, [LabeledBox(b, labels[int(rng.integers(len(labels)))]) for b in boxes])
    width, height = scenario.image_size
    segs, shapes = [], []
    for _ in range(2000 * max(k, 1)):
        if len(segs) == k:
            break
        shape = _random_ellipse(rng, scenario)
        cells = rasterize_ellipse(*shape, width, height)
        if not cells:
            continue
        seg = Segment(cells, labels[int(rng.integers(len(labels)))], width, height)
        if scenario.crowding or all(iou_pixels(seg, o) < 0.3 for o in segs):
            segs.append(seg)
            shapes.append(shape)
    if len(segs) < k:
        raise ValueError("could not place separated segments")
    return Scene(task_id, segs, shapes=shapes)


# --------------------------------------------------------------------------
# worker behaviour


def _flip(rng, label: str, labels: Sequence[str], p: float) -> str:
    if p > 0 and len(labels) > 1 and rng.random() < p:
        others = [x for x in labels if x != label]
        return others[int(rng.integers(len(others)))]
    return label


def _jitter_box(rng, box: BoundingBox, sigma: float, scenario: Scenario) -> BoundingBox:
    if sigma == 0:
        return box
    width, height = scenario.image_size
    x1, y1, x2, y2 = np.array(box.as_tuple()) + rng.normal(0.0, sigma, size=4)
    x1, x2 = (float(min(max(v, 0.0), width)) for v in (x1, x2))
    y1, y2 = (float(min(max(v, 0.0), height)) for v in (y1, y2))
    return BoundingBox.from_corners(x1, y1, x2, y2)


def _respond_elements(model: WorkerModel, scene: Scene, rng, scenario: Scenario) -> list:
    cat = scenario.category
    kind = model.kind
    labels = scenario.class_labels
    width, height = scenario.image_size

    if cat.is_classification:
        truth = scene.truth[0].label
        if kind is WorkerKind.SPAMMER:
            return [ClassLabel(labels[int(rng.integers(len(labels)))])]
        if kind is WorkerKind.JITTERED:
            return [ClassLabel(_flip(rng, truth, labels, model.flip_prob))]
        if kind is WorkerKind.LAZY and rng.random() < model.p_miss:
            return [ClassLabel(labels[0])]
        return [ClassLabel(truth)]

    if cat is Category.COUNTING:
        c = scene.truth[0].value
        if kind is WorkerKind.SPAMMER:
            return [Count(float(rng.integers(0, 2 * scenario.count_range[1] + 1)))]
        if kind is WorkerKind.JITTERED:
            return [Count(float(max(0, round(c + rng.normal(0.0, model.sigma)))))]
        if kind is WorkerKind.LAZY:
            return [Count(float(rng.binomial(int(c), 1.0 - model.p_miss)))]
        if kind is WorkerKind.OVERCOUNTER:
            return [Count(float(round(c * (1.0 + model.bias))))]
        return [Count(c)]

    if kind is WorkerKind.SPAMMER:
        k = len(scene.truth)
        n = int(rng.integers(max(1, k // 2), k + k // 2 + 2))
        out = []
        for _ in range(n):
            label = labels[int(rng.integers(len(labels)))]
            if cat is Category.DETECTION:
                out.append(LabeledBox(_random_box(rng, scenario), label))
            elif cat is Category.SEGMENTATION:
                cells = rasterize_ellipse(*_random_ellipse(rng, scenario), width, height)
                if cells:
                    out.append(Segment(cells, label, width, height))
            else:
                out.append(_linear_track(rng, scenario, label, scene.start, scene.stop))
        return out

    if kind is WorkerKind.PERFECT or kind is WorkerKind.OVERCOUNTER:
        return list(scene.truth)

    keep = [rng.random() >= model.p_miss for _ in scene.truth] if kind is WorkerKind.LAZY else [True] * len(
        scene.truth
    )
    out = []
    for idx, (element, kept) in enumerate(zip(scene.truth, keep)):
        if not kept:
            continue
        label = _flip(rng, element.label, labels, model.flip_prob)
        if cat is Category.DETECTION:
            out.append(LabeledBox(_jitter_box(rng, element.box, model.sigma, scenario), label))
        elif cat is Category.SEGMENTATION:
            if model.sigma == 0:
                out.append(replace(element, label=label))
                continue
            cx, cy, rx, ry = scene.shapes[idx]
            dx, dy, drx, dry = rng.normal(0.0, model.sigma, size=4)
            cells = rasterize_ellipse(cx + dx, cy + dy, max(1.0, rx + drx), max(1.0, ry + dry), width, height)
            if cells:
                out.append(Segment(cells, label, width, height))
        else:
            frames = {f: _jitter_box(rng, b, model.sigma, scenario) for f, b in element.frames.items()}
            out.append(Track(label, frames))
    return out


def worker_respond(
    model: WorkerModel, task_id: str, worker_id: str, scene: Scene, rng, scenario: Scenario
) -> WorkerResult:
    elements = _respond_elements(model, scene, rng, scenario)
    duration = float(rng.lognormal(model.speed_mu, model.speed_sigma))
    return WorkerResult(task_id, worker_id, elements, max(duration, 1e-3))


def build_population(scenario: Scenario) -> list[tuple[str, WorkerModel]]:
    """Split ``n_workers`` across the shares (largest remainder), then shuffle."""
    n = scenario.n_workers
    raw = [s.fraction * n for s in scenario.population]
    counts = [math.floor(r) for r in raw]
    by_remainder = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_remainder[: n - sum(counts)]:
        counts[i] += 1
    models = [s.model for s, c in zip(scenario.population, counts) for _ in range(c)]
    order = stream(scenario.seed, "population").permutation(n)
    return [(f"w{i:03d}", models[j]) for i, j in enumerate(order.tolist())]


# --------------------------------------------------------------------------
# the run


@dataclass
class SimulationReport:
    scenario: Scenario
    job: JobSpec
    scenes: list
    manager: HitManager
    workers: list
    budget_exhausted: bool
    ticks: int
    sim_time: float
    global_tracks: dict = field(default_factory=dict)

    @property
    def tasks(self) -> list:
        return list(self.manager.tasks.values())

    @property
    def price_trace(self) -> list[float]:
        return [p for _, _, p in self.manager.price_trace]

    def approval_rate(self) -> Optional[float]:
        jid = self.job.job_id
        ok = sum(p.approved.get(jid, 0) for p in self.manager.profiles.values())
        bad = sum(p.rejected.get(jid, 0) for p in self.manager.profiles.values())
        return ok / (ok + bad) if ok + bad else None

    def fused_elements(self, task_id: str) -> list:
        task = self.manager.tasks[task_id]
        return task.fused.elements if task.fused is not None else []

    def metrics(self) -> dict:
        tasks = self.tasks
        cat = self.job.category
        aggregated = [t for t in tasks if t.status is not TaskStatus.OPEN]
        flags = {
            e.task_id: bool(e.payload.get("converged"))
            for e in self.manager.events
            if e.event_type == "task_aggregated"
        }
        converged = sum(flags.get(t.task_id, False) for t in aggregated)
        out = {
            "tasks": len(tasks),
            "aggregated": len(aggregated),
            "converged": converged,
            "results_solicited": self.manager.results_solicited,
            "results_recorded": sum(len(t.results) for t in tasks),
            "approval_rate": self.approval_rate(),
        }
        truth = {s.task_id: s.truth for s in self.scenes}
        if cat.is_classification:
            correct = sum(
                1 for t in aggregated if self.fused_elements(t.task_id)[:1] == truth[t.task_id][:1]
            )
            out["accuracy"] = correct / len(aggregated) if aggregated else None
            # precision over emitted labels; tasks closed without a super-majority emit none
            merged = merge_reports([match_pr(self.fused_elements(t.task_id), truth[t.task_id]) for t in aggregated])
            out["match_precision"] = merged.match_precision
            out["match_recall"] = merged.match_recall
            out["unlabeled"] = sum(1 for t in aggregated if not self.fused_elements(t.task_id))
        elif cat is Category.COUNTING:
            errs, within = [], 0
            for t in aggregated:
                fused = self.fused_elements(t.task_id)
                ref = truth[t.task_id][0].value
                if fused:
                    err = abs(fused[0].value - ref)
                    errs.append(err)
                    within += err <= self.job.params.epsilon * ref
            out["mean_abs_error"] = float(np.mean(errs)) if errs else None
            out["within_epsilon"] = within / len(aggregated) if aggregated else None
        elif cat is Category.TRACKING:
            reports, exact = [], 0
            for v, tracks in sorted(self.global_tracks.items()):
                planted = generate_video(self.scenario, v)
                reports.append(match_pr(tracks, planted, 0.5))
                exact += len(tracks) == len(planted)
            merged = merge_reports(reports)
            out["match_precision"] = merged.match_precision
            out["match_recall"] = merged.match_recall
            out["videos"] = len(self.global_tracks)
            out["stitched_count_exact"] = exact / len(self.global_tracks) if self.global_tracks else None
        else:
            pairs = [(self.fused_elements(t.task_id), truth[t.task_id]) for t in aggregated]
            merged = merge_reports([match_pr(f, r, 0.5) for f, r in pairs])
            out["match_precision"] = merged.match_precision
            out["match_recall"] = merged.match_recall
            out["average_precision"] = average_precision_tasks(pairs) if pairs else None
        return out

    def to_dict(self) -> dict:
        m = self.manager
        truth = {s.task_id: s.truth for s in self.scenes}
        tasks = []
        for t in m.tasks.values():
            verdicts = m.verdicts.get(t.task_id, {})
            row = {
                "task_id": t.task_id,
                "status": t.status.value,
                "n_results": len(t.results),
                "qc_history": [[n, d] for n, d in m.qc_history[t.task_id]],
                "truth": [encode_element(e) for e in truth[t.task_id]],
                "results": [
                    {
                        "worker_id": r.worker_id,
                        "hit_id": r.hit_id,
                        "submit_time": r.submit_time,
                        "duration": r.duration,
                        "approved": verdicts.get(r.worker_id),
                    }
                    for r in t.results
                ],
            }
            if t.fused is not None:
                row["fused"] = encode_fused(t.task_id, t.fused, verdicts)
            tasks.append(row)
        workers = []
        for wid, model in self.workers:
            p = m.profiles.get(wid)
            workers.append(
                {
                    "worker_id": wid,
                    "kind": model.kind.value,
                    "approved": p.approved.get(self.job.job_id, 0) if p else 0,
                    "rejected": p.rejected.get(self.job.job_id, 0) if p else 0,
                    "approval_rate": p.approval_rate(self.job.job_id) if p else None,
                    "blocked": m.is_blocked(wid),
                    "hits": sum(1 for h in m.hits.values() if h.worker_id == wid),
                }
            )
        hist = Counter(len(t.results) for t in m.tasks.values())
        hit_status = Counter(h.status.value for h in m.hits.values())
        out = {
            "format_version": FORMAT_VERSION,
            "scenario": self.scenario.name,
            "seed": self.scenario.seed,
            "category": self.job.category.value,
            "job": encode_job(self.job),
            "budget_exhausted": self.budget_exhausted,
            "ticks": self.ticks,
            "sim_time": self.sim_time,
            "metrics": self.metrics(),
            "tasks": tasks,
            "workers": workers,
            "price_trace": [
                {"approved": n, "time": time, "price": format_price(p)} for n, time, p in m.price_trace
            ],
            "final_price": format_price(m.pricing.current_price),
            "result_count_histogram": {str(k): hist[k] for k in sorted(hist)},
            "hit_status": dict(sorted(hit_status.items())),
        }
        if self.global_tracks:
            out["global_tracks"] = {
                str(v): [encode_element(t) for t in tracks] for v, tracks in sorted(self.global_tracks.items())
            }
        return out


def default_job(scenario: Scenario, **overrides) -> JobSpec:
    params = overrides.pop("params", None) or FusionParams.defaults(scenario.category)
    return JobSpec(
        job_id=overrides.pop("job_id", scenario.name),
        category=scenario.category,
        class_labels=scenario.class_labels,
        params=params,
        **overrides,
    )


def run_job(
    scenario: Scenario,
    job: Optional[JobSpec] = None,
    *,
    policy: Optional[AdmissionPolicy] = None,
) -> SimulationReport:
    """Drive one job to completion (or to ``max_ticks``) and report.

    Each tick: due submissions are processed in time order, the HIT
    generator closes the deficit, then every idle worker independently
    asks for a HIT with probability ``arrival_prob``.
    """
    job = validate_job(job if job is not None else default_job(scenario))
    if job.category is not scenario.category:
        raise ValueError(f"job category {job.category.value} != scenario {scenario.category.value}")
    if policy is None and scenario.worker_filtering:
        policy = AdmissionPolicy()

    layout = task_layout(scenario)
    scenes = [generate_scene(scenario, i) for i in range(len(layout))]
    by_id = {s.task_id: s for s in scenes}
    workers = build_population(scenario)
    rngs = {wid: stream(scenario.seed, "worker", i) for i, (wid, _) in enumerate(workers)}
    manager = HitManager(
        job,
        [s.task_id for s in scenes],
        policy=policy if scenario.worker_filtering else None,
        admission_rng=stream(scenario.seed, "admission"),
        selection_rng=stream(scenario.seed, "selection"),
    )
    arrivals = stream(scenario.seed, "arrival")

    pending: list = []  # (time, seq, hit_id, worker_id, results)
    seq = itertools.count()
    busy: set = set()
    last_time = 0.0
    exhausted = True
    tick = 0
    for tick in range(scenario.max_ticks):
        now = tick * scenario.tick_seconds
        while pending and pending[0][0] <= now:
            t, _, hit_id, wid, results = heapq.heappop(pending)
            manager.submit(hit_id, results, t)
            busy.discard(wid)
            last_time = t
        if manager.done:
            exhausted = False
            break
        manager.schedule(now)
        order = arrivals.permutation(len(workers)).tolist()
        draws = arrivals.random(len(workers))
        for i in order:
            wid, model = workers[i]
            if wid in busy or draws[i] >= scenario.arrival_prob:
                continue
            hit = manager.offer(wid, now)
            if hit is None:
                continue
            clock = now
            results = []
            for tid in hit.task_ids:
                r = worker_respond(model, tid, wid, by_id[tid], rngs[wid], scenario)
                clock += r.duration
                r.submit_time = clock
                results.append(r)
            busy.add(wid)
            heapq.heappush(pending, (clock, next(seq), hit.hit_id, wid, results))

    report = SimulationReport(scenario, job, scenes, manager, workers, exhausted, tick, last_time)
    if scenario.category is Category.TRACKING:
        report.global_tracks = stitch_videos(scenario, manager)
    return report


def stitch_videos(scenario: Scenario, manager: HitManager) -> dict[int, list[Track]]:
    _, overlap = scenario.chunk_geometry
    videos: dict[int, list[Chunk]] = {}
    for task_id, video, start, stop in task_layout(scenario):
        task = manager.tasks[task_id]
        tracks = task.fused.elements if task.fused is not None else []
        videos.setdefault(video, []).append(Chunk(start, stop, list(tracks)))
    return {v: stitch_chunks(chunks, overlap) for v, chunks in videos.items()}


# --------------------------------------------------------------------------
# sweeps


def sweep_configs(grid: Mapping[str, Sequence]) -> list[dict]:
    """Cartesian product of parameter overrides, in sorted-key order."""
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def _run_one(args) -> dict:
    scenario, job = args
    return run_job(scenario, job).to_dict()


def run_many(runs: Sequence[tuple[Scenario, JobSpec]], jobs: int = 1) -> list[dict]:
    """Run independent simulations, optionally in worker processes; order is preserved."""
    if jobs <= 1 or len(runs) <= 1:
        return [_run_one(r) for r in runs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, runs))


# --------------------------------------------------------------------------
# scenario files

_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_INT_PAIR = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "seed", "category", "n_tasks", "population"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "category": {"enum": [c.value for c in Category]},
        "n_tasks": {"type": "integer", "minimum": 1},
        "class_labels": {"type": "array", "items": {"type": "string"}},
        "n_workers": {"type": "integer", "minimum": 1},
        "objects_per_task": _INT_PAIR,
        "count_range": _INT_PAIR,
        "crowding": {"type": "boolean"},
        "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "box_size": _PAIR,
        "frame_rate": {"type": "number", "exclusiveMinimum": 0},
        "chunk_seconds": {"type": "number", "exclusiveMinimum": 0},
        "overlap_seconds": {"type": "number", "minimum": 0},
        "video_seconds": {"type": "number", "exclusiveMinimum": 0},
        "arrival_prob": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "tick_seconds": {"type": "number", "exclusiveMinimum": 0},
        "max_ticks": {"type": "integer", "minimum": 1},
        "worker_filtering": {"type": "boolean"},
        "population": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["fraction", "kind"],
                "properties": {
                    "fraction": {"type": "number", "minimum": 0, "maximum": 1},
                    "kind": {"enum": [k.value for k in WorkerKind]},
                    "sigma": {"type": "number", "minimum": 0},
                    "flip_prob": {"type": "number", "minimum": 0, "maximum": 1},
                    "p_miss": {"type": "number", "minimum": 0, "maximum": 1},
                    "bias": {"type": "number", "exclusiveMinimum": -1},
                    "speed_mu": {"type": "number"},
                    "speed_sigma": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
        "job": {
            "type": "object",
            "properties": {
                "job_id": {"type": "string"},
                "params": {"type": "object"},
                "target_hourly_rate": {"type": ["number", "string"]},
                "initial_hit_price": {"type": ["number", "string"]},
                "batch_size": {"type": "integer"},
                "payment_threshold": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "propertyNames": {"enum": ["n_min", "n_max", "n_corr", "eta_cov", "tau", "beta", "epsilon"]},
            "additionalProperties": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        },
    },
    "additionalProperties": False,
}

_TUPLE_FIELDS = ("objects_per_task", "count_range", "image_size", "box_size")


def scenario_from_dict(obj: Mapping, source: str = "<scenario>") -> tuple[Scenario, JobSpec, dict]:
    """Parse a scenario file into ``(scenario, job, sweep grid)``.

    Raises ``SchemaError`` on malformed input and ``CategoryMismatch`` when
    the job overrides a knob that does not apply to the category.
    """
    validate(obj, SCENARIO_SCHEMA, source)
    kw = {k: v for k, v in obj.items() if k not in ("population", "job", "sweep")}
    for name in _TUPLE_FIELDS:
        if name in kw:
            kw[name] = tuple(kw[name])
    population = []
    for share in obj["population"]:
        model = {k: v for k, v in share.items() if k != "fraction"}
        population.append(PopulationShare(share["fraction"], WorkerModel(**model)))
    try:
        scenario = Scenario(population=tuple(population), **kw)
    except ValueError as exc:
        raise SchemaError(f"{source}: {exc}") from exc
    job_obj = dict(obj.get("job", {}))
    params = decode_params(job_obj.pop("params", None), scenario.category)
    for name in ("target_hourly_rate", "initial_hit_price"):
        if name in job_obj:
            job_obj[name] = parse_price(job_obj[name])
    job = default_job(scenario, params=params, **job_obj)
    sweep = {k: list(v) for k, v in obj.get("sweep", {}).items()}
    if sweep:
        allowed = FusionParams.applicable(scenario.category)
        stray = sorted(set(sweep) - allowed)
        if stray:
            raise CategoryMismatch(f"sweep parameters {stray} do not apply to {scenario.category.value}")
    return scenario, job, sweep


def sweep_runs(scenario: Scenario, job: JobSpec, grid: Mapping[str, Sequence]) -> list[tuple[dict, Scenario, JobSpec]]:
    runs = []
    for overrides in sweep_configs(grid):
        typed = {k: int(v) if k in ("n_min", "n_max", "n_corr") else float(v) for k, v in overrides.items()}
        runs.append((overrides, scenario, replace(job, params=job.params.with_overrides(**typed))))
    return runs
