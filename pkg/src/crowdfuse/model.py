"""Domain types for jobs, tasks, HITs, workers and annotations.

Nothing in here runs an algorithm; fusion, quality control and HIT
management all operate on these records.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Optional, Union

from .errors import InvalidTransition, JobValidationError


class Category(str, enum.Enum):
    IMAGE_CLASSIFICATION = "ImageClassification"
    VIDEO_CLASSIFICATION = "VideoClassification"
    COUNTING = "Counting"
    DETECTION = "Detection"
    SEGMENTATION = "Segmentation"
    TRACKING = "Tracking"

    @property
    def is_classification(self) -> bool:
        return self in (Category.IMAGE_CLASSIFICATION, Category.VIDEO_CLASSIFICATION)

    @property
    def is_spatial(self) -> bool:
        return self in (Category.DETECTION, Category.SEGMENTATION, Category.TRACKING)


# --------------------------------------------------------------------------
# annotation elements


@dataclass(frozen=True)
class BoundingBox:
    x_tl: float
    y_tl: float
    x_br: float
    y_br: float

    def __post_init__(self):
        if self.x_tl > self.x_br or self.y_tl > self.y_br:
            raise ValueError(f"inverted box corners: {self}")

    @property
    def area(self) -> float:
        return (self.x_br - self.x_tl) * (self.y_br - self.y_tl)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_tl, self.y_tl, self.x_br, self.y_br)

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "BoundingBox":
        """Build a box from two arbitrary opposite corners."""
        return cls(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))


@dataclass(frozen=True)
class ClassLabel:
    label: str


@dataclass(frozen=True)
class Count:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"count must be non-negative, got {self.value}")


@dataclass(frozen=True)
class LabeledBox:
    box: BoundingBox
    label: str


@dataclass(frozen=True)
class Segment:
    """A set of raster cells ``(x, y)`` on a ``width`` x ``height`` grid."""

    cells: frozenset
    label: str
    width: int
    height: int

    def __post_init__(self):
        if not isinstance(self.cells, frozenset):
            object.__setattr__(self, "cells", frozenset(self.cells))
        for x, y in self.cells:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"cell {(x, y)} outside {self.width}x{self.height} grid")

    @property
    def grid(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass(frozen=True)
class Track:
    """Frame-indexed boxes for one object; gaps in the frame range are allowed."""

    label: str
    frames: Mapping[int, BoundingBox] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "frames", dict(sorted(self.frames.items())))

    def __hash__(self):
        return hash((self.label, tuple(self.frames.items())))

    @property
    def first_frame(self) -> Optional[int]:
        return next(iter(self.frames), None)

    @property
    def last_frame(self) -> Optional[int]:
        return next(reversed(self.frames), None) if self.frames else None

    def restricted(self, start: int, stop: int) -> "Track":
        """Frames in ``[start, stop)`` only."""
        return Track(self.label, {f: b for f, b in self.frames.items() if start <= f < stop})


AnnotationElement = Union[ClassLabel, Count, LabeledBox, Segment, Track]

ELEMENT_TYPE = {
    Category.IMAGE_CLASSIFICATION: ClassLabel,
    Category.VIDEO_CLASSIFICATION: ClassLabel,
    Category.COUNTING: Count,
    Category.DETECTION: LabeledBox,
    Category.SEGMENTATION: Segment,
    Category.TRACKING: Track,
}


def element_label(element: AnnotationElement) -> Optional[str]:
    if isinstance(element, ClassLabel):
        return element.label
    if isinstance(element, Count):
        return None
    return element.label


# --------------------------------------------------------------------------
# job configuration


@dataclass(frozen=True)
class FusionParams:
    """Per-category fusion knobs.

    ``None`` marks a knob that does not apply to the category (for
    classification ``n_corr`` is derived as ``beta * n`` at fusion time).
    """

    n_min: int
    n_max: int
    n_corr: Optional[int] = None
    eta_cov: Optional[float] = None
    tau: Optional[float] = None
    beta: Optional[float] = None
    epsilon: Optional[float] = None

    @classmethod
    def defaults(cls, category: Category) -> "FusionParams":
        category = Category(category)
        if category.is_classification:
            return cls(n_min=3, n_max=20, tau=0.0, beta=0.7)
        if category is Category.COUNTING:
            return cls(n_min=10, n_max=20, epsilon=0.1)
        if category is Category.DETECTION:
            return cls(n_min=5, n_max=20, n_corr=3, eta_cov=0.9, tau=15.0)
        if category is Category.SEGMENTATION:
            return cls(n_min=10, n_max=20, n_corr=3, eta_cov=0.9, tau=1 / 0.3)
        return cls(n_min=5, n_max=20, n_corr=3, eta_cov=0.9, tau=1 / 0.3)

    @staticmethod
    def applicable(category: Category) -> frozenset:
        """Names of knobs a user may override for ``category``."""
        category = Category(category)
        base = {"n_min", "n_max"}
        if category.is_classification:
            return frozenset(base | {"beta"})
        if category is Category.COUNTING:
            return frozenset(base | {"epsilon"})
        return frozenset(base | {"n_corr", "eta_cov", "tau"})

    def with_overrides(self, **overrides) -> "FusionParams":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "FusionParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown fusion parameters: {sorted(unknown)}")
        return cls(**data)

    def violations(self) -> list[tuple[str, str]]:
        errs = []
        if not (1 <= self.n_min <= self.n_max):
            errs.append(("BadSampleBounds", f"need 1 <= n_min <= n_max, got {self.n_min}, {self.n_max}"))
        if self.eta_cov is not None and not (0.0 <= self.eta_cov <= 1.0):
            errs.append(("BadThreshold", f"eta_cov must lie in [0, 1], got {self.eta_cov}"))
        if self.tau is not None and not self.tau >= 0:
            errs.append(("BadThreshold", f"tau must be >= 0, got {self.tau}"))
        for name in ("beta", "epsilon"):
            value = getattr(self, name)
            if value is not None and not (0.0 < value < 1.0):
                errs.append(("BadThreshold", f"{name} must lie in (0, 1), got {value}"))
        if self.n_corr is not None and self.n_corr < 1:
            errs.append(("BadThreshold", f"n_corr must be >= 1, got {self.n_corr}"))
        return errs


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    category: Category
    class_labels: tuple[str, ...]
    params: FusionParams
    target_hourly_rate: float = 8.0
    initial_hit_price: float = 0.05
    batch_size: int = 1
    payment_threshold: float = 0.5
    task_sources: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        object.__setattr__(self, "task_sources", tuple(self.task_sources))


def validate_job(spec: JobSpec) -> JobSpec:
    """Return ``spec`` unchanged, or raise ``JobValidationError`` listing every violation."""
    errs: list[tuple[str, str]] = []
    needs_labels = spec.category.is_classification or spec.category.is_spatial
    if needs_labels and not spec.class_labels:
        errs.append(("EmptyLabelSet", f"{spec.category.value} jobs need class labels"))
    if not needs_labels and spec.class_labels:
        errs.append(("UnexpectedLabels", "counting jobs take no class labels"))
    if len(set(spec.class_labels)) != len(spec.class_labels):
        errs.append(("DuplicateLabels", "class labels must be distinct"))
    if not spec.target_hourly_rate > 0:
        errs.append(("NonPositiveRate", f"target_hourly_rate must be > 0, got {spec.target_hourly_rate}"))
    if not spec.initial_hit_price > 0:
        errs.append(("NonPositiveRate", f"initial_hit_price must be > 0, got {spec.initial_hit_price}"))
    if spec.batch_size < 1:
        errs.append(("BadBatch", f"batch_size must be >= 1, got {spec.batch_size}"))
    if not (0.0 <= spec.payment_threshold <= 1.0):
        errs.append(("BadThreshold", f"payment_threshold must lie in [0, 1], got {spec.payment_threshold}"))
    errs.extend(spec.params.violations())
    if errs:
        raise JobValidationError(errs)
    return spec


# --------------------------------------------------------------------------
# task / HIT / worker state


@dataclass
class WorkerResult:
    task_id: str
    worker_id: str
    elements: list
    duration: float
    submit_time: float = 0.0
    hit_id: Optional[str] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")


class TaskStatus(str, enum.Enum):
    OPEN = "Open"
    AGGREGATED = "Aggregated"
    PURGED = "Purged"


_TASK_ORDER = {TaskStatus.OPEN: 0, TaskStatus.AGGREGATED: 1, TaskStatus.PURGED: 2}


@dataclass
class FusedResult:
    corroborated: list  # (head element, support) pairs
    uncorroborated_groups: int = 0
    per_worker_accept: dict = field(default_factory=dict)
    # (dominant cluster, all clusters, corroborated) per group; not serialized
    details: list = field(default_factory=list, repr=False, compare=False)

    @property
    def coverage(self) -> float:
        total = len(self.corroborated) + self.uncorroborated_groups
        return len(self.corroborated) / total if total else 1.0

    @property
    def elements(self) -> list:
        return [head for head, _ in self.corroborated]


@dataclass
class TaskState:
    """One task's lifecycle.

    ``target`` is the number of results the quality loop currently wants;
    it starts at ``n_min`` and grows by one per relaunch. ``in_flight``
    counts assignments bound to workers but not yet submitted.
    """

    task_id: str
    job_id: str
    media: str = ""
    results: list = field(default_factory=list)
    served_workers: set = field(default_factory=set)
    status: TaskStatus = TaskStatus.OPEN
    fused: Optional[FusedResult] = None
    target: int = 0
    in_flight: int = 0

    def transition(self, new: TaskStatus) -> None:
        new = TaskStatus(new)
        if _TASK_ORDER[new] != _TASK_ORDER[self.status] + 1:
            raise InvalidTransition(f"task {self.task_id}: {self.status.value} -> {new.value}")
        self.status = new

    @property
    def attempts(self) -> int:
        return len(self.results) + self.in_flight

    def wants_more(self) -> bool:
        return self.status is TaskStatus.OPEN and self.attempts < self.target

    def add_result(self, result: WorkerResult) -> None:
        self.results.append(result)
        self.served_workers.add(result.worker_id)


class HitStatus(str, enum.Enum):
    LISTED = "Listed"
    SUBMITTED = "Submitted"
    PAID = "Paid"
    REJECTED = "Rejected"
    DISPOSED = "Disposed"


_HIT_MOVES = {
    HitStatus.LISTED: {HitStatus.SUBMITTED, HitStatus.DISPOSED},
    HitStatus.SUBMITTED: {HitStatus.PAID, HitStatus.REJECTED},
    HitStatus.PAID: set(),
    HitStatus.REJECTED: set(),
    HitStatus.DISPOSED: set(),
}


@dataclass
class HitRecord:
    hit_id: str
    job_id: str
    price: float
    task_ids: list = field(default_factory=list)
    worker_id: Optional[str] = None
    status: HitStatus = HitStatus.LISTED
    accepted_at: Optional[float] = None

    def __post_init__(self):
        if not self.price > 0:
            raise ValueError(f"HIT price must be > 0, got {self.price}")

    def transition(self, new: HitStatus) -> None:
        new = HitStatus(new)
        if new not in _HIT_MOVES[self.status]:
            raise InvalidTransition(f"HIT {self.hit_id}: {self.status.value} -> {new.value}")
        self.status = new

    @property
    def unfinished(self) -> bool:
        return self.status is HitStatus.LISTED


@dataclass
class WorkerProfile:
    worker_id: str
    approved: dict = field(default_factory=dict)  # job_id -> count
    rejected: dict = field(default_factory=dict)

    def record(self, job_id: str, approved: bool) -> None:
        tally = self.approved if approved else self.rejected
        tally[job_id] = tally.get(job_id, 0) + 1

    def total(self, job_id: str) -> int:
        return self.approved.get(job_id, 0) + self.rejected.get(job_id, 0)

    def approval_rate(self, job_id: str) -> Optional[float]:
        n = self.total(job_id)
        return self.approved.get(job_id, 0) / n if n else None


@dataclass
class PricingState:
    """Per-job price estimator; prices are per task, a HIT costs ``batch_size`` of them."""

    job_id: str
    target_hourly_rate: float
    current_price: float
    approved_durations: list = field(default_factory=list)
    batch_size: int = 1

    @classmethod
    def for_job(cls, job: JobSpec) -> "PricingState":
        return cls(
            job_id=job.job_id,
            target_hourly_rate=job.target_hourly_rate,
            current_price=job.initial_hit_price / job.batch_size,
            batch_size=job.batch_size,
        )

    @property
    def hit_price(self) -> float:
        return self.current_price * self.batch_size


def is_finite_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
