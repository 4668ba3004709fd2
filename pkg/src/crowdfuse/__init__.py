"""Consensus fusion and simulation for crowdsourced vision groundtruth."""

from .errors import CrowdfuseError
from .fusion import fuse_task
from .hits import AdmissionPolicy, HitManager
from .metrics import average_precision, match_pr, price_convergence
from .model import (
    BoundingBox,
    Category,
    ClassLabel,
    Count,
    FusedResult,
    FusionParams,
    JobSpec,
    LabeledBox,
    Segment,
    Track,
    WorkerResult,
    validate_job,
)
from .quality import Aggregated, NeedMore, evaluate_task, qc_step
from .simulator import Scenario, WorkerModel, run_job

__version__ = "0.1.0"

__all__ = [
    "AdmissionPolicy",
    "Aggregated",
    "BoundingBox",
    "Category",
    "ClassLabel",
    "Count",
    "CrowdfuseError",
    "FusedResult",
    "FusionParams",
    "HitManager",
    "JobSpec",
    "LabeledBox",
    "NeedMore",
    "Scenario",
    "Segment",
    "Track",
    "WorkerModel",
    "WorkerResult",
    "average_precision",
    "evaluate_task",
    "fuse_task",
    "match_pr",
    "price_convergence",
    "qc_step",
    "run_job",
    "validate_job",
]
