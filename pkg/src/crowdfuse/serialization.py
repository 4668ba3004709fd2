"""JSON encoding of annotations, fused results, jobs and reports.

Output is canonical: keys sorted, floats cut to 9 significant digits,
two-space indent, trailing newline. Prices travel as decimal strings.
"""

from __future__ import annotations

import json
import math
from decimal import Decimal
from typing import Any, Mapping, Optional

import jsonschema

from .errors import CategoryMismatch, SchemaError
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
)

FORMAT_VERSION = 1
PRICE_QUANTUM = Decimal("0.000001")


# --------------------------------------------------------------------------
# canonical output


class Exact(float):
    """A float that bypasses the 9-digit cut (configuration such as tau = 1/0.3)."""


def _canon(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, Exact):
        return float(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite number {obj!r} cannot be serialized")
        return float(f"{obj:.9g}")
    if isinstance(obj, Mapping):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalars
        return _canon(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return json.dumps(_canon(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def format_price(value: float) -> str:
    return str(Decimal(repr(float(value))).quantize(PRICE_QUANTUM))


def parse_price(value) -> float:
    return float(Decimal(str(value)))


def loads(text: str, source: str = "<input>") -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc


# --------------------------------------------------------------------------
# schemas

_NUM = {"type": "number"}
_BOX = {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}

ELEMENT_SCHEMAS = {
    "label": {
        "type": "object",
        "required": ["label"],
        "properties": {"label": {"type": "string"}},
        "additionalProperties": False,
    },
    "count": {
        "type": "object",
        "required": ["count"],
        "properties": {"count": {"type": "number", "minimum": 0}},
        "additionalProperties": False,
    },
    "box": {
        "type": "object",
        "required": ["label", "box"],
        "properties": {"label": {"type": "string"}, "box": _BOX},
        "additionalProperties": False,
    },
    "segment": {
        "type": "object",
        "required": ["label", "grid"],
        "properties": {
            "label": {"type": "string"},
            "grid": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
            "pixels": {
                "type": "array",
                "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
            },
            "rle": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "oneOf": [{"required": ["pixels"]}, {"required": ["rle"]}],
        "additionalProperties": False,
    },
    "track": {
        "type": "object",
        "required": ["label", "frames"],
        "properties": {
            "label": {"type": "string"},
            "frames": {
                "type": "array",
                "items": {"type": "array", "items": _NUM, "minItems": 5, "maxItems": 5},
            },
        },
        "additionalProperties": False,
    },
}

_ELEMENT_KEY = {
    Category.IMAGE_CLASSIFICATION: "label",
    Category.VIDEO_CLASSIFICATION: "label",
    Category.COUNTING: "count",
    Category.DETECTION: "box",
    Category.SEGMENTATION: "segment",
    Category.TRACKING: "track",
}

CATEGORY_NAMES = [c.value for c in Category]

PARAMS_SCHEMA = {
    "type": "object",
    "properties": {
        "n_min": {"type": "integer"},
        "n_max": {"type": "integer"},
        "n_corr": {"type": ["integer", "null"]},
        "eta_cov": {"type": ["number", "null"]},
        "tau": {"type": ["number", "null"]},
        "beta": {"type": ["number", "null"]},
        "epsilon": {"type": ["number", "null"]},
    },
    "additionalProperties": False,
}

JOB_SCHEMA = {
    "type": "object",
    "required": ["job_id", "category"],
    "properties": {
        "job_id": {"type": "string"},
        "category": {"enum": CATEGORY_NAMES},
        "class_labels": {"type": "array", "items": {"type": "string"}},
        "params": PARAMS_SCHEMA,
        "target_hourly_rate": {"type": ["number", "string"]},
        "initial_hit_price": {"type": ["number", "string"]},
        "batch_size": {"type": "integer"},
        "payment_threshold": {"type": "number"},
        "task_sources": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}

WORKER_RESULT_SCHEMA = {
    "type": "object",
    "required": ["worker_id", "elements", "duration"],
    "properties": {
        "task_id": {"type": "string"},
        "worker_id": {"type": "string"},
        "elements": {"type": "array"},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "submit_time": {"type": "number"},
        "hit_id": {"type": ["string", "null"]},
    },
    "additionalProperties": False,
}

ANNOTATION_FILE_SCHEMA = {
    "type": "object",
    "required": ["format_version", "category", "tasks"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "category": {"enum": CATEGORY_NAMES},
        "class_labels": {"type": "array", "items": {"type": "string"}},
        "params": PARAMS_SCHEMA,
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["task_id", "results"],
                "properties": {
                    "task_id": {"type": "string"},
                    "media": {"type": "string"},
                    "results": {"type": "array", "items": WORKER_RESULT_SCHEMA},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

FUSED_TASK_SCHEMA = {
    "type": "object",
    "required": ["task_id", "corroborated", "uncorroborated_groups", "coverage", "per_worker_accept"],
    "properties": {
        "task_id": {"type": "string"},
        "corroborated": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["element", "support"],
                "properties": {"element": {"type": "object"}, "support": {"type": "integer", "minimum": 1}},
                "additionalProperties": False,
            },
        },
        "uncorroborated_groups": {"type": "integer", "minimum": 0},
        "coverage": {"type": "number", "minimum": 0, "maximum": 1},
        "per_worker_accept": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "approvals": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "converged": {"type": "boolean"},
        "n_results": {"type": "integer"},
    },
    "additionalProperties": False,
}

FUSED_FILE_SCHEMA = {
    "type": "object",
    "required": ["format_version", "category", "tasks"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "category": {"enum": CATEGORY_NAMES},
        "params": PARAMS_SCHEMA,
        "tasks": {"type": "array", "items": FUSED_TASK_SCHEMA},
    },
    "additionalProperties": False,
}

REFERENCE_FILE_SCHEMA = {
    "type": "object",
    "required": ["format_version", "category", "tasks"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "category": {"enum": CATEGORY_NAMES},
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["task_id", "elements"],
                "properties": {"task_id": {"type": "string"}, "elements": {"type": "array"}},
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def validate(instance: Any, schema: Mapping, source: str = "<input>") -> None:
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{source}: /{'/'.join(map(str, e.absolute_path))}: {e.message}" for e in errors[:10]]
        raise SchemaError("\n".join(lines))


# --------------------------------------------------------------------------
# elements


def encode_box(box: BoundingBox) -> list:
    return list(box.as_tuple())


def decode_box(values) -> BoundingBox:
    if not all(math.isfinite(v) for v in values):
        raise SchemaError(f"non-finite box coordinates {values}")
    x1, y1, x2, y2 = values
    if x1 > x2 or y1 > y2:
        raise SchemaError(f"box corners out of order: {values}")
    return BoundingBox(float(x1), float(y1), float(x2), float(y2))


def encode_element(e) -> dict:
    if isinstance(e, ClassLabel):
        return {"label": e.label}
    if isinstance(e, Count):
        return {"count": e.value}
    if isinstance(e, LabeledBox):
        return {"label": e.label, "box": encode_box(e.box)}
    if isinstance(e, Segment):
        return {"label": e.label, "grid": [e.width, e.height], "pixels": sorted([x, y] for x, y in e.cells)}
    if isinstance(e, Track):
        return {"label": e.label, "frames": [[f, *b.as_tuple()] for f, b in e.frames.items()]}
    raise TypeError(f"not an annotation element: {e!r}")


def rle_to_cells(rle, width: int, height: int) -> set:
    """Row-major ``[start, length, start, length, ...]`` runs to ``(x, y)`` cells."""
    if len(rle) % 2:
        raise SchemaError("run-length list must hold start/length pairs")
    cells = set()
    for start, length in zip(rle[::2], rle[1::2]):
        for idx in range(start, start + length):
            if idx >= width * height:
                raise SchemaError(f"run reaches index {idx} beyond a {width}x{height} grid")
            cells.add((idx % width, idx // width))
    return cells


def decode_element(category: Category, obj: Mapping, source: str = "<input>"):
    key = _ELEMENT_KEY[Category(category)]
    validate(obj, ELEMENT_SCHEMAS[key], source)
    try:
        if key == "label":
            return ClassLabel(obj["label"])
        if key == "count":
            return Count(float(obj["count"]))
        if key == "box":
            return LabeledBox(decode_box(obj["box"]), obj["label"])
        if key == "segment":
            w, h = obj["grid"]
            cells = {tuple(p) for p in obj["pixels"]} if "pixels" in obj else rle_to_cells(obj["rle"], w, h)
            return Segment(frozenset(cells), obj["label"], w, h)
        frames = {}
        for row in obj["frames"]:
            f = row[0]
            if f != int(f):
                raise SchemaError(f"{source}: frame index {f} is not an integer")
            frames[int(f)] = decode_box(row[1:])
        return Track(obj["label"], frames)
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{source}: {exc}") from exc


# --------------------------------------------------------------------------
# records


def encode_params(params: FusionParams) -> dict:
    return {k: Exact(v) if isinstance(v, float) else v for k, v in params.to_dict().items()}


def decode_params(obj: Optional[Mapping], category: Category) -> FusionParams:
    """Apply overrides onto the category defaults.

    Raises ``CategoryMismatch`` when a knob that does not apply to the
    category is set to anything but its default.
    """
    base = FusionParams.defaults(category)
    if not obj:
        return base
    allowed = FusionParams.applicable(category)
    defaults = base.to_dict()
    stray = sorted(k for k, v in obj.items() if k not in allowed and v is not None and v != defaults.get(k))
    if stray:
        raise CategoryMismatch(f"parameters {stray} do not apply to {category.value}")
    return base.with_overrides(**obj)


def encode_job(job: JobSpec) -> dict:
    return {
        "job_id": job.job_id,
        "category": job.category.value,
        "class_labels": list(job.class_labels),
        "params": encode_params(job.params),
        "target_hourly_rate": job.target_hourly_rate,
        "initial_hit_price": format_price(job.initial_hit_price),
        "batch_size": job.batch_size,
        "payment_threshold": job.payment_threshold,
        "task_sources": list(job.task_sources),
    }


def decode_job(obj: Mapping, source: str = "<job>") -> JobSpec:
    validate(obj, JOB_SCHEMA, source)
    category = Category(obj["category"])
    kw = {}
    for name in ("target_hourly_rate", "initial_hit_price"):
        if name in obj:
            kw[name] = parse_price(obj[name])
    for name in ("batch_size", "payment_threshold"):
        if name in obj:
            kw[name] = obj[name]
    return JobSpec(
        job_id=obj["job_id"],
        category=category,
        class_labels=tuple(obj.get("class_labels", ())),
        params=decode_params(obj.get("params"), category),
        task_sources=tuple(obj.get("task_sources", ())),
        **kw,
    )


def encode_result(r: WorkerResult) -> dict:
    out = {
        "task_id": r.task_id,
        "worker_id": r.worker_id,
        "elements": [encode_element(e) for e in r.elements],
        "duration": r.duration,
        "submit_time": r.submit_time,
    }
    if r.hit_id is not None:
        out["hit_id"] = r.hit_id
    return out


def decode_result(obj: Mapping, category: Category, task_id: str, source: str = "<input>") -> WorkerResult:
    validate(obj, WORKER_RESULT_SCHEMA, source)
    return WorkerResult(
        task_id=obj.get("task_id", task_id),
        worker_id=obj["worker_id"],
        elements=[decode_element(category, e, source) for e in obj["elements"]],
        duration=float(obj["duration"]),
        submit_time=float(obj.get("submit_time", 0.0)),
        hit_id=obj.get("hit_id"),
    )


def encode_fused(task_id: str, fused: FusedResult, approvals: Optional[Mapping] = None, **extra) -> dict:
    out = {
        "task_id": task_id,
        "corroborated": [{"element": encode_element(e), "support": int(k)} for e, k in fused.corroborated],
        "uncorroborated_groups": fused.uncorroborated_groups,
        "coverage": fused.coverage,
        "per_worker_accept": {w: int(k) for w, k in sorted(fused.per_worker_accept.items())},
    }
    if approvals is not None:
        out["approvals"] = {w: bool(a) for w, a in sorted(approvals.items())}
    out.update(extra)
    return out


def decode_fused(obj: Mapping, category: Category, source: str = "<input>") -> FusedResult:
    validate(obj, FUSED_TASK_SCHEMA, source)
    return FusedResult(
        [(decode_element(category, c["element"], source), c["support"]) for c in obj["corroborated"]],
        obj["uncorroborated_groups"],
        dict(obj["per_worker_accept"]),
    )


def decode_annotation_file(obj: Mapping, source: str = "<input>") -> tuple[Category, Optional[dict], list]:
    """Return ``(category, params overrides, [(task_id, [WorkerResult])])``."""
    validate(obj, ANNOTATION_FILE_SCHEMA, source)
    category = Category(obj["category"])
    tasks = []
    for t in obj["tasks"]:
        results = [decode_result(r, category, t["task_id"], source) for r in t["results"]]
        tasks.append((t["task_id"], results))
    return category, obj.get("params"), tasks


def decode_element_sets(obj: Mapping, source: str = "<input>") -> tuple[Category, list]:
    """Read either a fused-result file or a reference file as ``[(task_id, elements)]``."""
    if not isinstance(obj, Mapping):
        raise SchemaError(f"{source}: top level must be an object")
    category = obj.get("category")
    tasks = obj.get("tasks")
    is_fused = isinstance(tasks, list) and any(isinstance(t, Mapping) and "corroborated" in t for t in tasks)
    validate(obj, FUSED_FILE_SCHEMA if is_fused else REFERENCE_FILE_SCHEMA, source)
    category = Category(category)
    out = []
    for t in obj["tasks"]:
        if is_fused:
            elems = [decode_element(category, c["element"], source) for c in t["corroborated"]]
        else:
            elems = [decode_element(category, e, source) for e in t["elements"]]
        out.append((t["task_id"], elems))
    return category, out
