"""``crowdfuse fuse | simulate | evaluate``.

Exit codes: 0 success, 1 unreadable input, 2 schema error,
3 category or parameter mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .errors import CategoryMismatch, JobValidationError, SchemaError
from .fusion import fuse_task
from .metrics import average_precision_tasks, match_pr, merge_reports
from .model import Category, validate_job
from .quality import evaluate_task
from .serialization import (
    FORMAT_VERSION,
    decode_annotation_file,
    decode_element_sets,
    decode_params,
    dumps,
    encode_fused,
    encode_params,
    loads,
)
from .simulator import run_job, run_many, scenario_from_dict, sweep_runs

EXIT_OK, EXIT_IO, EXIT_SCHEMA, EXIT_MISMATCH = 0, 1, 2, 3
SEED_ENV = "CROWDFUSE_SEED"

_PARAM_FLAGS = {
    "n_min": int,
    "n_max": int,
    "n_corr": int,
    "eta_cov": float,
    "tau": float,
    "beta": float,
    "epsilon": float,
}


def bundled_scenarios() -> list[str]:
    root = resources.files("crowdfuse") / "scenarios"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    p = Path(path)
    if not p.exists() and not path.endswith(".json"):
        bundled = resources.files("crowdfuse") / "scenarios" / f"{path}.json"
        if bundled.is_file():
            return bundled.read_text()
    return p.read_text()


def _write(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --------------------------------------------------------------------------
# fuse


def _fuse_one(args) -> dict:
    category, params, task_id, results = args
    fused = fuse_task(category, results, params)
    approvals = evaluate_task(category, results, fused, params) if results else {}
    return encode_fused(task_id, fused, approvals, n_results=len(results))


def cmd_fuse(args) -> int:
    data = loads(_read(args.input), args.input)
    category, file_params, tasks = decode_annotation_file(data, args.input)
    overrides = dict(file_params or {})
    overrides.update({k: getattr(args, k) for k in _PARAM_FLAGS if getattr(args, k) is not None})
    params = decode_params(overrides, category)
    violations = params.violations()
    if violations:
        raise JobValidationError(violations)
    work = [(category, params, tid, results) for tid, results in tasks]
    if args.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_fuse_one, work, chunksize=max(1, len(work) // (4 * args.jobs))))
    else:
        rows = [_fuse_one(w) for w in work]
    out = {
        "format_version": FORMAT_VERSION,
        "category": category.value,
        "params": encode_params(params),
        "tasks": rows,
    }
    _write(dumps(out), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    data = loads(_read(args.scenario), args.scenario)
    if isinstance(data, dict) and os.environ.get(SEED_ENV):
        try:
            data["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise SchemaError(f"{SEED_ENV} must be an integer, got {os.environ[SEED_ENV]!r}") from exc
    scenario, job, sweep = scenario_from_dict(data, args.scenario)
    validate_job(job)
    if sweep:
        runs = sweep_runs(scenario, job, sweep)
        reports = run_many([(s, j) for _, s, j in runs], jobs=args.jobs)
        out = {
            "format_version": FORMAT_VERSION,
            "scenario": scenario.name,
            "seed": scenario.seed,
            "sweep": [{"overrides": o, "report": r} for (o, _, _), r in zip(runs, reports)],
        }
        _write(dumps(out), args.output)
        return EXIT_OK
    report = run_job(scenario, job)
    _write(dumps(report.to_dict()), args.output)
    if args.events:
        with open(args.events, "w") as fh:
            for e in report.manager.events:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
    if args.output not in (None, "-"):
        print(_approval_table(report), file=sys.stderr)
    return EXIT_OK


def _approval_table(report) -> str:
    rows = report.to_dict()["workers"]
    lines = [f"{'worker':<8} {'kind':<12} {'approved':>8} {'rejected':>8} {'rate':>6}"]
    for w in rows:
        rate = "-" if w["approval_rate"] is None else f"{w['approval_rate']:.2f}"
        lines.append(f"{w['worker_id']:<8} {w['kind']:<12} {w['approved']:>8} {w['rejected']:>8} {rate:>6}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    fused_cat, fused = decode_element_sets(loads(_read(args.fused), args.fused), args.fused)
    ref_cat, reference = decode_element_sets(loads(_read(args.reference), args.reference), args.reference)
    if fused_cat is not ref_cat:
        raise CategoryMismatch(f"fused file is {fused_cat.value}, reference is {ref_cat.value}")
    if not 0.0 < args.iou < 1.0:
        raise SchemaError(f"--iou must lie in (0, 1), got {args.iou}")
    by_task = dict(fused)
    pairs = [(by_task.get(tid, []), elems) for tid, elems in reference]
    missing = sorted(set(by_task) - {tid for tid, _ in reference})
    out: dict = {"category": ref_cat.value, "tasks": len(reference), "unreferenced_tasks": missing}

    if ref_cat is Category.COUNTING:
        if args.ap:
            raise CategoryMismatch("--ap applies to spatial categories only")
        errors = [abs(f[0].value - r[0].value) for f, r in pairs if f and r]
        out["scored"] = len(errors)
        out["mean_abs_error"] = sum(errors) / len(errors) if errors else None
        print(dumps(out), end="")
        return EXIT_OK
    if args.ap and not ref_cat.is_spatial:
        raise CategoryMismatch("--ap applies to spatial categories only")

    reports = [match_pr(f, r, args.iou) for f, r in pairs]
    merged = merge_reports(reports)
    out.update(
        iou_threshold=args.iou,
        n_fused=merged.n_fused,
        n_reference=merged.n_reference,
        n_matched=merged.n_matched,
        match_precision=merged.match_precision,
        match_recall=merged.match_recall,
        per_task=[
            {"task_id": tid, "match_precision": r.match_precision, "match_recall": r.match_recall}
            for (tid, _), r in zip(reference, reports)
        ],
    )
    if ref_cat.is_classification:
        out["confusion"] = merged.confusion
    if args.ap:
        out["average_precision"] = average_precision_tasks(pairs)
    print(dumps(out), end="")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdfuse", description="Consensus fusion and simulation for crowdsourced vision groundtruth."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse an annotation file into consensus groundtruth")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-task fusion")
    for name, kind in _PARAM_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("simulate", help="run a scenario file (or a bundled scenario name)")
    p.add_argument("scenario")
    p.add_argument("-o", "--output")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for parameter sweeps")
    p.add_argument("--events", help="write the event log as JSON lines")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score fused output against a reference")
    p.add_argument("fused")
    p.add_argument("reference")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--ap", action="store_true", help="also report average precision over IoU 0.5..0.95")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (CategoryMismatch, JobValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
