"""Study reports: ranked method comparison plus sampler bookkeeping.

Markdown output reproduces the comparison-table layout (Faithfulness /
Plausibility / Average columns) and a sampler-statistics block with
``all_trials``, ``best_find_at``, ``number_dup``, wall time and peak memory;
the structured form is JSON that round-trips through :func:`parse_report`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .metrics import combine_objective
from .samplers import nondominated_sort
from .searchspace import TrialConfig, _canon_value

__all__ = ["MethodRow", "StudyReport", "build_report", "render_report", "parse_report"]

REPORT_SCHEMA = "xaiopt-report"


@dataclass(frozen=True)
class MethodRow:
    method: str
    faithfulness: float
    plausibility: float
    average: float
    trial: int


@dataclass(frozen=True)
class StudyReport:
    sampler: str
    seed: int
    multi_objective: bool
    w_f: float
    w_p: float
    best_trial: int
    best_find_at: int
    best_method: str
    best_config: TrialConfig
    method_rows: tuple[MethodRow, ...]
    all_trials: int
    number_dup: int
    wall_time_s: float
    peak_memory_mb: float | None = None
    pareto_front: tuple[tuple[int, float, float], ...] = field(default_factory=tuple)


def _scoreable(records):
    return [r for r in records if r.status in ("complete", "duplicate") and r.objectives is not None]


def build_report(records, spec) -> StudyReport:
    """Assemble the report from journaled trial records."""
    from .study import best_trial as pick_best  # late import: study depends on report

    scored = _scoreable(records)
    if not scored:
        raise ValueError("no complete trials; nothing to report")
    best_idx = pick_best(records, spec.multi_objective, spec.w_f, spec.w_p)
    best = next(r for r in records if r.index == best_idx)
    best_find_at = min(r.index for r in scored if r.objectives == best.objectives)

    rows = {}
    for r in scored:
        f = r.metrics["fidelity"]
        p = r.metrics["plausibility"]
        avg = combine_objective(f, p, spec.w_f, spec.w_p)
        current = rows.get(r.config.method)
        if current is None or avg > current.average:
            rows[r.config.method] = MethodRow(r.config.method, f, p, avg, r.index)
    method_rows = tuple(sorted(rows.values(), key=lambda row: (-row.average, row.trial)))

    pareto: tuple = ()
    if spec.multi_objective:
        fronts = nondominated_sort([r.objectives for r in scored])
        assert fronts and fronts[0], "nonempty front is guaranteed with >= 1 complete trial"
        pareto = tuple(
            sorted((scored[i].index, *scored[i].objectives) for i in fronts[0])
        )

    peaks = [r.peak_mem_bytes for r in records if r.peak_mem_bytes is not None]
    return StudyReport(
        sampler=spec.sampler.name,
        seed=spec.sampler.seed,
        multi_objective=spec.multi_objective,
        w_f=spec.w_f,
        w_p=spec.w_p,
        best_trial=best_idx,
        best_find_at=best_find_at,
        best_method=best.config.method,
        best_config=best.config,
        method_rows=method_rows,
        all_trials=len(records),
        number_dup=sum(1 for r in records if r.status == "duplicate"),
        wall_time_s=float(sum(r.wall_time_s for r in records)),
        peak_memory_mb=max(peaks) / 1e6 if peaks else None,
        pareto_front=pareto,
    )


def render_report(report: StudyReport, format: str = "markdown") -> str:
    if format == "structured":
        return _render_structured(report)
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")
    lines = ["# Study report", "", "## Method comparison", ""]
    lines.append("| Methods | Faithfulness | Plausibility | Average |")
    lines.append("| --- | --- | --- | --- |")
    for row in report.method_rows:
        lines.append(
            f"| {row.method} | {row.faithfulness:.3f} | {row.plausibility:.3f} | {row.average:.3f} |"
        )
    lines += ["", "## Sampler statistics", ""]
    stats = [
        ("sampler", report.sampler),
        ("all_trials", report.all_trials),
        ("best_method", report.best_method),
        ("best_trial", report.best_trial),
        ("best_find_at", report.best_find_at),
        ("number_dup", report.number_dup),
        ("time_hours", f"{report.wall_time_s / 3600:.4f}"),
    ]
    if report.peak_memory_mb is not None:
        stats.append(("peak_memory_mb", f"{report.peak_memory_mb:.2f}"))
    lines += [f"- {key}: {value}" for key, value in stats]
    if report.multi_objective:
        lines += ["", "## Pareto front", "", "| Trial | Faithfulness | Plausibility |", "| --- | --- | --- |"]
        for index, f, p in report.pareto_front:
            lines.append(f"| {index} | {f:.3f} | {p:.3f} |")
    return "\n".join(lines) + "\n"


def _render_structured(report: StudyReport) -> str:
    doc = {
        "schema": REPORT_SCHEMA,
        "version": 1,
        "weights": {"faithfulness": report.w_f, "plausibility": report.w_p},
        "multi_objective": report.multi_objective,
        "methods": [
            {
                "method": row.method,
                "Faithfulness": row.faithfulness,
                "Plausibility": row.plausibility,
                "Average": row.average,
                "trial": row.trial,
            }
            for row in report.method_rows
        ],
        "sampler_statistics": {
            "sampler": report.sampler,
            "seed": report.seed,
            "all_trials": report.all_trials,
            "best_method": report.best_method,
            "best_trial": report.best_trial,
            "best_find_at": report.best_find_at,
            "number_dup": report.number_dup,
            "time_hours": report.wall_time_s / 3600,
            "peak_memory_mb": report.peak_memory_mb,
        },
        "best_config": asdict(report.best_config),
        "pareto_front": [list(entry) for entry in report.pareto_front],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def parse_report(text: str) -> StudyReport:
    """Inverse of the structured rendering."""
    doc = json.loads(text)
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValueError("not a structured study report")
    stats = doc["sampler_statistics"]
    cfg = doc["best_config"]
    best_config = TrialConfig(
        method=cfg["method"],
        params={k: _canon_value(v) for k, v in cfg["params"].items()},
        normalization=cfg["normalization"],
        granularity=cfg["granularity"],
    )
    return StudyReport(
        sampler=stats["sampler"],
        seed=stats["seed"],
        multi_objective=doc["multi_objective"],
        w_f=doc["weights"]["faithfulness"],
        w_p=doc["weights"]["plausibility"],
        best_trial=stats["best_trial"],
        best_find_at=stats["best_find_at"],
        best_method=stats["best_method"],
        best_config=best_config,
        method_rows=tuple(
            MethodRow(m["method"], m["Faithfulness"], m["Plausibility"], m["Average"], m["trial"])
            for m in doc["methods"]
        ),
        all_trials=stats["all_trials"],
        number_dup=stats["number_dup"],
        wall_time_s=stats["time_hours"] * 3600,
        peak_memory_mb=stats["peak_memory_mb"],
        pareto_front=tuple(tuple(entry) for entry in doc["pareto_front"]),
    )
