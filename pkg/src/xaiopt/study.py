"""The optimization loop: ask, evaluate, prune, deduplicate, journal, rank.

The journal is an append-only JSONL file written before every next ask, so a
killed study resumes by replaying asks and tells against a fresh sampler;
replay restores the generator state, making resumed and uninterrupted runs
identical except for timing fields.
"""

from __future__ import annotations

import json
import time
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path
from statistics import median

import numpy as np

from .attribution import compute_attribution, normalize_map
from .encoder import ReferenceEncoder
from .metrics import InstanceScores, combine_objective, score_instance
from .models import TransportError
from .report import StudyReport, build_report, render_report
from .searchspace import StudySpec, TrialConfig, _canon_value, serialize_config
from .samplers import Exhausted, Sampler, make_sampler

__all__ = [
    "TrialRecord",
    "StudyAbort",
    "bind_model",
    "instance_rng",
    "evaluate_trial",
    "prune_decision",
    "detect_duplicate",
    "best_trial",
    "run_study",
    "read_journal",
    "JOURNAL_SCHEMA",
    "TIMING_FIELDS",
]

JOURNAL_SCHEMA = "xaiopt-journal"
TIMING_FIELDS = ("wall_time_s", "peak_mem_bytes")
CONSECUTIVE_FAILURE_LIMIT = 3


class StudyAbort(RuntimeError):
    """The study cannot continue (repeated failures, corrupt journal, ...)."""


@dataclass(frozen=True)
class TrialRecord:
    """One journaled trial."""

    index: int
    config: TrialConfig
    status: str  # complete | pruned | failed | duplicate
    objectives: tuple[float, ...] | None
    metrics: dict | None
    wall_time_s: float
    peak_mem_bytes: int | None = None
    duplicate_of: int | None = None
    partial_objectives: tuple[float, ...] | None = None  # pruned trials only
    curve: tuple[float, ...] | None = None  # running objective per batch
    error: str | None = None

    def __post_init__(self):
        if self.status == "complete" and self.objectives is None:
            raise ValueError("complete trials must carry objectives")
        if self.status == "duplicate" and self.duplicate_of is None:
            raise ValueError("duplicate trials must carry duplicate_of")


def bind_model(spec: StudySpec):
    """Resolve the study's model binding to a live model object."""
    binding = spec.model
    if binding.kind == "reference":
        overrides = dict(binding.reference_overrides)
        if ":" in binding.raw:
            overrides.setdefault("seed", int(binding.raw.split(":", 1)[1]))
        return ReferenceEncoder(
            vocab_buckets=int(overrides.get("vocab_buckets", 4096)),
            dim=int(overrides.get("dim", 64)),
            layers=int(overrides.get("layers", 2)),
            heads=int(overrides.get("heads", 2)),
            seed=int(overrides.get("seed", 1000)),
        )
    if binding.kind == "remote":
        from .models import RemoteModel

        return RemoteModel(binding.raw)
    raise StudyAbort(
        f"model binding {binding.raw!r} is neither the reference encoder nor a remote URL; "
        "bind 'reference' or an http(s) endpoint"
    )


def instance_rng(study_seed: int, trial_index: int, instance_id: str) -> np.random.Generator:
    """Per-invocation RNG stream; parallel evaluation order cannot change it."""
    key = zlib.crc32(instance_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([study_seed, trial_index, key]))


def prune_decision(running_mean: float, peer_values: list[float], min_peers: int = 4) -> bool:
    """True (prune) iff the running mean is strictly below the peer median."""
    if len(peer_values) < min_peers:
        return False
    return running_mean < median(peer_values)


def detect_duplicate(config: TrialConfig, records: list[TrialRecord]) -> int | None:
    """Index of the earliest scored record with the identical configuration."""
    key = config.canonical_key()
    for r in records:
        if r.objectives is not None and r.status in ("complete", "duplicate") and r.config.canonical_key() == key:
            return r.index
    return None


class TrialFailure(RuntimeError):
    pass


def _objectives_from_aggregates(fidelity: float, plausibility: float, spec: StudySpec) -> tuple[float, ...]:
    if spec.multi_objective:
        return (fidelity, plausibility)
    return (combine_objective(fidelity, plausibility, spec.w_f, spec.w_p),)


def evaluate_trial(
    config: TrialConfig,
    model,
    dataset,
    spec: StudySpec,
    trial_index: int = 0,
    peer_curves: list[tuple[float, ...]] | None = None,
    workers: int | None = None,
):
    """Attribute, normalize, regroup and score every instance of the dataset.

    Returns ``(objectives, metric_aggregates, curve)`` or ``(None, None,
    partial_curve)`` when the trial is pruned.  Individual instance failures
    are skipped with a warning; more than half skipped fails the trial.
    """
    n = len(dataset)
    batch_size = max(1, n // 5)
    scored: list[InstanceScores] = []
    skipped = 0
    curve: list[float] = []

    def eval_instance(pair):
        rng = instance_rng(spec.sampler.seed, trial_index, pair.id)
        amap = compute_attribution(model, pair.post, pair.claim, config.method, config.params, rng)
        amap = normalize_map(amap, config.normalization)
        return score_instance(model, pair, amap, spec.aopc_bins, config.granularity)

    pool = ThreadPoolExecutor(max_workers=workers) if workers and workers > 1 else None
    try:
        for start in range(0, n, batch_size):
            batch = dataset[start : start + batch_size]
            runner = pool.map(_safe, [eval_instance] * len(batch), batch) if pool else map(_safe, [eval_instance] * len(batch), batch)
            for pair, outcome in zip(batch, runner):
                if isinstance(outcome, TransportError):
                    raise TrialFailure(f"model unreachable while scoring {pair.id}: {outcome}")
                if isinstance(outcome, Exception):
                    warnings.warn(f"instance {pair.id} skipped: {outcome}", stacklevel=2)
                    skipped += 1
                    continue
                scored.append(outcome)
            if skipped > n / 2:
                raise TrialFailure(f"{skipped}/{n} instances failed")
            if scored:
                fid = [s.fidelity for s in scored if s.fidelity is not None]
                plaus = [s.plausibility for s in scored if s.plausibility is not None]
                if fid and plaus:
                    running = combine_objective(
                        float(np.mean(fid)), float(np.mean(plaus)), spec.w_f, spec.w_p
                    )
                    batch_index = len(curve)
                    curve.append(running)
                    if spec.pruning.enabled and peer_curves is not None and start + batch_size < n:
                        peers = [c[batch_index] for c in peer_curves if len(c) > batch_index]
                        if prune_decision(running, peers, spec.pruning.min_peers):
                            return None, None, tuple(curve)
    finally:
        if pool:
            pool.shutdown(wait=True)

    if not scored:
        raise TrialFailure("every instance was skipped")
    fid = [s.fidelity for s in scored if s.fidelity is not None]
    plaus = [s.plausibility for s in scored if s.plausibility is not None]
    if not fid or not plaus:
        raise TrialFailure("a weighted metric category was skipped on every instance")
    fidelity = float(np.mean(fid))
    plausibility = float(np.mean(plaus))
    aggregates = {"fidelity": fidelity, "plausibility": plausibility}
    for name in ("aopc_comprehensiveness", "aopc_sufficiency", "auprc", "average_precision", "token_f1", "token_iou"):
        values = [m.value for s in scored for m in s.per_metric if m.name == name and m.value is not None]
        aggregates[name] = float(np.mean(values)) if values else None
    return _objectives_from_aggregates(fidelity, plausibility, spec), aggregates, tuple(curve)


def _safe(fn, pair):
    try:
        return fn(pair)
    except Exception as exc:  # outcome routed through the caller
        return exc


def best_trial(records: list[TrialRecord], multi_objective: bool, w_f: float, w_p: float) -> int:
    """Winning trial index; pruned and failed trials never win."""
    from .samplers import nondominated_sort

    scored = [r for r in records if r.objectives is not None and r.status in ("complete", "duplicate")]
    if not scored:
        raise StudyAbort("no complete trials")
    if not multi_objective:
        return min(scored, key=lambda r: (-r.objectives[0], r.index)).index
    fronts = nondominated_sort([r.objectives for r in scored])
    front = [scored[i] for i in fronts[0]]
    return min(
        front,
        key=lambda r: (-combine_objective(r.objectives[0], r.objectives[1], w_f, w_p), r.index),
    ).index


# ----------------------------------------------------------------- journal

def _config_to_doc(config: TrialConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return {
        "method": config.method,
        "params": {k: plain(v) for k, v in config.params.items()},
        "normalization": config.normalization,
        "granularity": config.granularity,
    }


def _config_from_doc(doc: dict) -> TrialConfig:
    return TrialConfig(
        method=doc["method"],
        params={k: _canon_value(v) for k, v in doc["params"].items()},
        normalization=doc["normalization"],
        granularity=doc["granularity"],
    )


def _record_to_line(record: TrialRecord) -> str:
    doc = {
        "index": record.index,
        "status": record.status,
        "config": _config_to_doc(record.config),
        "objectives": list(record.objectives) if record.objectives is not None else None,
        "metrics": record.metrics,
        "duplicate_of": record.duplicate_of,
        "partial_objectives": list(record.partial_objectives) if record.partial_objectives else None,
        "curve": list(record.curve) if record.curve is not None else None,
        "error": record.error,
        "wall_time_s": record.wall_time_s,
        "peak_mem_bytes": record.peak_mem_bytes,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _record_from_line(line: str) -> TrialRecord:
    doc = json.loads(line)
    return TrialRecord(
        index=doc["index"],
        config=_config_from_doc(doc["config"]),
        status=doc["status"],
        objectives=tuple(doc["objectives"]) if doc["objectives"] is not None else None,
        metrics=doc["metrics"],
        wall_time_s=doc["wall_time_s"],
        peak_mem_bytes=doc["peak_mem_bytes"],
        duplicate_of=doc["duplicate_of"],
        partial_objectives=tuple(doc["partial_objectives"]) if doc.get("partial_objectives") else None,
        curve=tuple(doc["curve"]) if doc.get("curve") is not None else None,
        error=doc.get("error"),
    )


def spec_fingerprint(spec: StudySpec) -> str:
    return sha256(serialize_config(spec).encode("utf-8")).hexdigest()[:16]


def read_journal(path) -> tuple[dict, list[TrialRecord]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise StudyAbort(f"journal {path} is empty")
    header = json.loads(lines[0])
    if header.get("schema") != JOURNAL_SCHEMA:
        raise StudyAbort(f"{path} is not a study journal")
    return header, [_record_from_line(line) for line in lines[1:] if line.strip()]


def _peak_mem_bytes() -> int | None:
    try:
        import resource

        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return int(peak) * 1024  # ru_maxrss is KiB on Linux
    except Exception:  # pragma: no cover - platform without rusage
        return None


def _replay(sampler: Sampler, records: list[TrialRecord]) -> None:
    """Re-run asks and tells so generator state matches the original run."""
    for record in records:
        asked = sampler.ask()
        if asked.canonical_key() != record.config.canonical_key():
            raise StudyAbort(
                f"journal replay diverged at trial {record.index}; the journal was "
                "written under a different spec or seed"
            )
        objectives = record.objectives if record.objectives is not None else record.partial_objectives
        sampler.tell(
            record.config,
            objectives,
            pruned=record.status == "pruned",
            failed=record.status == "failed",
        )


def run_study(
    spec: StudySpec,
    dataset,
    out_dir=None,
    resume: bool = False,
    workers: int | None = None,
    model=None,
) -> StudyReport:
    """Drive the sampler for ``n_trials`` asks (or until brute-force exhausts).

    Every trial is journaled before the next ask.  With ``resume=True`` an
    existing journal is replayed and the study continues from the recorded
    trial count; otherwise any existing journal is started fresh.
    """
    if not dataset:
        raise StudyAbort("dataset is empty")
    model = model if model is not None else bind_model(spec)
    sampler = make_sampler(spec)
    workers = workers if workers is not None else spec.workers

    out_path = Path(out_dir) if out_dir is not None else None
    journal_path = out_path / "journal.jsonl" if out_path else None
    records: list[TrialRecord] = []
    if journal_path:
        out_path.mkdir(parents=True, exist_ok=True)
        if resume and journal_path.exists():
            header, records = read_journal(journal_path)
            if header.get("spec_fingerprint") != spec_fingerprint(spec):
                raise StudyAbort("cannot resume: journal belongs to a different study spec")
            _replay(sampler, records)
        else:
            header = {
                "schema": JOURNAL_SCHEMA,
                "version": 1,
                "sampler": spec.sampler.name,
                "seed": spec.sampler.seed,
                "n_trials": spec.sampler.n_trials,
                "multi_objective": spec.multi_objective,
                "spec_fingerprint": spec_fingerprint(spec),
            }
            journal_path.write_text(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")

    peer_curves = [r.curve for r in records if r.status == "complete" and r.curve]
    consecutive_failures = 0

    for index in range(len(records), spec.sampler.n_trials):
        try:
            config = sampler.ask()
        except Exhausted:
            break
        started = time.perf_counter()
        original = detect_duplicate(config, records)
        if original is not None:
            source = next(r for r in records if r.index == original)
            record = TrialRecord(
                index=index,
                config=config,
                status="duplicate",
                objectives=source.objectives,
                metrics=source.metrics,
                wall_time_s=time.perf_counter() - started,
                peak_mem_bytes=_peak_mem_bytes(),
                duplicate_of=original,
            )
            sampler.tell(config, source.objectives)
            consecutive_failures = 0
        else:
            try:
                objectives, aggregates, curve = evaluate_trial(
                    config, model, dataset, spec,
                    trial_index=index, peer_curves=peer_curves, workers=workers,
                )
                if objectives is None:
                    partial = _partial_objectives(curve, spec)
                    record = TrialRecord(
                        index=index,
                        config=config,
                        status="pruned",
                        objectives=None,
                        metrics=None,
                        wall_time_s=time.perf_counter() - started,
                        peak_mem_bytes=_peak_mem_bytes(),
                        partial_objectives=partial,
                        curve=curve,
                    )
                    sampler.tell(config, partial, pruned=True)
                else:
                    record = TrialRecord(
                        index=index,
                        config=config,
                        status="complete",
                        objectives=objectives,
                        metrics=aggregates,
                        wall_time_s=time.perf_counter() - started,
                        peak_mem_bytes=_peak_mem_bytes(),
                        curve=curve,
                    )
                    sampler.tell(config, objectives)
                    peer_curves.append(curve)
                consecutive_failures = 0
            except TrialFailure as exc:
                record = TrialRecord(
                    index=index,
                    config=config,
                    status="failed",
                    objectives=None,
                    metrics=None,
                    wall_time_s=time.perf_counter() - started,
                    peak_mem_bytes=_peak_mem_bytes(),
                    error=str(exc),
                )
                sampler.tell(config, None, failed=True)
                consecutive_failures += 1
        records.append(record)
        if journal_path:
            with journal_path.open("a", encoding="utf-8") as fh:
                fh.write(_record_to_line(record) + "\n")
        if consecutive_failures >= CONSECUTIVE_FAILURE_LIMIT:
            raise StudyAbort(f"{consecutive_failures} consecutive trial failures; aborting study")

    report = build_report(records, spec)
    if out_path:
        (out_path / "report.md").write_text(render_report(report, "markdown"), encoding="utf-8")
        (out_path / "report.json").write_text(render_report(report, "structured"), encoding="utf-8")
    return report


def _partial_objectives(curve, spec: StudySpec) -> tuple[float, ...]:
    # The pruning curve tracks the weighted overall; for multi-objective
    # studies the partial tell repeats it per objective as a coarse stand-in.
    last = curve[-1] if curve else 0.0
    return (last, last) if spec.multi_objective else (last,)
