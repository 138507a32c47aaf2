"""Command-line surface: optimize, explain, evaluate, validate, report.

Exit codes are a stable contract: 0 success, 2 configuration or validation
problems, 3 runtime aborts.  Diagnostics go to stderr; data goes to stdout
or to files under the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .attribution import compute_attribution, normalize_map
from .metrics import (
    FIDELITY_METRICS,
    PLAUSIBILITY_METRICS,
    aopc_comprehensiveness,
    aopc_sufficiency,
    auprc_score,
    average_precision_score,
    token_f1_score,
    token_iou_score,
)
from .models import CapabilityError
from .report import build_report, render_report
from .searchspace import ConfigError, ModelBinding, SamplerConfig, StudySpec, default_method_space, parse_config
from .study import StudyAbort, bind_model, read_journal, run_study
from .textdata import DataValidationError, load_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3

_PLAUSIBILITY_FNS = {
    "auprc": auprc_score,
    "average_precision": average_precision_score,
    "token_f1": token_f1_score,
    "token_iou": token_iou_score,
}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _default_spec(model_path: str = "reference") -> StudySpec:
    return StudySpec(model=ModelBinding(raw=model_path), methods=(default_method_space("Occlusion"),))


def _load_spec(args, require_config: bool = True) -> StudySpec:
    if args.config is None:
        if require_config:
            raise ConfigError("--config is required")
        return _default_spec()
    spec = parse_config(Path(args.config))
    if getattr(args, "dataset", None):
        spec = replace(spec, dataset_path=str(args.dataset))
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, sampler=replace(spec.sampler, seed=int(args.seed)))
    if getattr(args, "workers", None) is not None:
        spec = replace(spec, workers=int(args.workers))
    return spec


def cmd_optimize(args) -> int:
    spec = _load_spec(args)
    if spec.dataset_path is None:
        raise ConfigError("no dataset: give dataset_path in the config or --dataset")
    dataset = load_dataset(spec.dataset_path)
    _log(f"optimize: {len(dataset)} pairs, sampler={spec.sampler.name}, seed={spec.sampler.seed}")
    report = run_study(spec, dataset, out_dir=args.out, resume=args.resume, workers=spec.workers)
    _log(f"best method: {report.best_method} (trial {report.best_trial}, found at {report.best_find_at})")
    print(render_report(report, args.format if args.format != "structured" else "structured"), end="")
    return EXIT_OK


def _parse_params(items) -> dict:
    params = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        params[key] = yaml.safe_load(raw)
    return params


def cmd_explain(args) -> int:
    spec = _load_spec(args, require_config=False)
    model = bind_model(spec)
    post = model.tokenize(args.post)
    claim = model.tokenize(args.claim)
    rng = np.random.default_rng(args.seed if args.seed is not None else spec.sampler.seed)
    amap = compute_attribution(model, post, claim, args.method, _parse_params(args.param), rng)
    if args.normalization != "without_normalize":
        amap = normalize_map(amap, args.normalization)
    similarity = model.similarity(post, claim)
    if args.format == "structured":
        print(json.dumps(
            {
                "method": args.method,
                "similarity": similarity,
                "post_tokens": list(post.tokens),
                "post_scores": amap.post_scores.tolist(),
                "claim_tokens": list(claim.tokens),
                "claim_scores": amap.claim_scores.tolist(),
            },
            indent=2,
        ))
    else:
        print(f"similarity: {similarity:.6f}")
        for side, text, scores in (("post", post, amap.post_scores), ("claim", claim, amap.claim_scores)):
            print(f"[{side}]")
            for token, score in zip(text.tokens, scores):
                print(f"  {score:+.6f}  {token}")
    return EXIT_OK


def _load_attributions(path) -> dict:
    maps = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                maps[str(doc["id"])] = (doc["post_scores"], doc["claim_scores"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataValidationError(f"attributions line {lineno}: {exc}") from exc
    return maps


def cmd_evaluate(args) -> int:
    from .attribution import AttributionMap

    spec = _load_spec(args, require_config=False)
    selected = args.metrics.split(",") if args.metrics else list(PLAUSIBILITY_METRICS + FIDELITY_METRICS)
    unknown = set(selected) - set(PLAUSIBILITY_METRICS) - set(FIDELITY_METRICS)
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}")
    dataset = load_dataset(args.dataset)
    maps = _load_attributions(args.attributions)
    need_model = any(m in FIDELITY_METRICS for m in selected)
    model = bind_model(spec) if need_model else None

    rows = []
    for pair in dataset:
        if pair.id not in maps:
            _log(f"warning: no attribution for instance {pair.id}; skipped")
            continue
        post_scores, claim_scores = maps[pair.id]
        if len(post_scores) != len(pair.post) or len(claim_scores) != len(pair.claim):
            _log(f"warning: {pair.id}: attribution lengths do not match token counts; skipped")
            continue
        amap = AttributionMap(post_scores, claim_scores, method="external")
        row = {"id": pair.id}
        for name in selected:
            if name == "aopc_comprehensiveness":
                row[name] = aopc_comprehensiveness(model, pair, amap).value
            elif name == "aopc_sufficiency":
                row[name] = aopc_sufficiency(model, pair, amap).value
            else:
                fn = _PLAUSIBILITY_FNS[name]
                values = [
                    fn(np.asarray(post_scores), np.asarray(pair.post_gold.bits)),
                    fn(np.asarray(claim_scores), np.asarray(pair.claim_gold.bits)),
                ]
                present = [v for v in values if v is not None]
                row[name] = sum(present) / len(present) if present else None
        rows.append(row)
    if not rows:
        raise StudyAbort("no instances could be evaluated")

    aggregate_row = {"id": "AGGREGATE"}
    for name in selected:
        values = [r[name] for r in rows if r[name] is not None]
        aggregate_row[name] = sum(values) / len(values) if values else None
    if args.format == "structured":
        print(json.dumps({"instances": rows, "aggregate": aggregate_row}, indent=2))
    else:
        header = ["id", *selected]
        print("\t".join(header))
        for row in rows + [aggregate_row]:
            print("\t".join(_fmt(row[h]) for h in header))
    return EXIT_OK


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return "-" if v is None else str(v)


def cmd_validate(args) -> int:
    dataset = load_dataset(args.dataset)
    _log(f"{args.dataset}: {len(dataset)} valid pairs")
    return EXIT_OK


def cmd_report(args) -> int:
    spec = _load_spec(args)
    _, records = read_journal(args.journal)
    report = build_report(records, spec)
    print(render_report(report, args.format), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xaiopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, out=False):
        p.add_argument("--config", type=Path, default=None, help="study config (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if dataset:
            p.add_argument("--dataset", type=Path, help="dataset JSONL path")
        if out:
            p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("optimize", help="run a study")
    common(p, dataset=True, out=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue an interrupted study")
    p.add_argument("--format", choices=["markdown", "structured"], default="markdown")
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("explain", help="explain a single post/claim pair")
    common(p)
    p.add_argument("--method", required=True)
    p.add_argument("--post", required=True)
    p.add_argument("--claim", required=True)
    p.add_argument("--param", action="append", help="method parameter key=value", default=[])
    p.add_argument("--normalization", default="without_normalize")
    p.add_argument("--format", choices=["text", "structured"], default="text")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("evaluate", help="score precomputed attribution maps")
    common(p, dataset=True)
    p.add_argument("--attributions", type=Path, required=True, help="JSONL of {id, post_scores, claim_scores}")
    p.add_argument("--metrics", default=None, help="comma-separated metric names")
    p.add_argument("--format", choices=["text", "structured"], default="text")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("validate", help="validate a dataset file")
    p.add_argument("--dataset", type=Path, required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("report", help="re-render a report from a journal")
    common(p)
    p.add_argument("--journal", type=Path, required=True)
    p.add_argument("--format", choices=["markdown", "structured"], default="markdown")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataValidationError, CapabilityError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    except StudyAbort as exc:
        _log(f"study aborted: {exc}")
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
