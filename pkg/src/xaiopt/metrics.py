"""Fidelity and plausibility scoring of attribution maps.

All six metrics report values in [0, 1] and are higher-is-better after
direction alignment (sufficiency is reported as 1 - raw).  Gold-all-zero
instances yield skip markers (value ``None``) per metric instead of failing
the study.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .attribution import AttributionMap
from .textdata import PairInstance, TokenizedText, group_indices

__all__ = [
    "DEFAULT_AOPC_BINS",
    "MetricResult",
    "InstanceScores",
    "StudyError",
    "auprc_score",
    "average_precision_score",
    "token_f1_score",
    "token_iou_score",
    "auprc",
    "average_precision",
    "token_f1",
    "token_iou",
    "aopc_comprehensiveness",
    "aopc_sufficiency",
    "score_instance",
    "aggregate",
    "combine_objective",
    "PLAUSIBILITY_METRICS",
    "FIDELITY_METRICS",
]

DEFAULT_AOPC_BINS = (0.01, 0.05, 0.10, 0.20, 0.50)
FIDELITY_METRICS = ("aopc_comprehensiveness", "aopc_sufficiency")
PLAUSIBILITY_METRICS = ("auprc", "average_precision", "token_f1", "token_iou")


class StudyError(RuntimeError):
    """Aggregation has nothing to aggregate."""


@dataclass(frozen=True)
class MetricResult:
    """One metric outcome; ``value=None`` marks a skipped (undefined) case."""

    name: str
    value: float | None
    side: str = "both"


@dataclass(frozen=True)
class InstanceScores:
    """Per-instance category scores plus the individual metric results."""

    fidelity: float | None
    plausibility: float | None
    per_metric: tuple[MetricResult, ...]


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def _top_k_indices(scores: np.ndarray, k: int) -> list[int]:
    # Ties break toward the lower index for cross-platform determinism.
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order[:k]


def _pr_points(scores: np.ndarray, gold: np.ndarray):
    """(recall, precision) per distinct threshold, highest threshold first."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    total_pos = int(gold.sum())
    points = []
    tp = 0
    taken = 0
    idx = 0
    while idx < len(order):
        threshold = scores[order[idx]]
        while idx < len(order) and scores[order[idx]] == threshold:
            tp += int(gold[order[idx]])
            taken += 1
            idx += 1
        points.append((tp / total_pos, tp / taken))
    return points


def auprc_score(scores, gold) -> float | None:
    """Area under the precision-recall curve (trapezoidal over thresholds)."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold)
    if gold.sum() == 0:
        return None
    points = [(0.0, 1.0)] + _pr_points(scores, gold)
    area = 0.0
    for (r0, p0), (r1, p1) in zip(points, points[1:]):
        area += (r1 - r0) * (p1 + p0) / 2.0
    return float(area)


def average_precision_score(scores, gold) -> float | None:
    """Step-sum AP over descending-score prefixes."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold)
    if gold.sum() == 0:
        return None
    points = _pr_points(scores, gold)
    ap = 0.0
    prev_recall = 0.0
    for recall, precision in points:
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def _binarize(scores: np.ndarray, gold: np.ndarray) -> tuple[set[int], set[int]] | None:
    k = int(gold.sum())
    if k == 0:
        return None
    predicted = set(_top_k_indices(scores, k))
    actual = {i for i, bit in enumerate(gold) if bit}
    return predicted, actual


def token_f1_score(scores, gold) -> float | None:
    """F1 of the top-k tokens (k = gold count) against the gold set.

    Predicted and gold sets have equal size, so precision equals recall.
    """
    sets = _binarize(np.asarray(scores, dtype=np.float64), np.asarray(gold))
    if sets is None:
        return None
    predicted, actual = sets
    hit = len(predicted & actual)
    if hit == 0:
        return 0.0
    p = hit / len(predicted)
    r = hit / len(actual)
    return 2 * p * r / (p + r)


def token_iou_score(scores, gold) -> float | None:
    sets = _binarize(np.asarray(scores, dtype=np.float64), np.asarray(gold))
    if sets is None:
        return None
    predicted, actual = sets
    return len(predicted & actual) / len(predicted | actual)


def _two_sided(name: str, fn, amap: AttributionMap, post_gold, claim_gold) -> list[MetricResult]:
    values = {
        "post": fn(amap.post_scores, post_gold),
        "claim": fn(amap.claim_scores, claim_gold),
    }
    results = [MetricResult(name, values["post"], "post"), MetricResult(name, values["claim"], "claim")]
    present = [v for v in values.values() if v is not None]
    if not present:
        warnings.warn(f"{name}: gold rationale empty on both sides; metric skipped", stacklevel=3)
    both = sum(present) / len(present) if present else None
    results.append(MetricResult(name, both, "both"))
    return results


def auprc(amap, post_gold, claim_gold) -> MetricResult:
    return _two_sided("auprc", auprc_score, amap, post_gold, claim_gold)[-1]


def average_precision(amap, post_gold, claim_gold) -> MetricResult:
    return _two_sided("average_precision", average_precision_score, amap, post_gold, claim_gold)[-1]


def token_f1(amap, post_gold, claim_gold) -> MetricResult:
    return _two_sided("token_f1", token_f1_score, amap, post_gold, claim_gold)[-1]


def token_iou(amap, post_gold, claim_gold) -> MetricResult:
    return _two_sided("token_iou", token_iou_score, amap, post_gold, claim_gold)[-1]


def _bin_size(frac: float, n_units: int) -> int:
    return max(1, int(np.floor(frac * n_units + 0.5)))  # half-up rounding


def _deletion_terms(model, post: TokenizedText, claim: TokenizedText, side: str,
                    scores: np.ndarray, bins, granularity: str, keep: bool) -> list[float]:
    text = post if side == "post" else claim
    units = group_indices(text, granularity)
    unit_scores = np.array([scores[u].mean() for u in units])
    order = _top_k_indices(unit_scores, len(units))
    base = (model.similarity(post, claim) + 1.0) / 2.0
    variants = []
    for frac in bins:
        k = _bin_size(frac, len(units))
        selected = {t for u in order[:k] for t in units[u]}
        tokens = sorted(set(range(len(text))) - selected) if keep else sorted(selected)
        variants.append((tokens, []) if side == "post" else ([], tokens))
    perturbed = model.perturbed_batch(post, claim, variants)
    return [base - (s + 1.0) / 2.0 for s in perturbed]


def _aopc(model, pair_or_texts, amap: AttributionMap, bins, granularity: str, keep: bool, name: str) -> MetricResult:
    post, claim = _as_texts(pair_or_texts)
    bins = tuple(bins)
    if not bins or any(not (0.0 < b <= 1.0) for b in bins):
        raise ValueError("AOPC bins must lie in (0, 1]")
    side_values = []
    for side, scores in (("post", amap.post_scores), ("claim", amap.claim_scores)):
        text = post if side == "post" else claim
        if len(text) == 0:
            warnings.warn(f"{name}: empty {side} sequence skipped", stacklevel=3)
            continue
        terms = _deletion_terms(model, post, claim, side, scores, bins, granularity, keep)
        raw = _clamp01(float(np.mean(terms)))
        side_values.append(1.0 - raw if keep else raw)
    if not side_values:
        return MetricResult(name, None)
    return MetricResult(name, float(np.mean(side_values)))


def _as_texts(pair_or_texts):
    if isinstance(pair_or_texts, PairInstance):
        return pair_or_texts.post, pair_or_texts.claim
    return pair_or_texts


def aopc_comprehensiveness(model, pair, amap: AttributionMap, bins=DEFAULT_AOPC_BINS,
                           granularity: str = "token") -> MetricResult:
    """Mean drop in (shifted) similarity when deleting the top-attributed units."""
    return _aopc(model, pair, amap, bins, granularity, keep=False, name="aopc_comprehensiveness")


def aopc_sufficiency(model, pair, amap: AttributionMap, bins=DEFAULT_AOPC_BINS,
                     granularity: str = "token") -> MetricResult:
    """Mean drop when keeping only the top units, reported as 1 - raw."""
    return _aopc(model, pair, amap, bins, granularity, keep=True, name="aopc_sufficiency")


def score_instance(model, pair: PairInstance, amap: AttributionMap,
                   bins=DEFAULT_AOPC_BINS, granularity: str = "token") -> InstanceScores:
    """All six metrics for one instance at the study granularity."""
    from .textdata import regroup

    comp = aopc_comprehensiveness(model, pair, amap, bins, granularity)
    suff = aopc_sufficiency(model, pair, amap, bins, granularity)

    post_scores = np.asarray(regroup(amap.post_scores, pair.post, granularity))
    claim_scores = np.asarray(regroup(amap.claim_scores, pair.claim, granularity))
    post_gold = np.asarray(regroup(pair.post_gold.bits, pair.post, granularity, as_mask=True))
    claim_gold = np.asarray(regroup(pair.claim_gold.bits, pair.claim, granularity, as_mask=True))

    plaus_results = []
    for name, fn in (
        ("auprc", auprc_score),
        ("average_precision", average_precision_score),
        ("token_f1", token_f1_score),
        ("token_iou", token_iou_score),
    ):
        values = [fn(post_scores, post_gold), fn(claim_scores, claim_gold)]
        present = [v for v in values if v is not None]
        plaus_results.append(MetricResult(name, sum(present) / len(present) if present else None))

    fidelity_values = [m.value for m in (comp, suff) if m.value is not None]
    plaus_values = [m.value for m in plaus_results if m.value is not None]
    return InstanceScores(
        fidelity=float(np.mean(fidelity_values)) if fidelity_values else None,
        plausibility=float(np.mean(plaus_values)) if plaus_values else None,
        per_metric=(comp, suff, *plaus_results),
    )


def combine_objective(fidelity: float, plausibility: float, w_f: float, w_p: float) -> float:
    if w_f < 0 or w_p < 0 or w_f + w_p == 0:
        raise ValueError("weights must be nonnegative and not both zero")
    return (w_f * fidelity + w_p * plausibility) / (w_f + w_p)


def aggregate(instances, w_f: float, w_p: float) -> tuple[float, float, float]:
    """Mean category scores over non-skipped instances plus their weighted mix."""
    if w_f < 0 or w_p < 0 or w_f + w_p == 0:
        raise ValueError("weights must be nonnegative and not both zero")
    fid = [i.fidelity for i in instances if i.fidelity is not None]
    plaus = [i.plausibility for i in instances if i.plausibility is not None]
    if not fid and not plaus:
        raise StudyError("every instance was skipped; nothing to aggregate")
    if w_f > 0 and not fid:
        raise StudyError("fidelity weighted but skipped on every instance")
    if w_p > 0 and not plaus:
        raise StudyError("plausibility weighted but skipped on every instance")
    f = float(np.mean(fid)) if fid else 0.0
    p = float(np.mean(plaus)) if plaus else 0.0
    return f, p, combine_objective(f, p, w_f, w_p)
