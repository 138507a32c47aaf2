"""Perturbation-based methods: occlusion, feature ablation, random control.

All of them compare the unperturbed similarity against similarities with
token sets ablated under the model's mask strategy.  Scores are deltas
(positive means removing the unit hurts the match).
"""

from __future__ import annotations

import re
import warnings

import numpy as np

from ..textdata import TokenizedText
from . import AttributionMap

__all__ = [
    "occlusion_token",
    "occlusion_word",
    "feature_ablation",
    "word_units",
    "run_occlusion",
    "run_occlusion_word",
    "run_feature_ablation",
    "run_random_control",
]


def _window_starts(n: int, window: int, stride: int) -> list[int]:
    # Placements cover every token: tail placement added when stride skips it.
    starts = list(range(0, n - window + 1, stride))
    if starts[-1] != n - window:
        starts.append(n - window)
    return starts


def _occlude_side(model, post, claim, side: str, window: int, stride: int, base: float) -> np.ndarray:
    text = post if side == "post" else claim
    n = len(text)
    if window > n:
        warnings.warn(f"occlusion window {window} clamped to sequence length {n}", stacklevel=3)
        window = n
    starts = _window_starts(n, window, stride)
    variants = []
    for s in starts:
        idx = list(range(s, s + window))
        variants.append((idx, []) if side == "post" else ([], idx))
    scores = model.perturbed_batch(post, claim, variants)
    totals = np.zeros(n)
    counts = np.zeros(n)
    for s, perturbed in zip(starts, scores):
        delta = base - perturbed
        totals[s : s + window] += delta
        counts[s : s + window] += 1
    return totals / counts


def occlusion_token(model, post: TokenizedText, claim: TokenizedText, window: int = 5, stride: int = 1,
                    params: dict | None = None) -> AttributionMap:
    """Sliding-window ablation; overlapping window deltas are averaged per token."""
    if window < 1 or stride < 1:
        raise ValueError("occlusion needs window >= 1 and stride >= 1")
    base = model.similarity(post, claim)
    return AttributionMap(
        post_scores=_occlude_side(model, post, claim, "post", window, stride, base),
        claim_scores=_occlude_side(model, post, claim, "claim", window, stride, base),
        method="Occlusion",
        params=params if params is not None else {"window": window, "stride": stride},
    )


def word_units(text: TokenizedText, punct_regex: str) -> list[list[int]]:
    """Token-index groups for word-level ablation.

    Base grouping is whitespace adjacency; tokens made of characters from
    ``punct_regex`` additionally split their run and stand alone.  An empty
    regex degenerates to whitespace words.
    """
    if punct_regex:
        try:
            splitter = re.compile(f"[{punct_regex}]+")
        except re.error as exc:
            raise ValueError(f"invalid regex condition {punct_regex!r}: {exc}") from exc
        is_split = lambda tok: splitter.fullmatch(tok) is not None
    else:
        is_split = lambda tok: False
    units: list[list[int]] = []
    for i, tok in enumerate(text.tokens):
        gap = i == 0 or text.offsets[i][0] > text.offsets[i - 1][1]
        if i == 0 or gap or is_split(tok) or is_split(text.tokens[i - 1]):
            units.append([])
        units[-1].append(i)
    return units


def _unit_deltas(model, post, claim, side: str, units: list[list[int]], base: float) -> np.ndarray:
    variants = [(u, []) if side == "post" else ([], u) for u in units]
    scores = model.perturbed_batch(post, claim, variants)
    text = post if side == "post" else claim
    out = np.zeros(len(text))
    for unit, perturbed in zip(units, scores):
        out[unit] = base - perturbed
    return out


def occlusion_word(model, post: TokenizedText, claim: TokenizedText, punct_regex: str = ".,!?;:…",
                   params: dict | None = None) -> AttributionMap:
    """Ablate whole words; member tokens share their group's delta."""
    base = model.similarity(post, claim)
    return AttributionMap(
        post_scores=_unit_deltas(model, post, claim, "post", word_units(post, punct_regex), base),
        claim_scores=_unit_deltas(model, post, claim, "claim", word_units(claim, punct_regex), base),
        method="Occlusion_word_level",
        params=params if params is not None else {"regex_condition": punct_regex},
    )


def token_group_units(text: TokenizedText) -> list[list[int]]:
    """Token-index groups following the tokenizer's word groups."""
    units: list[list[int]] = []
    for i, g in enumerate(text.word_group):
        if not units or g != text.word_group[i - 1]:
            units.append([])
        units[-1].append(i)
    return units


def feature_ablation(model, post: TokenizedText, claim: TokenizedText, use_token_groups: bool = False,
                     params: dict | None = None) -> AttributionMap:
    """Single-unit ablation: score(u) = sim(x) - sim(x minus u)."""
    base = model.similarity(post, claim)
    if use_token_groups:
        units_p = token_group_units(post)
        units_c = token_group_units(claim)
    else:
        units_p = [[i] for i in range(len(post))]
        units_c = [[i] for i in range(len(claim))]
    return AttributionMap(
        post_scores=_unit_deltas(model, post, claim, "post", units_p, base),
        claim_scores=_unit_deltas(model, post, claim, "claim", units_c, base),
        method="Feature Ablation",
        params=params if params is not None else {"token_groups_for_feature_mask": use_token_groups},
    )


# ------------------------------------------------------------- registry glue

def run_occlusion(model, post, claim, params, rng):
    shapes = params.get("sliding_window_shapes", (5, 1024))
    strides = params.get("strides", (1, 1024))
    window = int(shapes[0]) if isinstance(shapes, (list, tuple)) else int(shapes)
    stride = int(strides[0]) if isinstance(strides, (list, tuple)) else int(strides)
    return occlusion_token(model, post, claim, window=window, stride=stride, params=params)


def run_occlusion_word(model, post, claim, params, rng):
    return occlusion_word(model, post, claim, punct_regex=params.get("regex_condition", ".,!?;:…"), params=params)


def run_feature_ablation(model, post, claim, params, rng):
    return feature_ablation(
        model, post, claim, use_token_groups=bool(params.get("token_groups_for_feature_mask", False)), params=params
    )


def run_random_control(model, post, claim, params, rng):
    """Seeded uniform-noise attribution; the floor other methods must beat."""
    return AttributionMap(
        post_scores=rng.random(len(post)),
        claim_scores=rng.random(len(claim)),
        method="Random",
        params=params,
    )
