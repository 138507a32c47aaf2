"""Attribution methods producing per-token relevance maps for text pairs.

Every method is deterministic given (model, pair, params, seed).  Methods are
registered under the configuration names accepted by the search space; the
dispatcher checks model capabilities before running, so perturbation methods
never touch gradient endpoints and gradient methods fail fast on black-box
models.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..models import CapabilityError, SimilarityModel
from ..textdata import TokenizedText

__all__ = [
    "AttributionMap",
    "BaselineSpec",
    "MethodInfo",
    "METHODS",
    "NORMALIZATIONS",
    "normalize_map",
    "compute_attribution",
    "method_info",
]

NORMALIZATIONS = ("without_normalize", "abs", "min_max", "l2")


@dataclass(frozen=True)
class AttributionMap:
    """Per-token relevance for both sequences under one method config."""

    post_scores: np.ndarray
    claim_scores: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    normalization: str = "without_normalize"

    def __post_init__(self):
        object.__setattr__(self, "post_scores", np.asarray(self.post_scores, dtype=np.float64))
        object.__setattr__(self, "claim_scores", np.asarray(self.claim_scores, dtype=np.float64))
        if not (np.isfinite(self.post_scores).all() and np.isfinite(self.claim_scores).all()):
            raise ValueError(f"{self.method}: attribution scores must be finite")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")


@dataclass(frozen=True)
class BaselineSpec:
    """Baseline input for path- and sampling-based gradient methods."""

    kind: str = "zero-embedding"  # zero-embedding | mask-token | sampled-noise
    stdevs: float = 0.0
    n_samples: int = 1

    def __post_init__(self):
        if self.kind not in ("zero-embedding", "mask-token", "sampled-noise"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.stdevs < 0 or self.n_samples < 1:
            raise ValueError("baseline needs stdevs >= 0 and n_samples >= 1")


def _normalize_side(scores: np.ndarray, mode: str) -> np.ndarray:
    if mode == "without_normalize":
        return scores
    if mode == "abs":
        return np.abs(scores)
    if mode == "min_max":
        lo, hi = scores.min(), scores.max()
        if hi == lo:
            return np.full_like(scores, 0.5)
        return (scores - lo) / (hi - lo)
    if mode == "l2":
        norm = np.linalg.norm(scores)
        if norm == 0.0:
            warnings.warn("l2 normalization of an all-zero map leaves it unchanged", stacklevel=3)
            return scores
        return scores / norm
    raise ValueError(f"unknown normalization {mode!r}")


def normalize_map(amap: AttributionMap, mode: str) -> AttributionMap:
    """Apply a per-side normalization; the tag records what was done."""
    return replace(
        amap,
        post_scores=_normalize_side(amap.post_scores, mode),
        claim_scores=_normalize_side(amap.claim_scores, mode),
        normalization=mode,
    )


@dataclass(frozen=True)
class MethodInfo:
    """Registry entry: how to run one method and what it needs."""

    name: str
    run: callable
    needs_gradients: bool = False
    needs_attention: bool = False


def _registry() -> dict[str, MethodInfo]:
    from . import gae, gradient, perturbation, surrogate

    entries = [
        MethodInfo("Occlusion", perturbation.run_occlusion),
        MethodInfo("Occlusion_word_level", perturbation.run_occlusion_word),
        MethodInfo("Feature Ablation", perturbation.run_feature_ablation),
        MethodInfo("Lime", surrogate.run_lime),
        MethodInfo("Kernel Shap", surrogate.run_kernel_shap),
        MethodInfo("Saliency", gradient.run_saliency, needs_gradients=True),
        MethodInfo("Input X Gradient", gradient.run_input_x_gradient, needs_gradients=True),
        MethodInfo("Guided Backprop", gradient.run_guided_backprop, needs_gradients=True),
        MethodInfo("Integrated Gradients", gradient.run_integrated_gradients, needs_gradients=True),
        MethodInfo("Gradient Shap", gradient.run_gradient_shap, needs_gradients=True),
        MethodInfo("GAE_Explain", gae.run_gae, needs_attention=True),
        MethodInfo("Random", perturbation.run_random_control),
    ]
    return {e.name: e for e in entries}


METHODS: dict[str, MethodInfo] = _registry()


def method_info(name: str) -> MethodInfo:
    try:
        return METHODS[name]
    except KeyError:
        raise KeyError(f"unknown attribution method {name!r}; known: {sorted(METHODS)}") from None


def compute_attribution(
    model: SimilarityModel,
    post: TokenizedText,
    claim: TokenizedText,
    method: str,
    params: dict | None = None,
    rng: np.random.Generator | None = None,
) -> AttributionMap:
    """Dispatch one method with an admissibility check against capabilities."""
    info = method_info(method)
    caps = model.capabilities()
    if info.needs_gradients and not caps.supports_gradients:
        raise CapabilityError(f"{method} requires gradient access; bound model is black-box")
    if info.needs_attention and not caps.supports_attention_relevance:
        raise CapabilityError(f"{method} requires attention internals; bound model lacks them")
    if rng is None:
        rng = np.random.default_rng(0)
    return info.run(model, post, claim, dict(params or {}), rng)
