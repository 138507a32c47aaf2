"""Gradient-based methods; require a model exposing embedding gradients.

Embedding-dimension collapse follows the conventions of the reference
implementations these methods descend from: Saliency collapses with an L2
norm, everything else with a signed sum of input-times-gradient.
"""

from __future__ import annotations

import numpy as np

from ..textdata import TokenizedText
from . import AttributionMap, BaselineSpec

__all__ = [
    "saliency",
    "input_x_gradient",
    "integrated_gradients",
    "gradient_shap",
    "guided_backprop",
    "run_saliency",
    "run_input_x_gradient",
    "run_integrated_gradients",
    "run_gradient_shap",
    "run_guided_backprop",
]


def _embed_pair(model, post: TokenizedText, claim: TokenizedText):
    return model.embed(post), model.embed(claim)


def saliency(model, post, claim, abs: bool = True, params: dict | None = None) -> AttributionMap:
    """Gradient magnitude per token.

    ``abs=True`` reports the plain L2 magnitude over embedding dimensions;
    ``abs=False`` attaches the sign of the summed (dot-product) collapse, so
    the two differ exactly where that signed collapse is negative.
    """
    xp, xc = _embed_pair(model, post, claim)
    gp, gc = model.gradients_at(xp, xc)

    def collapse(g):
        mags = np.linalg.norm(g, axis=1)
        if abs:
            return mags
        return np.where(g.sum(axis=1) < 0, -mags, mags)

    return AttributionMap(
        post_scores=collapse(gp),
        claim_scores=collapse(gc),
        method="Saliency",
        params=params if params is not None else {"abs": abs},
    )


def input_x_gradient(model, post, claim, params: dict | None = None) -> AttributionMap:
    xp, xc = _embed_pair(model, post, claim)
    gp, gc = model.gradients_at(xp, xc)
    return AttributionMap(
        post_scores=(xp * gp).sum(axis=1),
        claim_scores=(xc * gc).sum(axis=1),
        method="Input X Gradient",
        params=params or {},
    )


def guided_backprop(model, post, claim, params: dict | None = None) -> AttributionMap:
    """Input-times-gradient with rectifier-clamped backpropagation."""
    xp, xc = _embed_pair(model, post, claim)
    gp, gc = model.gradients_at(xp, xc, guided=True)
    return AttributionMap(
        post_scores=(xp * gp).sum(axis=1),
        claim_scores=(xc * gc).sum(axis=1),
        method="Guided Backprop",
        params=params or {},
    )


def _baseline_matrices(model, post, claim, baseline: BaselineSpec, rng: np.random.Generator | None):
    xp, xc = _embed_pair(model, post, claim)
    if baseline.kind == "zero-embedding":
        return np.zeros_like(xp), np.zeros_like(xc)
    if baseline.kind == "mask-token":
        mask_p = model.embed(["[MASK]"] * len(post))
        mask_c = model.embed(["[MASK]"] * len(claim))
        return mask_p, mask_c
    if rng is None:
        raise ValueError("sampled-noise baseline needs an RNG")
    return rng.normal(0.0, baseline.stdevs, xp.shape), rng.normal(0.0, baseline.stdevs, xc.shape)


def integrated_gradients(
    model,
    post,
    claim,
    n_steps: int = 50,
    baseline: BaselineSpec | None = None,
    rule: str = "left",
    params: dict | None = None,
) -> AttributionMap:
    """Riemann approximation of the path integral of gradients.

    Both towers move together from their baselines to the inputs.  The
    default left-endpoint rule makes the completeness gap shrink like 1/n,
    halving per doubling of ``n_steps``; ``rule="midpoint"`` is available.
    """
    if n_steps < 1:
        raise ValueError("integrated gradients needs n_steps >= 1")
    if rule not in ("left", "midpoint"):
        raise ValueError(f"unknown riemann rule {rule!r}")
    baseline = baseline or BaselineSpec(kind="zero-embedding")
    if baseline.kind == "sampled-noise":
        raise ValueError("sampled-noise baselines belong to Gradient Shap, not Integrated Gradients")
    xp, xc = _embed_pair(model, post, claim)
    bp, bc = _baseline_matrices(model, post, claim, baseline, None)
    offset = 0.0 if rule == "left" else 0.5
    acc_p = np.zeros_like(xp)
    acc_c = np.zeros_like(xc)
    for k in range(n_steps):
        alpha = (k + offset) / n_steps
        gp, gc = model.gradients_at(bp + alpha * (xp - bp), bc + alpha * (xc - bc))
        acc_p += gp
        acc_c += gc
    avg_p = acc_p / n_steps
    avg_c = acc_c / n_steps
    return AttributionMap(
        post_scores=((xp - bp) * avg_p).sum(axis=1),
        claim_scores=((xc - bc) * avg_c).sum(axis=1),
        method="Integrated Gradients",
        params=params if params is not None else {"n_steps": n_steps, "baseline": baseline.kind},
    )


def gradient_shap(
    model,
    post,
    claim,
    stdevs: float = 0.1,
    n_samples: int = 15,
    rng: np.random.Generator | None = None,
    params: dict | None = None,
) -> AttributionMap:
    """Expected gradients against noisy zero baselines.

    Per sample: draw a Gaussian baseline (zero embedding + noise), a uniform
    interpolation point, evaluate the gradient there and accumulate
    gradient * (input - baseline); the map is the sample mean.
    """
    if n_samples < 1:
        raise ValueError("gradient shap needs n_samples >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    xp, xc = _embed_pair(model, post, claim)
    acc_p = np.zeros(len(post))
    acc_c = np.zeros(len(claim))
    for _ in range(n_samples):
        bp = rng.normal(0.0, stdevs, xp.shape) if stdevs > 0 else np.zeros_like(xp)
        bc = rng.normal(0.0, stdevs, xc.shape) if stdevs > 0 else np.zeros_like(xc)
        alpha = rng.uniform()
        gp, gc = model.gradients_at(bp + alpha * (xp - bp), bc + alpha * (xc - bc))
        acc_p += ((xp - bp) * gp).sum(axis=1)
        acc_c += ((xc - bc) * gc).sum(axis=1)
    return AttributionMap(
        post_scores=acc_p / n_samples,
        claim_scores=acc_c / n_samples,
        method="Gradient Shap",
        params=params if params is not None else {"stdevs": stdevs, "n_samples": n_samples},
    )


# ------------------------------------------------------------- registry glue

def run_saliency(model, post, claim, params, rng):
    return saliency(model, post, claim, abs=bool(params.get("abs", True)), params=params)


def run_input_x_gradient(model, post, claim, params, rng):
    return input_x_gradient(model, post, claim, params=params)


def run_guided_backprop(model, post, claim, params, rng):
    return guided_backprop(model, post, claim, params=params)


def run_integrated_gradients(model, post, claim, params, rng):
    baseline = BaselineSpec(kind=params.get("baseline", "zero-embedding"))
    return integrated_gradients(
        model, post, claim,
        n_steps=int(params.get("n_steps", 50)),
        baseline=baseline,
        rule=params.get("rule", "left"),
        params=params,
    )


def run_gradient_shap(model, post, claim, params, rng):
    return gradient_shap(
        model, post, claim,
        stdevs=float(params.get("stdevs", 0.1)),
        n_samples=int(params.get("n_samples", 15)),
        rng=rng,
        params=params,
    )
