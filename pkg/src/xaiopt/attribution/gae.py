"""Attention-relevance propagation over both towers.

Per tower, relevance starts at the identity and each layer adds the product
of the clamped, head-averaged gradient-weighted attention with the running
relevance; token relevance is the column mean of the final matrix (the
analogue of a class-token readout under mean pooling).
"""

from __future__ import annotations

import numpy as np

from . import AttributionMap

__all__ = ["gae", "run_gae", "relevance_matrix"]


def relevance_matrix(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Accumulate relevance from per-layer (attention, gradient) pairs.

    ``attention`` and ``gradient`` have shape (heads, n, n); layers are
    ordered input to output.  All entries stay nonnegative because the
    update mixes the identity with clamped nonnegative products.
    """
    n = layers[0][0].shape[-1]
    relevance = np.eye(n)
    for attention, grad in layers:
        weighted = np.maximum(grad * attention, 0.0).mean(axis=0)  # head mean, clamped
        relevance = relevance + weighted @ relevance
    return relevance


def gae(model, post, claim, params: dict | None = None) -> AttributionMap:
    internals = model.attention_internals(post, claim)
    scores = {}
    for side in ("post", "claim"):
        relevance = relevance_matrix(internals[side])
        scores[side] = relevance.mean(axis=0)  # column mean: mean-pooled readout
    return AttributionMap(
        post_scores=scores["post"],
        claim_scores=scores["claim"],
        method="GAE_Explain",
        params=params or {},
    )


def run_gae(model, post, claim, params, rng):
    return gae(model, post, claim, params=params)
