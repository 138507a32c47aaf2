"""Surrogate-model methods: LIME and KernelSHAP.

Both explain the pair jointly: the interpretable units are all tokens (or
word groups) of post and claim together, so cross-sequence interactions reach
the surrogate.  The KernelSHAP solver also works on arbitrary set games,
which is how the test battery checks it against brute-force Shapley values.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from ..textdata import TokenizedText
from . import AttributionMap
from .perturbation import word_units

__all__ = [
    "SingularFitError",
    "weighted_lasso_cd",
    "lime",
    "kernel_shap",
    "kernel_shap_game",
    "run_lime",
    "run_kernel_shap",
]

FULL_ENUMERATION_LIMIT = 25


class SingularFitError(RuntimeError):
    """Surrogate regression cannot be fit (degenerate sample set)."""


def weighted_lasso_cd(
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    alpha: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, float]:
    """Coordinate-descent L1 regression with sample weights and intercept.

    Minimizes ``(1/2W) sum_i w_i (y_i - b0 - x_i.beta)^2 + alpha*|beta|_1``
    with ``W = sum w_i``.  Columns with zero weighted mass keep a zero
    coefficient (rank-deficient fits are allowed).
    """
    n, m = x.shape
    w_total = float(weights.sum())
    if w_total <= 0:
        raise SingularFitError("all sample weights are zero")
    wn = weights / w_total
    col_mass = (wn[:, None] * x * x).sum(axis=0)  # z_j
    beta = np.zeros(m)
    b0 = float((wn * y).sum())
    resid = y - b0 - x @ beta
    for _ in range(max_iter):
        max_step = 0.0
        new_b0 = b0 + float((wn * resid).sum())
        resid -= new_b0 - b0
        max_step = abs(new_b0 - b0)
        b0 = new_b0
        for j in range(m):
            if col_mass[j] == 0.0:
                continue
            old = beta[j]
            rho = float((wn * x[:, j] * resid).sum()) + col_mass[j] * old
            new = math.copysign(max(abs(rho) - alpha, 0.0), rho) / col_mass[j]
            if new != old:
                resid -= x[:, j] * (new - old)
                beta[j] = new
                max_step = max(max_step, abs(new - old))
        if max_step < tol:
            break
    return beta, b0


def _pair_units(post: TokenizedText, claim: TokenizedText, use_token_groups: bool, punct_regex: str = ".,!?;:…"):
    """Joint unit list: (side, token indices) covering both sequences."""
    if use_token_groups:
        units_p = word_units(post, punct_regex)
        units_c = word_units(claim, punct_regex)
    else:
        units_p = [[i] for i in range(len(post))]
        units_c = [[i] for i in range(len(claim))]
    return [("post", u) for u in units_p] + [("claim", u) for u in units_c]


def _mask_values(model, post, claim, units, masks: np.ndarray) -> np.ndarray:
    """Similarity per binary unit mask (0 bits are ablated)."""
    variants = []
    for row in masks:
        ablate_post: list[int] = []
        ablate_claim: list[int] = []
        for bit, (side, toks) in zip(row, units):
            if not bit:
                (ablate_post if side == "post" else ablate_claim).extend(toks)
        variants.append((ablate_post, ablate_claim))
    return np.asarray(model.perturbed_batch(post, claim, variants), dtype=np.float64)


def _scatter(units, phi: np.ndarray, n_post: int, n_claim: int):
    post_scores = np.zeros(n_post)
    claim_scores = np.zeros(n_claim)
    for value, (side, toks) in zip(phi, units):
        target = post_scores if side == "post" else claim_scores
        target[toks] = value
    return post_scores, claim_scores


def lime(
    model,
    post: TokenizedText,
    claim: TokenizedText,
    n_samples: int = 90,
    distance_mode: str = "euclidean",
    kernel_width: float = 750.0,
    l1_alpha: float = 1e-10,
    rng: np.random.Generator | None = None,
    use_token_groups: bool = False,
    params: dict | None = None,
) -> AttributionMap:
    """Fit a weighted L1 surrogate of perturbed similarity on unit masks.

    Masks are sampled uniformly over {0,1}^M; each sample is weighted by
    ``exp(-d(mask, ones)^2 / kernel_width^2)`` with cosine or euclidean
    distance on the mask vectors.
    """
    if kernel_width <= 0:
        raise ValueError("kernel_width must be positive")
    if distance_mode not in ("cosine", "euclidean"):
        raise ValueError(f"unknown distance_mode {distance_mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    units = _pair_units(post, claim, use_token_groups)
    m = len(units)
    if n_samples < m:
        warnings.warn(f"LIME with {n_samples} samples for {m} units: rank-deficient fit", stacklevel=2)
    masks = (rng.random((n_samples, m)) < 0.5).astype(np.float64)
    if n_samples > 1 and (masks == masks[0]).all():
        raise SingularFitError("all sampled masks identical; surrogate design is singular")
    y = _mask_values(model, post, claim, units, masks)
    ones = np.ones(m)
    if distance_mode == "euclidean":
        d = np.linalg.norm(masks - ones, axis=1)
    else:
        norms = np.linalg.norm(masks, axis=1) * np.sqrt(m)
        cos = np.divide(masks.sum(axis=1), norms, out=np.zeros(len(masks)), where=norms > 0)
        d = 1.0 - cos
    weights = np.exp(-(d**2) / kernel_width**2)
    beta, _ = weighted_lasso_cd(masks, y, weights, alpha=l1_alpha)
    post_scores, claim_scores = _scatter(units, beta, len(post), len(claim))
    return AttributionMap(
        post_scores=post_scores,
        claim_scores=claim_scores,
        method="Lime",
        params=params
        if params is not None
        else {
            "n_samples": n_samples,
            "distance_mode": distance_mode,
            "kernel_width": kernel_width,
            "alpha": l1_alpha,
        },
    )


def _shapley_kernel_weight(m: int, s: int) -> float:
    return (m - 1) / (math.comb(m, s) * s * (m - s))


def kernel_shap_game(
    value_fn,
    m: int,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    enumerate_all: bool = False,
) -> np.ndarray:
    """Shapley values of an arbitrary set game via the kernel formulation.

    ``value_fn`` maps a boolean coalition vector of length ``m`` to a float.
    With ``enumerate_all`` every proper nonempty coalition enters a weighted
    least-squares solve whose solution equals the exact Shapley values; the
    efficiency constraint (attributions sum to v(full) - v(empty)) is built
    into the solve by variable elimination, so it holds on every run.
    """
    if m == 0:
        return np.zeros(0)
    v_empty = float(value_fn(np.zeros(m, dtype=bool)))
    v_full = float(value_fn(np.ones(m, dtype=bool)))
    delta = v_full - v_empty
    if m == 1:
        return np.array([delta])

    if enumerate_all:
        if m > FULL_ENUMERATION_LIMIT:
            raise ValueError(f"refusing full enumeration of 2^{m} coalitions (limit {FULL_ENUMERATION_LIMIT})")
        coalitions = []
        weights = []
        for code in range(1, 2**m - 1):
            row = np.array([(code >> j) & 1 for j in range(m)], dtype=bool)
            coalitions.append(row)
            weights.append(_shapley_kernel_weight(m, int(row.sum())))
    else:
        if n_samples is None or n_samples < 2:
            raise ValueError("kernel shap sampling needs n_samples >= 2")
        if rng is None:
            rng = np.random.default_rng(0)
        coalitions = []
        weights = []
        while len(coalitions) < n_samples:
            row = rng.random(m) < 0.5
            s = int(row.sum())
            if s in (0, m):
                continue
            coalitions.append(row)
            weights.append(_shapley_kernel_weight(m, s))

    z = np.asarray(coalitions, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    values = np.array([value_fn(row) for row in coalitions], dtype=np.float64)
    # Eliminate the efficiency constraint: phi_m = delta - sum(phi_j, j<m).
    y = values - v_empty - z[:, -1] * delta
    a = z[:, :-1] - z[:, [-1]]
    sw = np.sqrt(w)
    sol, *_ = np.linalg.lstsq(a * sw[:, None], y * sw, rcond=None)
    phi = np.empty(m)
    phi[:-1] = sol
    phi[-1] = delta - sol.sum()
    return phi


def kernel_shap(
    model,
    post: TokenizedText,
    claim: TokenizedText,
    n_samples: int = 90,
    rng: np.random.Generator | None = None,
    enumerate_all: bool = False,
    use_token_groups: bool = False,
    params: dict | None = None,
) -> AttributionMap:
    """KernelSHAP over the pair's units; ablation realizes coalition absence."""
    units = _pair_units(post, claim, use_token_groups)

    def value_fn(mask: np.ndarray) -> float:
        return float(_mask_values(model, post, claim, units, np.asarray(mask, dtype=np.float64)[None, :])[0])

    phi = kernel_shap_game(value_fn, len(units), n_samples=n_samples, rng=rng, enumerate_all=enumerate_all)
    post_scores, claim_scores = _scatter(units, phi, len(post), len(claim))
    return AttributionMap(
        post_scores=post_scores,
        claim_scores=claim_scores,
        method="Kernel Shap",
        params=params if params is not None else {"n_samples": n_samples},
    )


# ------------------------------------------------------------- registry glue

def run_lime(model, post, claim, params, rng):
    sim_params = (params.get("similarity_func") or {}).get("parameters", {})
    model_params = (params.get("interpretable_model") or {}).get("parameters", {})
    return lime(
        model,
        post,
        claim,
        n_samples=int(params.get("n_samples", 90)),
        distance_mode=params.get("distance_mode", sim_params.get("distance_mode", "euclidean")),
        kernel_width=float(params.get("kernel_width", sim_params.get("kernel_width", 750.0))),
        l1_alpha=float(params.get("alpha", model_params.get("alpha", 1e-10))),
        rng=rng,
        use_token_groups=bool(params.get("token_groups_for_feature_mask", False)),
        params=params,
    )


def run_kernel_shap(model, post, claim, params, rng):
    return kernel_shap(
        model,
        post,
        claim,
        n_samples=int(params.get("n_samples", 90)),
        rng=rng,
        use_token_groups=bool(params.get("token_groups_for_feature_mask", False)),
        params=params,
    )
