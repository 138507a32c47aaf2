"""Shared test oracles and toy models.

The toy models implement the same model surface as the reference encoder but
with closed-form behavior, so attribution outputs can be checked exactly.
The slow encoder re-implementations are independent loop-based oracles for
the vectorized forward/backward passes.
"""

from __future__ import annotations

import itertools
import math
import zlib

import numpy as np

from xaiopt.models import ModelCapabilities, SimilarityModel
from xaiopt.textdata import tokenize


class AdditiveScorer(SimilarityModel):
    """Perturbation-only toy: similarity is the sum of surviving token values."""

    def __init__(self, post_values, claim_values):
        self.post_values = np.asarray(post_values, dtype=np.float64)
        self.claim_values = np.asarray(claim_values, dtype=np.float64)

    def capabilities(self):
        return ModelCapabilities(False, False, "zero-embedding", 0)

    def tokenize(self, text):
        return tokenize(text)

    def perturbed_similarity(self, post, claim, ablate_post=(), ablate_claim=()):
        keep_p = [i for i in range(len(self.post_values)) if i not in set(ablate_post)]
        keep_c = [i for i in range(len(self.claim_values)) if i not in set(ablate_claim)]
        return float(self.post_values[keep_p].sum() + self.claim_values[keep_c].sum())


class LinearEmbeddingModel(SimilarityModel):
    """Gradient-capable toy: similarity = w_p . mean(post) + w_c . mean(claim)."""

    def __init__(self, dim=8, seed=11):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.w_post = rng.normal(0, 1, dim)
        self.w_claim = rng.normal(0, 1, dim)

    def capabilities(self):
        return ModelCapabilities(True, False, "zero-embedding", self.dim)

    def tokenize(self, text):
        return tokenize(text)

    def embed(self, tokens):
        if hasattr(tokens, "tokens"):
            tokens = tokens.tokens
        rows = []
        for t in tokens:
            rng = np.random.default_rng(zlib.crc32(t.encode("utf-8")))
            rows.append(rng.normal(0, 1, self.dim))
        return np.array(rows)

    def similarity_at(self, xp, xc):
        return float(self.w_post @ xp.mean(axis=0) + self.w_claim @ xc.mean(axis=0))

    def similarity(self, post, claim):
        return self.similarity_at(self.embed(post), self.embed(claim))

    def perturbed_similarity(self, post, claim, ablate_post=(), ablate_claim=()):
        xp = self.embed(post)
        xc = self.embed(claim)
        xp[list(ablate_post)] = 0.0
        xc[list(ablate_claim)] = 0.0
        return self.similarity_at(xp, xc)

    def gradients_at(self, xp, xc, guided=False):
        gp = np.tile(self.w_post / len(xp), (len(xp), 1))
        gc = np.tile(self.w_claim / len(xc), (len(xc), 1))
        return gp, gc


# ------------------------------------------------- finite-difference oracles

def fd_embedding_gradients(model, xp, xc, h=1e-4):
    """Central differences for d(similarity)/d(post embeddings)."""
    fd = np.zeros_like(xp)
    for i in range(xp.shape[0]):
        for j in range(xp.shape[1]):
            a = xp.copy()
            a[i, j] += h
            b = xp.copy()
            b[i, j] -= h
            fd[i, j] = (model.similarity_at(a, xc) - model.similarity_at(b, xc)) / (2 * h)
    return fd


def kink_free(enc, x, h=1e-4, safety=4.0) -> bool:
    """True when no rectifier pre-activation sits inside the fd window.

    Central differences are invalid across the rectifier kink; inputs are
    accepted for gradient checking only when every pre-activation clears the
    largest possible h-step (direct path bound times a safety factor).
    """
    trace = enc._forward(x)
    for blk, acts in zip(enc.blocks, trace.layers):
        window = h * np.abs(blk["w1"]).max(axis=0) * safety
        if (np.abs(acts["pre"]) < window[None, :]).any():
            return False
    return True


def seeded_kink_free_pairs(enc, count, vocab=5000, h=1e-4):
    """Deterministic random token pairs rejection-sampled to be kink-free."""
    pairs = []
    meta = 0
    while len(pairs) < count:
        rng = np.random.default_rng(meta)
        meta += 1

        def draw():
            n = int(rng.integers(4, 9))
            return tokenize(" ".join(f"w{int(rng.integers(0, vocab))}" for _ in range(n)))

        post, claim = draw(), draw()
        if kink_free(enc, enc.embed(post), h) and kink_free(enc, enc.embed(claim), h):
            pairs.append((post, claim))
    return pairs


# ------------------------------------------- slow encoder re-implementation

def slow_forward(enc, x):
    """Loop-based forward pass; returns (per-layer activations, pooled)."""
    n, d = x.shape
    dh = enc.head_dim
    layers = []
    cur = x.copy()
    for blk in enc.blocks:
        q = cur @ blk["wq"]
        k = cur @ blk["wk"]
        v = cur @ blk["wv"]
        heads_ctx = []
        attn_heads = []
        for hidx in range(enc.heads):
            sl = slice(hidx * dh, (hidx + 1) * dh)
            logits = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    logits[i, j] = float(q[i, sl] @ k[j, sl]) / math.sqrt(dh)
            attn = np.zeros((n, n))
            for i in range(n):
                e = np.exp(logits[i] - logits[i].max())
                attn[i] = e / e.sum()
            ctx = attn @ v[:, sl]
            heads_ctx.append(ctx)
            attn_heads.append(attn)
        ctx_full = np.concatenate(heads_ctx, axis=1)
        x_attn = cur + ctx_full @ blk["wo"]
        pre = x_attn @ blk["w1"]
        hidden = np.maximum(pre, 0.0)
        nxt = x_attn + hidden @ blk["w2"]
        layers.append({"x": cur, "q": q, "k": k, "v": v, "attn": attn_heads, "x_attn": x_attn, "pre": pre})
        cur = nxt
    return layers, cur.mean(axis=0)


def slow_gradients(enc, xp, xc, guided=False):
    """Independent reverse-mode oracle mirroring the spec'd backward rules."""

    def cosine_grads(u, v):
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            return np.zeros_like(u), np.zeros_like(v)
        c = float(u @ v / (nu * nv))
        return v / (nu * nv) - c * u / nu**2, u / (nu * nv) - c * v / nv**2

    layers_p, pooled_p = slow_forward(enc, xp)
    layers_c, pooled_c = slow_forward(enc, xc)
    dp, dc = cosine_grads(pooled_p, pooled_c)

    def backward(layers, x_in, d_pooled):
        n = x_in.shape[0]
        dh = enc.head_dim
        d_cur = np.tile(d_pooled / n, (n, 1))
        for blk, acts in zip(reversed(enc.blocks), reversed(layers)):
            d_hidden = d_cur @ blk["w2"].T
            if guided:
                d_hidden = np.maximum(d_hidden, 0.0)
            d_pre = d_hidden * (acts["pre"] > 0)
            d_x_attn = d_cur + d_pre @ blk["w1"].T
            d_ctx_full = d_x_attn @ blk["wo"].T
            d_q = np.zeros_like(acts["q"])
            d_k = np.zeros_like(acts["k"])
            d_v = np.zeros_like(acts["v"])
            for hidx in range(enc.heads):
                sl = slice(hidx * dh, (hidx + 1) * dh)
                attn = acts["attn"][hidx]
                d_ctx = d_ctx_full[:, sl]
                d_attn = d_ctx @ acts["v"][:, sl].T
                d_v[:, sl] = attn.T @ d_ctx
                for i in range(n):
                    row = attn[i]
                    inner = float(d_attn[i] @ row)
                    d_logits_row = row * (d_attn[i] - inner)
                    for j in range(n):
                        d_q[i, sl] += d_logits_row[j] * acts["k"][j, sl] / math.sqrt(dh)
                        d_k[j, sl] += d_logits_row[j] * acts["q"][i, sl] / math.sqrt(dh)
            d_cur = d_x_attn + d_q @ blk["wq"].T + d_k @ blk["wk"].T + d_v @ blk["wv"].T
        return d_cur

    return backward(layers_p, xp, dp), backward(layers_c, xc, dc)


def forward_with_attention(enc, x, attn_override):
    """Forward pass with per-layer attention matrices forced to given values."""
    n, d = x.shape
    dh = enc.head_dim
    cur = x.copy()
    for blk, attn in zip(enc.blocks, attn_override):
        v = cur @ blk["wv"]
        heads_ctx = []
        for hidx in range(enc.heads):
            sl = slice(hidx * dh, (hidx + 1) * dh)
            heads_ctx.append(attn[hidx] @ v[:, sl])
        x_attn = cur + np.concatenate(heads_ctx, axis=1) @ blk["wo"]
        hidden = np.maximum(x_attn @ blk["w1"], 0.0)
        cur = x_attn + hidden @ blk["w2"]
    return cur.mean(axis=0)


# ----------------------------------------------------------- shapley oracle

def brute_force_shapley(value_fn, m):
    """Average marginal contributions over all orderings."""
    phi = np.zeros(m)
    for perm in itertools.permutations(range(m)):
        mask = np.zeros(m, dtype=bool)
        prev = value_fn(mask)
        for unit in perm:
            mask[unit] = True
            cur = value_fn(mask)
            phi[unit] += cur - prev
            prev = cur
        mask[:] = False
    return phi / math.factorial(m)


def hypervolume_2d(points, ref=(0.0, 0.0)):
    """Dominated-area hypervolume for maximization problems."""
    pts = sorted({(max(p[0], ref[0]), max(p[1], ref[1])) for p in points}, key=lambda p: (-p[0], -p[1]))
    volume = 0.0
    prev_y = ref[1]
    for x, y in pts:
        if y > prev_y:
            volume += (x - ref[0]) * (y - prev_y)
            prev_y = y
    return volume
