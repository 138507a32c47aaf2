"""Seeded reference mini-encoder with exact manual backpropagation.

A two-tower bi-encoder small enough for brute-force testing: hashing-trick
vocabulary, a couple of attention blocks with ReLU feed-forward layers, mean
pooling and cosine similarity.  Both towers share weights.  The backward pass
is hand-written reverse-mode differentiation, which lets us expose exact
embedding gradients, guided (rectifier-clamped) gradients and per-layer
attention matrices with their similarity gradients.
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from . import textdata
from .models import CapabilityError, ModelCapabilities, SimilarityModel
from .textdata import TokenizedText

__all__ = ["ReferenceEncoder"]

INIT_STD = 0.02


class _Trace:
    """Per-tower forward activations retained for the backward pass."""

    __slots__ = ("x_in", "layers", "x_out", "pooled")

    def __init__(self, x_in, layers, x_out, pooled):
        self.x_in = x_in  # (n, d) input embeddings
        self.layers = layers  # list of per-layer activation dicts
        self.x_out = x_out  # (n, d) final hidden states
        self.pooled = pooled  # (d,) mean-pooled sequence embedding


class ReferenceEncoder(SimilarityModel):
    """Deterministic stand-in for production sentence encoders.

    All parameters are drawn once from a seeded generator (Gaussian,
    sigma=0.02); identical seeds give bit-identical outputs.  Ablation uses
    the zero-embedding mask strategy, and the all-ablated degenerate case
    (zero pooled vector) scores 0.0 by convention.
    """

    def __init__(
        self,
        vocab_buckets: int = 4096,
        dim: int = 64,
        layers: int = 2,
        heads: int = 2,
        seed: int = 1000,
        ffn_dim: int | None = None,
    ):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.vocab_buckets = vocab_buckets
        self.dim = dim
        self.n_layers = layers
        self.heads = heads
        self.head_dim = dim // heads
        self.ffn_dim = ffn_dim if ffn_dim is not None else 2 * dim
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.embeddings = rng.normal(0.0, INIT_STD, (vocab_buckets, dim))
        self.blocks = []
        for _ in range(layers):
            self.blocks.append(
                {
                    "wq": rng.normal(0.0, INIT_STD, (dim, dim)),
                    "wk": rng.normal(0.0, INIT_STD, (dim, dim)),
                    "wv": rng.normal(0.0, INIT_STD, (dim, dim)),
                    "wo": rng.normal(0.0, INIT_STD, (dim, dim)),
                    "w1": rng.normal(0.0, INIT_STD, (dim, self.ffn_dim)),
                    "w2": rng.normal(0.0, INIT_STD, (self.ffn_dim, dim)),
                }
            )

    # ---------------------------------------------------------------- model
    def capabilities(self) -> ModelCapabilities:
        return ModelCapabilities(
            supports_gradients=True,
            supports_attention_relevance=True,
            mask_strategy="zero-embedding",
            embedding_dim=self.dim,
        )

    def tokenize(self, text: str) -> TokenizedText:
        return textdata.tokenize(text)

    def bucket(self, token: str) -> int:
        return zlib.crc32(token.encode("utf-8")) % self.vocab_buckets

    def embed(self, tokens: Sequence[str] | TokenizedText) -> np.ndarray:
        """Input embedding matrix (n, dim) for a token sequence.

        Rows are table lookups scaled by sqrt(dim), the conventional
        transformer embedding multiplier; this keeps activations well away
        from the rectifier kinks that would poison finite-difference checks.
        """
        if isinstance(tokens, TokenizedText):
            tokens = tokens.tokens
        if len(tokens) == 0:
            raise ValueError("cannot embed an empty token sequence")
        rows = [self.bucket(t) for t in tokens]
        return self.embeddings[rows] * np.sqrt(self.dim)

    # -------------------------------------------------------------- forward
    def _forward(self, x: np.ndarray) -> _Trace:
        n, d = x.shape
        h, dh = self.heads, self.head_dim
        scale = 1.0 / np.sqrt(dh)
        layers = []
        cur = x
        for blk in self.blocks:
            q = cur @ blk["wq"]
            k = cur @ blk["wk"]
            v = cur @ blk["wv"]
            qh = q.reshape(n, h, dh).transpose(1, 0, 2)  # (h, n, dh)
            kh = k.reshape(n, h, dh).transpose(1, 0, 2)
            vh = v.reshape(n, h, dh).transpose(1, 0, 2)
            logits = np.einsum("hid,hjd->hij", qh, kh) * scale
            logits -= logits.max(axis=-1, keepdims=True)
            expl = np.exp(logits)
            attn = expl / expl.sum(axis=-1, keepdims=True)  # (h, n, n), rows sum to 1
            ctx = np.einsum("hij,hjd->hid", attn, vh)  # (h, n, dh)
            ctx_flat = ctx.transpose(1, 0, 2).reshape(n, d)
            attn_out = ctx_flat @ blk["wo"]
            x_attn = cur + attn_out
            pre = x_attn @ blk["w1"]
            hidden = np.maximum(pre, 0.0)
            x_next = x_attn + hidden @ blk["w2"]
            layers.append(
                {"x": cur, "qh": qh, "kh": kh, "vh": vh, "attn": attn, "x_attn": x_attn, "pre": pre}
            )
            cur = x_next
        pooled = cur.mean(axis=0)
        return _Trace(x, layers, cur, pooled)

    def _backward(self, trace: _Trace, d_pooled: np.ndarray, guided: bool = False, capture_attention: bool = False):
        """Gradient of the objective w.r.t. the tower's input embeddings.

        ``guided`` clamps the upstream gradient at every rectifier output to
        nonnegative before it propagates further (on top of the ordinary
        active-unit gating).  ``capture_attention`` also returns, per layer,
        the gradient w.r.t. the post-softmax attention matrices.
        """
        n, d = trace.x_out.shape
        h, dh = self.heads, self.head_dim
        scale = 1.0 / np.sqrt(dh)
        d_cur = np.broadcast_to(d_pooled / n, (n, d)).copy()
        attn_grads: list[np.ndarray] = []
        for blk, acts in zip(reversed(self.blocks), reversed(trace.layers)):
            # feed-forward with residual
            d_hidden = d_cur @ blk["w2"].T
            if guided:
                d_hidden = np.maximum(d_hidden, 0.0)
            d_pre = d_hidden * (acts["pre"] > 0.0)
            d_x_attn = d_cur + d_pre @ blk["w1"].T
            # attention with residual
            d_ctx_flat = d_x_attn @ blk["wo"].T
            d_ctx = d_ctx_flat.reshape(n, h, dh).transpose(1, 0, 2)
            d_attn = np.einsum("hid,hjd->hij", d_ctx, acts["vh"])
            if capture_attention:
                attn_grads.append(d_attn)
            d_vh = np.einsum("hij,hid->hjd", acts["attn"], d_ctx)
            inner = (d_attn * acts["attn"]).sum(axis=-1, keepdims=True)
            d_logits = acts["attn"] * (d_attn - inner)
            d_qh = np.einsum("hij,hjd->hid", d_logits, acts["kh"]) * scale
            d_kh = np.einsum("hij,hid->hjd", d_logits, acts["qh"]) * scale
            d_q = d_qh.transpose(1, 0, 2).reshape(n, d)
            d_k = d_kh.transpose(1, 0, 2).reshape(n, d)
            d_v = d_vh.transpose(1, 0, 2).reshape(n, d)
            d_cur = d_x_attn + d_q @ blk["wq"].T + d_k @ blk["wk"].T + d_v @ blk["wv"].T
        attn_grads.reverse()
        if capture_attention:
            return d_cur, attn_grads
        return d_cur

    # ----------------------------------------------------------- similarity
    @staticmethod
    def _cosine(u: np.ndarray, v: np.ndarray) -> float:
        nu = float(np.linalg.norm(u))
        nv = float(np.linalg.norm(v))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return float(np.dot(u, v) / (nu * nv))

    @staticmethod
    def _cosine_grads(u: np.ndarray, v: np.ndarray):
        nu = float(np.linalg.norm(u))
        nv = float(np.linalg.norm(v))
        if nu == 0.0 or nv == 0.0:
            return np.zeros_like(u), np.zeros_like(v)
        c = float(np.dot(u, v) / (nu * nv))
        du = v / (nu * nv) - c * u / (nu * nu)
        dv = u / (nu * nv) - c * v / (nv * nv)
        return du, dv

    def similarity_at(self, x_post: np.ndarray, x_claim: np.ndarray) -> float:
        """Cosine similarity from raw input embedding matrices."""
        tp = self._forward(np.asarray(x_post, dtype=np.float64))
        tc = self._forward(np.asarray(x_claim, dtype=np.float64))
        return self._cosine(tp.pooled, tc.pooled)

    def similarity(self, post: TokenizedText, claim: TokenizedText) -> float:
        if len(post) == 0 or len(claim) == 0:
            raise ValueError("similarity requires nonempty token sequences")
        return self.similarity_at(self.embed(post), self.embed(claim))

    def perturbed_similarity(self, post, claim, ablate_post=(), ablate_claim=()):
        if len(post) == 0 or len(claim) == 0:
            raise ValueError("similarity requires nonempty token sequences")
        xp = self.embed(post)
        xc = self.embed(claim)
        for i in ablate_post:
            xp[int(i)] = 0.0
        for i in ablate_claim:
            xc[int(i)] = 0.0
        return self.similarity_at(xp, xc)

    # ------------------------------------------------------------ gradients
    def gradients_at(self, x_post: np.ndarray, x_claim: np.ndarray, guided: bool = False):
        """Exact d(similarity)/d(input embeddings) for both towers."""
        tp = self._forward(np.asarray(x_post, dtype=np.float64))
        tc = self._forward(np.asarray(x_claim, dtype=np.float64))
        d_pool_p, d_pool_c = self._cosine_grads(tp.pooled, tc.pooled)
        gp = self._backward(tp, d_pool_p, guided=guided)
        gc = self._backward(tc, d_pool_c, guided=guided)
        return gp, gc

    def embedding_gradients(self, post: TokenizedText, claim: TokenizedText):
        return self.gradients_at(self.embed(post), self.embed(claim))

    def guided_gradients(self, post: TokenizedText, claim: TokenizedText):
        return self.gradients_at(self.embed(post), self.embed(claim), guided=True)

    def attention_internals(self, post: TokenizedText, claim: TokenizedText):
        """Per-layer post-softmax attention and d(similarity)/d(attention).

        Returns ``{"post": [(A, dA), ...], "claim": [...]}`` with arrays of
        shape (heads, n, n) per layer, ordered input to output.
        """
        caps = self.capabilities()
        if not caps.supports_attention_relevance:  # pragma: no cover - fixed True here
            raise CapabilityError("model does not expose attention internals")
        tp = self._forward(self.embed(post))
        tc = self._forward(self.embed(claim))
        d_pool_p, d_pool_c = self._cosine_grads(tp.pooled, tc.pooled)
        _, grads_p = self._backward(tp, d_pool_p, capture_attention=True)
        _, grads_c = self._backward(tc, d_pool_c, capture_attention=True)
        out = {"post": [], "claim": []}
        for acts, g in zip(tp.layers, grads_p):
            out["post"].append((acts["attn"].copy(), g))
        for acts, g in zip(tc.layers, grads_c):
            out["claim"].append((acts["attn"].copy(), g))
        return out
