"""Similarity-model contract consumed by all attribution methods.

Perturbation methods treat a model as a black box (`similarity`,
`perturbed_similarity`); gradient and attention methods additionally need
embedding-level access, which only gradient-capable models provide.
Similarity scores are plain floats (cosine of pooled embeddings, in [-1, 1]).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Sequence

import requests

from .textdata import TokenizedText, tokenize

__all__ = [
    "ModelCapabilities",
    "CapabilityError",
    "TransportError",
    "SimilarityModel",
    "RemoteModel",
]


@dataclass(frozen=True)
class ModelCapabilities:
    """What a bound model can do; gates method admissibility."""

    supports_gradients: bool
    supports_attention_relevance: bool
    mask_strategy: str  # "zero-embedding" | "mask-token-string"
    embedding_dim: int


class CapabilityError(RuntimeError):
    """A method asked a model for access it does not support."""


class TransportError(RuntimeError):
    """Remote model unreachable or misbehaving; retryable at trial level."""


class SimilarityModel:
    """Base class for similarity models (black-box surface).

    Subclasses must implement :meth:`capabilities`, :meth:`tokenize` and
    :meth:`perturbed_similarity`; everything else has generic fallbacks.
    """

    def capabilities(self) -> ModelCapabilities:
        raise NotImplementedError

    def tokenize(self, text: str) -> TokenizedText:
        raise NotImplementedError

    def similarity(self, post: TokenizedText, claim: TokenizedText) -> float:
        return self.perturbed_similarity(post, claim, (), ())

    def perturbed_similarity(
        self,
        post: TokenizedText,
        claim: TokenizedText,
        ablate_post: Sequence[int] = (),
        ablate_claim: Sequence[int] = (),
    ) -> float:
        raise NotImplementedError

    def perturbed_batch(
        self,
        post: TokenizedText,
        claim: TokenizedText,
        variants: Sequence[tuple[Sequence[int], Sequence[int]]],
    ) -> list[float]:
        """Score many ablation variants; remote models batch these."""
        return [self.perturbed_similarity(post, claim, ap, ac) for ap, ac in variants]


def _check_indices(ablate: Sequence[int], n: int, side: str) -> frozenset[int]:
    idx = frozenset(int(i) for i in ablate)
    if any(i < 0 or i >= n for i in idx):
        raise IndexError(f"{side} ablation indices out of range for length {n}")
    return idx


class RemoteModel(SimilarityModel):
    """Client for the remote-model wire protocol (perturbation only).

    The protocol never ships gradients, so gradient methods are inadmissible
    on remote bindings.  At most ``max_inflight`` requests are issued
    concurrently; failed requests are retried ``retries`` times before a
    :class:`TransportError` escapes.
    """

    def __init__(self, base_url: str, max_inflight: int = 4, retries: int = 2, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self._session = requests.Session()
        self._gate = threading.Semaphore(max_inflight)
        self._retries = retries
        self._timeout = timeout
        self._caps_raw = self._get("/v1/capabilities")
        self.mask_token = self._caps_raw["mask_token"]
        self.max_batch = int(self._caps_raw.get("max_batch", 32))

    def _request(self, method: str, path: str, payload=None):
        url = self.base_url + path
        last_exc: Exception | None = None
        for attempt in range(self._retries + 1):
            with self._gate:
                try:
                    if method == "GET":
                        resp = self._session.get(url, timeout=self._timeout)
                    else:
                        resp = self._session.post(url, json=payload, timeout=self._timeout)
                    if resp.status_code >= 500:
                        raise TransportError(f"{url} returned {resp.status_code}")
                    if resp.status_code >= 400:
                        raise TransportError(f"{url} rejected request: {resp.status_code} {resp.text[:200]}")
                    return resp.json()
                except (requests.RequestException, TransportError) as exc:
                    last_exc = exc
            if attempt < self._retries:
                time.sleep(0.1 * (attempt + 1))
        raise TransportError(f"remote model unreachable: {last_exc}") from last_exc

    def _get(self, path: str):
        return self._request("GET", path)

    def _post(self, path: str, payload):
        return self._request("POST", path, payload)

    def capabilities(self) -> ModelCapabilities:
        return ModelCapabilities(
            supports_gradients=False,
            supports_attention_relevance=False,
            mask_strategy="mask-token-string",
            embedding_dim=int(self._caps_raw.get("embedding_dim", 0)),
        )

    def tokenize(self, text: str) -> TokenizedText:
        result = self._post("/v1/tokenize", {"texts": [text]})["results"][0]
        # Rebuild groups locally from the server's offsets so regrouping works
        # the same way as for the built-in tokenizer.
        local = tokenize(text)
        tokens = tuple(result["tokens"])
        offsets = tuple((int(s), int(e)) for s, e in result["offsets"])
        if tokens == local.tokens and offsets == local.offsets:
            return local
        word_group, sentence_group = _groups_from_offsets(text, tokens, offsets)
        return TokenizedText(
            source=text,
            tokens=tokens,
            offsets=offsets,
            word_group=word_group,
            sentence_group=sentence_group,
        )

    def _masked(self, text: TokenizedText, ablate: frozenset[int]) -> list[str]:
        return [self.mask_token if i in ablate else t for i, t in enumerate(text.tokens)]

    def perturbed_similarity(self, post, claim, ablate_post=(), ablate_claim=()):
        return self.perturbed_batch(post, claim, [(ablate_post, ablate_claim)])[0]

    def perturbed_batch(self, post, claim, variants):
        pairs = []
        for ablate_post, ablate_claim in variants:
            ap = _check_indices(ablate_post, len(post), "post")
            ac = _check_indices(ablate_claim, len(claim), "claim")
            pairs.append({"post_tokens": self._masked(post, ap), "claim_tokens": self._masked(claim, ac)})
        scores: list[float] = []
        for start in range(0, len(pairs), self.max_batch):
            chunk = pairs[start : start + self.max_batch]
            scores.extend(float(s) for s in self._post("/v1/similarity", {"pairs": chunk})["scores"])
        return scores


def _groups_from_offsets(text: str, tokens, offsets):
    """Recompute word/sentence groups for server-supplied tokenizations."""
    from .textdata import SENTENCE_ENDERS, _is_punct

    word_group: list[int] = []
    sentence_group: list[int] = []
    wg = -1
    sg = 0
    for i, tok in enumerate(tokens):
        gap = i == 0 or offsets[i][0] > offsets[i - 1][1]
        if i == 0 or gap or _is_punct(tok) or _is_punct(tokens[i - 1]):
            wg += 1
        word_group.append(wg)
        if i > 0 and tokens[i - 1] in SENTENCE_ENDERS:
            sg += 1
        sentence_group.append(sg)
    return tuple(word_group), tuple(sentence_group)
