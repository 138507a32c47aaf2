"""Synthetic post/claim fixture data with exact keyword rationales.

Each generated pair shares a few topic keywords between post and claim while
filler vocabularies stay disjoint across sides, so the gold rationales are
exactly the overlapping keywords.  Generation is fully seeded; the same seed
always writes byte-identical dataset files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .textdata import PairInstance, load_dataset

__all__ = ["synthetic_records", "write_synthetic_dataset", "synthetic_pairs"]

TOPICS = (
    "vaccine", "microchip", "climate", "hoax", "election", "fraud", "virus",
    "lockdown", "radiation", "cure", "garlic", "flood", "earthquake", "moon",
    "landing", "chemtrail", "fluoride", "bleach", "asteroid", "wiretap",
)
POST_FILLERS = (
    "people", "say", "that", "the", "new", "post", "shows", "today",
    "really", "shared", "online", "breaking", "everyone", "talking",
)
CLAIM_FILLERS = (
    "report", "confirms", "officials", "deny", "study", "finds",
    "evidence", "about", "statement", "checked",
)


def _compose(rng, keywords, fillers, n_fillers: int):
    words = list(keywords) + [fillers[int(rng.integers(len(fillers)))] for _ in range(n_fillers)]
    order = rng.permutation(len(words))
    text_words = [words[i] for i in order]
    spans = []
    cursor = 0
    pieces = []
    keyword_set = set(keywords)
    for w in text_words:
        if pieces:
            cursor += 1  # the joining space
        start = cursor
        cursor += len(w)
        pieces.append(w)
        if w in keyword_set:
            spans.append([start, cursor])
    return " ".join(pieces), spans


def synthetic_records(n: int = 20, seed: int = 2026) -> list[dict]:
    """Dataset records ready for JSONL serialization."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        k = int(rng.integers(2, 4))
        keywords = [TOPICS[j] for j in rng.choice(len(TOPICS), size=k, replace=False)]
        post_text, post_spans = _compose(rng, keywords, POST_FILLERS, int(rng.integers(4, 8)))
        claim_text, claim_spans = _compose(rng, keywords, CLAIM_FILLERS, int(rng.integers(2, 5)))
        records.append(
            {
                "id": f"pair-{i:03d}",
                "post": post_text,
                "claim": claim_text,
                "post_rationale": post_spans,
                "claim_rationale": claim_spans,
            }
        )
    return records


def write_synthetic_dataset(path, n: int = 20, seed: int = 2026) -> Path:
    path = Path(path)
    lines = [json.dumps(r, sort_keys=True) for r in synthetic_records(n, seed)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def synthetic_pairs(n: int = 20, seed: int = 2026, tmpdir=None) -> list[PairInstance]:
    """The fixture dataset as loaded pair instances."""
    import tempfile

    with tempfile.TemporaryDirectory(dir=tmpdir) as d:
        path = write_synthetic_dataset(Path(d) / "fixture.jsonl", n, seed)
        return load_dataset(path)
