"""Tokenization, rationale alignment, annotation merging and dataset loading.

Rationales travel as character spans so the same dataset file works with any
tokenizer (remote models tokenize differently than the built-in splitter).
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field

__all__ = [
    "DEFAULT_TOKEN_PATTERN",
    "SENTENCE_ENDERS",
    "TokenizedText",
    "RationaleMask",
    "PairInstance",
    "DISCARDED",
    "Discarded",
    "DataValidationError",
    "DatasetError",
    "tokenize",
    "align_rationale",
    "merge_annotations",
    "group_indices",
    "regroup",
    "load_dataset",
]

# Word-character runs, or single non-word non-space characters (isolated
# punctuation). Offsets count Unicode scalar values.
DEFAULT_TOKEN_PATTERN = r"\w+|[^\w\s]"

# Tokens that advance the sentence group for everything after them.
SENTENCE_ENDERS = frozenset(".?!…")


class DataValidationError(ValueError):
    """Raised when spans, masks or records violate their declared contract."""


class DatasetError(DataValidationError):
    """Dataset-file level failure; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TokenizedText:
    """A text split into tokens with source offsets and group assignments.

    ``offsets`` are half-open ``[start, end)`` spans into ``source``;
    they are strictly increasing and non-overlapping.  ``word_group`` and
    ``sentence_group`` are nondecreasing per-token group indices.
    """

    source: str
    tokens: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]
    word_group: tuple[int, ...]
    sentence_group: tuple[int, ...]

    def __post_init__(self):
        n = len(self.tokens)
        if not (len(self.offsets) == len(self.word_group) == len(self.sentence_group) == n):
            raise DataValidationError("token/offset/group lengths disagree")
        prev_end = 0
        for start, end in self.offsets:
            if start < prev_end or end <= start or end > len(self.source):
                raise DataValidationError(f"bad offset [{start},{end}) in text of length {len(self.source)}")
            prev_end = end
        for groups in (self.word_group, self.sentence_group):
            if any(b < a for a, b in zip(groups, groups[1:])):
                raise DataValidationError("group indices must be nondecreasing")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class RationaleMask:
    """Per-token binary flags; 1 marks a human-annotated relevant token."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise DataValidationError("mask bits must be 0 or 1")

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class PairInstance:
    """One post/claim pair with tokenization and gold rationale masks."""

    id: str
    post: TokenizedText
    claim: TokenizedText
    post_gold: RationaleMask
    claim_gold: RationaleMask

    def __post_init__(self):
        if len(self.post_gold) != len(self.post) or len(self.claim_gold) != len(self.claim):
            raise DataValidationError(f"pair {self.id!r}: mask length does not match token count")


class Discarded:
    """Sentinel returned by :func:`merge_annotations` on a voting tie."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):  # pragma: no cover
        return "DISCARDED"


DISCARDED = Discarded()


def _is_punct(token: str) -> bool:
    return not any(ch.isalnum() or ch == "_" for ch in token)


def tokenize(text: str, pattern: str = DEFAULT_TOKEN_PATTERN) -> TokenizedText:
    """Split ``text`` on whitespace, isolating punctuation characters.

    Word groups advance at whitespace gaps and around punctuation tokens
    (each punctuation token is its own group); sentence groups advance after
    tokens in ``.?!…``.  Empty text yields an empty token list.
    """
    tokens: list[str] = []
    offsets: list[tuple[int, int]] = []
    for m in re.finditer(pattern, text):
        tokens.append(m.group(0))
        offsets.append((m.start(), m.end()))

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

    return TokenizedText(
        source=text,
        tokens=tuple(tokens),
        offsets=tuple(offsets),
        word_group=tuple(word_group),
        sentence_group=tuple(sentence_group),
    )


def align_rationale(spans: list[tuple[int, int]], text: TokenizedText) -> RationaleMask:
    """Mark every token that overlaps any span by at least one character."""
    for start, end in spans:
        if start < 0 or end > len(text.source) or start > end:
            raise DataValidationError(
                f"span [{start},{end}) outside text bounds [0,{len(text.source)})"
            )
    bits = []
    for tok_start, tok_end in text.offsets:
        hit = any(max(tok_start, s) < min(tok_end, e) for s, e in spans)
        bits.append(1 if hit else 0)
    return RationaleMask(tuple(bits))


def merge_annotations(masks: list[RationaleMask]) -> RationaleMask | Discarded:
    """Majority-vote masks per token; any exact tie discards the sample."""
    if not masks:
        raise DataValidationError("need at least one mask")
    n = len(masks[0])
    if any(len(m) != n for m in masks):
        raise DataValidationError("masks have differing lengths")
    merged = []
    for i in range(n):
        ones = sum(m.bits[i] for m in masks)
        zeros = len(masks) - ones
        if ones == zeros:
            return DISCARDED
        merged.append(1 if ones > zeros else 0)
    return RationaleMask(tuple(merged))


def group_indices(text: TokenizedText, granularity: str) -> list[list[int]]:
    """Token index lists per group at the requested granularity."""
    if granularity == "token":
        return [[i] for i in range(len(text))]
    if granularity == "word":
        groups = text.word_group
    elif granularity == "sentence":
        groups = text.sentence_group
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    out: list[list[int]] = []
    for i, g in enumerate(groups):
        if not out or g != groups[i - 1]:
            out.append([])
        out[-1].append(i)
    return out


def regroup(values, text: TokenizedText, granularity: str, *, as_mask: bool = False) -> list:
    """Collapse per-token values to per-group values.

    Scores aggregate by arithmetic mean; masks by any-member-set.  Token
    granularity is the identity.
    """
    values = list(values)
    if len(values) != len(text):
        raise DataValidationError(f"value length {len(values)} != token count {len(text)}")
    if granularity == "token":
        return values
    out = []
    for members in group_indices(text, granularity):
        vals = [values[i] for i in members]
        if as_mask:
            out.append(1 if any(vals) else 0)
        else:
            out.append(sum(vals) / len(vals))
    return out


def _parse_spans(raw, what: str) -> list[tuple[int, int]]:
    if not isinstance(raw, list):
        raise DataValidationError(f"{what} must be a list of [start,end) pairs")
    spans = []
    for item in raw:
        if not (isinstance(item, list) and len(item) == 2 and all(isinstance(v, int) for v in item)):
            raise DataValidationError(f"{what} entry {item!r} is not an [int,int] pair")
        spans.append((item[0], item[1]))
    return spans


def load_dataset(path, tokenizer=tokenize) -> list[PairInstance]:
    """Load a line-delimited dataset of post/claim records.

    Each line holds one object: ``{"id", "post", "claim", "post_rationale",
    "claim_rationale"}`` with rationales as half-open character spans.
    Errors carry the 1-based line number of the offending record.
    """
    instances: list[PairInstance] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed record: {exc}", line=lineno) from exc
            try:
                missing = {"id", "post", "claim", "post_rationale", "claim_rationale"} - set(record)
                if missing:
                    raise DataValidationError(f"missing fields {sorted(missing)}")
                pair_id = str(record["id"])
                if pair_id in seen_ids:
                    raise DataValidationError(f"duplicate id {pair_id!r}")
                post = tokenizer(record["post"])
                claim = tokenizer(record["claim"])
                instances.append(
                    PairInstance(
                        id=pair_id,
                        post=post,
                        claim=claim,
                        post_gold=align_rationale(_parse_spans(record["post_rationale"], "post_rationale"), post),
                        claim_gold=align_rationale(_parse_spans(record["claim_rationale"], "claim_rationale"), claim),
                    )
                )
                seen_ids.add(pair_id)
            except DataValidationError as exc:
                raise DatasetError(str(exc), line=lineno) from exc
    if not instances:
        warnings.warn(f"dataset {path} is empty", stacklevel=2)
    return instances
