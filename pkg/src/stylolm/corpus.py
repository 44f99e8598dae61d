"""Book acquisition, cleaning, normalization, and budgeted sub-sequence sampling.

Each author's training sequence is assembled from one contiguous slice per
non-held-out book, slice length proportional to book length (largest-remainder
rounding so the slices sum exactly to the token budget), slices shuffled and
concatenated. All randomness flows from a per-plan seed.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientCorpusError, MalformedSourceError

log = logging.getLogger(__name__)

START_MARKER = "*** START OF"
END_MARKER = "*** END OF"

# Line-level removals applied after marker stripping. Extendable per manifest.
DEFAULT_ILLUSTRATION_PATTERNS = [r"^\s*\[?_?Illustration"]
DEFAULT_TRANSCRIBER_PATTERNS = [
    r"^\s*\[?Transcriber",
    r"^\s*Produced by",
    r"^\s*This eBook is for the use of",
]
DEFAULT_HEADING_PATTERNS = [
    r"^\s*(CHAPTER|Chapter|BOOK|PART|STAVE)\s+([IVXLCDM]+|[0-9]+|[A-Z]+)\b[.:]?\s*$",
    r"^\s*[IVXLCDM]+\.\s*$",
]

_WS_RUN = re.compile(r"\s+")
_NON_ASCII = re.compile(r"[^\x00-\x7f]")


@dataclass
class Book:
    author_id: str
    title: str
    raw_text: str = ""
    normalized_text: str = ""
    token_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))

    @property
    def n_tokens(self) -> int:
        return int(self.token_ids.size)


@dataclass
class AuthorCorpus:
    author_id: str
    books: list[Book]

    @property
    def total_tokens(self) -> int:
        return sum(b.n_tokens for b in self.books)


@dataclass
class SamplingPlan:
    seed: int
    held_out_book: int
    budget: int
    per_book: list[tuple[int, int, int]]  # (book index, start offset, length)


@dataclass
class TrainingSequence:
    token_ids: np.ndarray
    provenance: list[tuple[int, int, int]]  # post-shuffle (book, start, length)


def strip_gutenberg(raw: str,
                    illustration_patterns: list[str] | None = None,
                    transcriber_patterns: list[str] | None = None,
                    heading_patterns: list[str] | None = None) -> str:
    """Cut the text to the region between the START/END marker lines and drop
    boilerplate lines. Missing markers leave the text intact (with a warning);
    an end marker before the start marker raises MalformedSourceError."""
    if not raw:
        raise MalformedSourceError("empty source text")
    lines = raw.splitlines()
    start_idx = next((i for i, ln in enumerate(lines) if START_MARKER in ln), None)
    end_idx = next((i for i, ln in enumerate(lines) if END_MARKER in ln), None)
    if start_idx is not None and end_idx is not None and start_idx > end_idx:
        raise MalformedSourceError("start marker appears after end marker")
    if start_idx is None and end_idx is None:
        log.warning("no Gutenberg start/end markers found; keeping full text")
        body = lines
    else:
        lo = start_idx + 1 if start_idx is not None else 0
        hi = end_idx if end_idx is not None else len(lines)
        if start_idx is None or end_idx is None:
            log.warning("only one Gutenberg marker found; stripping one-sided")
        body = lines[lo:hi]

    pats = [re.compile(p) for p in (
        (illustration_patterns if illustration_patterns is not None else DEFAULT_ILLUSTRATION_PATTERNS)
        + (transcriber_patterns if transcriber_patterns is not None else DEFAULT_TRANSCRIBER_PATTERNS)
        + (heading_patterns if heading_patterns is not None else DEFAULT_HEADING_PATTERNS)
    )]
    kept = [ln for ln in body if not any(p.match(ln) for p in pats)]
    return "\n".join(kept).strip("\n")


def normalize(text: str) -> str:
    """Lowercased ASCII with single-space whitespace. Non-ASCII characters
    become spaces before collapsing, so removing them never glues words
    together. Idempotent."""
    text = _NON_ASCII.sub(" ", text)
    text = _WS_RUN.sub(" ", text)
    return text.lower().strip()


def compute_token_budget(corpora: list[AuthorCorpus]) -> int:
    """Smallest per-author token total after dropping each author's single
    longest book (ties broken by lowest book index)."""
    totals = []
    for corpus in corpora:
        if len(corpus.books) < 2:
            raise InsufficientCorpusError(
                f"author {corpus.author_id!r} has {len(corpus.books)} book(s); need >= 2")
        counts = [b.n_tokens for b in corpus.books]
        longest = max(range(len(counts)), key=lambda i: (counts[i], -i))
        totals.append(sum(counts) - counts[longest])
    if not totals:
        raise InsufficientCorpusError("no authors given")
    return min(totals)


def _largest_remainder(weights: list[int], budget: int) -> list[int]:
    total = sum(weights)
    raw = [budget * w / total for w in weights]
    lengths = [int(np.floor(r)) for r in raw]
    short = budget - sum(lengths)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - lengths[i]), i))
    for i in order[:short]:
        lengths[i] += 1
    return lengths


def _plan_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    starts, shuffle = ss.spawn(2)
    return np.random.default_rng(starts), np.random.default_rng(shuffle)


def make_sampling_plan(corpus: AuthorCorpus, held_out: int, budget: int, seed: int) -> SamplingPlan:
    """Assign one (start, length) slice per non-held-out book, lengths
    proportional by largest remainder and starts uniform in the feasible
    range. Deterministic per seed."""
    if not 0 <= held_out < len(corpus.books):
        raise InsufficientCorpusError(f"held-out index {held_out} out of range")
    idxs = [i for i in range(len(corpus.books)) if i != held_out]
    counts = [corpus.books[i].n_tokens for i in idxs]
    available = sum(counts)
    if budget > available:
        raise InsufficientCorpusError(
            f"budget {budget} exceeds {available} available tokens for {corpus.author_id!r}")
    lengths = _largest_remainder(counts, budget)
    rng, _ = _plan_rngs(seed)
    per_book = []
    for book_idx, n, length in zip(idxs, counts, lengths):
        start = int(rng.integers(0, n - length + 1))
        per_book.append((book_idx, start, length))
    return SamplingPlan(seed=seed, held_out_book=held_out, budget=budget, per_book=per_book)


def build_training_sequence(plan: SamplingPlan, corpus: AuthorCorpus) -> TrainingSequence:
    """Extract the planned slices, shuffle their order with the plan's seeded
    RNG, and concatenate into one budget-length sequence."""
    for book_idx, start, length in plan.per_book:
        if book_idx == plan.held_out_book:
            raise InsufficientCorpusError("plan assigns a slice to the held-out book")
        n = corpus.books[book_idx].n_tokens
        if start < 0 or start + length > n:
            raise InsufficientCorpusError(
                f"slice ({start}, {length}) outside book {book_idx} of {n} tokens")
    _, shuffle_rng = _plan_rngs(plan.seed)
    order = shuffle_rng.permutation(len(plan.per_book))
    provenance = [plan.per_book[i] for i in order]
    parts = [corpus.books[b].token_ids[s:s + ln] for b, s, ln in provenance]
    token_ids = np.concatenate(parts) if parts else np.empty(0, dtype=np.int32)
    if token_ids.size != plan.budget:
        raise InsufficientCorpusError(
            f"assembled {token_ids.size} tokens, expected budget {plan.budget}")
    return TrainingSequence(token_ids=token_ids.astype(np.int32), provenance=provenance)


def corpus_stats(corpora: list[AuthorCorpus]) -> list[tuple[str, str, int]]:
    """Per-book token counts with per-author totals, as (author, title, tokens)
    rows; each author block ends with a ("<author>", "Total", n) row."""
    rows = []
    for corpus in corpora:
        for b in corpus.books:
            rows.append((corpus.author_id, b.title, b.n_tokens))
        if corpus.books:
            rows.append((corpus.author_id, "Total", corpus.total_tokens))
    return rows


def write_stats_csv(rows: list[tuple[str, str, int]], path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["author", "title", "tokens"])
        for r in rows:
            w.writerow(r)
