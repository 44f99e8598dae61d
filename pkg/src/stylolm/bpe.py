"""Byte-level BPE tokenizer.

Tokens are byte strings; any input round-trips exactly. The vocab/merges
file format matches the widely published GPT-2 layout (JSON token->id map
plus one merge per line in the byte-to-unicode printable encoding), so a
standard 50257-entry vocabulary loads directly. A small trainable mode
builds a vocabulary from a corpus for desk-scale work.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .errors import VocabularyError

# ASCII rendering of the GPT-2 pre-tokenization pattern. Corpora are
# ASCII after normalization, where this splits identically.
_SPLIT = re.compile(
    r"'(?:s|t|re|ve|m|ll|d)| ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|\s+(?!\S)|\s+"
)

_INF = float("inf")


def _bytes_to_unicode() -> dict[int, str]:
    """The published byte<->printable-unicode table used by GPT-2 vocab files."""
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("\xa1"), ord("\xac") + 1)) \
        + list(range(ord("\xae"), ord("\xff") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, map(chr, cs)))


_BYTE_TO_UNI = _bytes_to_unicode()
_UNI_TO_BYTE = {c: b for b, c in _BYTE_TO_UNI.items()}


def _token_to_display(token: bytes) -> str:
    return "".join(_BYTE_TO_UNI[b] for b in token)


def _display_to_token(s: str) -> bytes:
    try:
        return bytes(_UNI_TO_BYTE[c] for c in s)
    except KeyError as e:
        raise VocabularyError(f"token {s!r} contains a character outside the byte table") from e


class Vocabulary:
    """Byte-token vocabulary with ordered merges and registered specials.

    ids are dense in [0, V). Special-token strings encode to single ids
    and are never split by merges.
    """

    def __init__(self, id_to_token: list[bytes], merges: list[tuple[bytes, bytes]],
                 special_tokens: dict[str, int] | None = None):
        self.id_to_token = list(id_to_token)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise VocabularyError("duplicate token strings in vocabulary")
        self.merges = list(merges)
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self.special_tokens = dict(special_tokens or {})
        self._special_ids = set(self.special_tokens.values())
        self._special_split = None
        if self.special_tokens:
            pats = sorted(self.special_tokens, key=len, reverse=True)
            self._special_split = re.compile("(" + "|".join(re.escape(s) for s in pats) + ")")
        self._cache: dict[bytes, list[int]] = {}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def register_special(self, literal: str) -> int:
        """Register a special token; returns its id. Idempotent per literal.
        A token whose bytes already exist in the vocabulary is promoted in
        place, so reloading saved files keeps ids stable."""
        if literal in self.special_tokens:
            return self.special_tokens[literal]
        raw = literal.encode("utf-8")
        if raw in self.token_to_id:
            new_id = self.token_to_id[raw]
        else:
            new_id = len(self.id_to_token)
            self.id_to_token.append(raw)
            self.token_to_id[raw] = new_id
        self.special_tokens[literal] = new_id
        self._special_ids.add(new_id)
        pats = sorted(self.special_tokens, key=len, reverse=True)
        self._special_split = re.compile("(" + "|".join(re.escape(s) for s in pats) + ")")
        return new_id

    # -- encoding ------------------------------------------------------

    def _bpe(self, token: bytes) -> list[int]:
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        word = [bytes([b]) for b in token]
        while len(word) >= 2:
            pairs = set(zip(word, word[1:]))
            best = min(pairs, key=lambda p: self.ranks.get(p, _INF))
            if best not in self.ranks:
                break
            first, second = best
            merged = []
            i = 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == first and word[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(word[i])
                    i += 1
            word = merged
        try:
            ids = [self.token_to_id[w] for w in word]
        except KeyError as e:
            raise VocabularyError(f"merged token {e.args[0]!r} missing from vocabulary") from e
        if len(self._cache) < 200_000:
            self._cache[token] = ids
        return ids

    def encode_bytes(self, raw: bytes) -> list[int]:
        """Encode arbitrary bytes (no special-token recognition)."""
        ids: list[int] = []
        # latin-1 maps bytes 1:1 onto code points, so the split pattern can
        # segment raw bytes without loss.
        for m in _SPLIT.finditer(raw.decode("latin-1")):
            ids.extend(self._bpe(m.group(0).encode("latin-1")))
        return ids

    def encode(self, text: str) -> list[int]:
        """Encode text; registered special-token literals become single ids."""
        if self._special_split is None:
            return self.encode_bytes(text.encode("utf-8"))
        ids: list[int] = []
        for seg in self._special_split.split(text):
            if not seg:
                continue
            if seg in self.special_tokens:
                ids.append(self.special_tokens[seg])
            else:
                ids.extend(self.encode_bytes(seg.encode("utf-8")))
        return ids

    def decode_bytes(self, ids) -> bytes:
        v = self.size
        parts = []
        for i in ids:
            i = int(i)
            if not 0 <= i < v:
                raise VocabularyError(f"id {i} out of range [0, {v})")
            parts.append(self.id_to_token[i])
        return b"".join(parts)

    def decode(self, ids) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")


def byte_vocabulary(special_tokens: list[str] | None = None) -> Vocabulary:
    """No-merge fallback: 256 byte tokens plus any specials."""
    vocab = Vocabulary([bytes([b]) for b in range(256)], merges=[])
    for s in special_tokens or []:
        vocab.register_special(s)
    return vocab


def train_bpe(corpus: str, target_vocab: int,
              special_tokens: list[str] | None = None) -> Vocabulary:
    """Greedy BPE training: repeatedly merge the most frequent adjacent pair
    (ties broken lexicographically) until ``target_vocab`` is reached or no
    pair occurs twice. Merges never cross pre-token or special boundaries."""
    if target_vocab < 257:
        raise VocabularyError("target_vocab must be >= 257")
    specials = list(special_tokens or [])
    vocab = byte_vocabulary(specials)

    segs = [corpus]
    if vocab._special_split is not None:
        segs = [s for s in vocab._special_split.split(corpus) if s and s not in vocab.special_tokens]
    counts: dict[tuple[bytes, ...], int] = {}
    for seg in segs:
        for m in _SPLIT.finditer(seg):
            key = tuple(bytes([b]) for b in m.group(0).encode("utf-8"))
            counts[key] = counts.get(key, 0) + 1

    words = list(counts.items())
    merges: list[tuple[bytes, bytes]] = []
    while vocab.size < target_vocab:
        pair_counts: dict[tuple[bytes, bytes], int] = {}
        for word, cnt in words:
            for pair in zip(word, word[1:]):
                pair_counts[pair] = pair_counts.get(pair, 0) + cnt
        if not pair_counts:
            break
        best = max(pair_counts.items(), key=lambda kv: (kv[1], tuple(-b for b in kv[0][0] + kv[0][1])))
        if best[1] < 2:
            break
        pair = best[0]
        merged_tok = pair[0] + pair[1]
        new_words = []
        for word, cnt in words:
            lst = list(word)
            i = 0
            out = []
            while i < len(lst):
                if i < len(lst) - 1 and lst[i] == pair[0] and lst[i + 1] == pair[1]:
                    out.append(merged_tok)
                    i += 2
                else:
                    out.append(lst[i])
                    i += 1
            new_words.append((tuple(out), cnt))
        words = new_words
        merges.append(pair)
        # insert before the specials so specials stay at the tail
        insert_at = vocab.size - len(vocab.special_tokens)
        vocab.id_to_token.insert(insert_at, merged_tok)
        vocab.token_to_id = {t: i for i, t in enumerate(vocab.id_to_token)}
        vocab.special_tokens = {s: vocab.token_to_id[s.encode("utf-8")] for s in vocab.special_tokens}
        vocab._special_ids = set(vocab.special_tokens.values())
        vocab.ranks[pair] = len(merges) - 1
        vocab.merges = merges
        vocab._cache.clear()
    return vocab


def load_vocabulary(vocab_file: str | Path, merges_file: str | Path,
                    special_tokens: list[str] | None = None) -> Vocabulary:
    """Load GPT-2-format vocab/merges files. ids must be dense in [0, V)."""
    with open(vocab_file, encoding="utf-8") as f:
        mapping = json.load(f)
    n = len(mapping)
    id_to_token: list[bytes | None] = [None] * n
    for disp, idx in mapping.items():
        if not isinstance(idx, int) or not 0 <= idx < n:
            raise VocabularyError(f"id {idx!r} out of dense range [0, {n})")
        if id_to_token[idx] is not None:
            raise VocabularyError(f"duplicate id {idx}")
        # Entries that fail the byte table (e.g. <|endoftext|>) are treated
        # as special literals.
        try:
            id_to_token[idx] = _display_to_token(disp)
        except VocabularyError:
            id_to_token[idx] = disp.encode("utf-8")
    if any(t is None for t in id_to_token):
        raise VocabularyError("gap in vocabulary ids")

    merges: list[tuple[bytes, bytes]] = []
    with open(merges_file, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or (lineno == 1 and line.startswith("#")):
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise VocabularyError(f"{merges_file}:{lineno}: malformed merge line {line!r}")
            merges.append((_display_to_token(parts[0]), _display_to_token(parts[1])))

    specials: dict[str, int] = {}
    for disp, idx in mapping.items():
        if disp.startswith("<|") and disp.endswith("|>"):
            specials[disp] = idx
    vocab = Vocabulary(id_to_token, merges, specials)
    for s in special_tokens or []:
        vocab.register_special(s)
    return vocab


def save_vocabulary(vocab: Vocabulary, vocab_file: str | Path, merges_file: str | Path) -> None:
    """Write GPT-2-format files (inverse of load_vocabulary)."""
    mapping = {}
    for i, tok in enumerate(vocab.id_to_token):
        if i in vocab._special_ids:
            mapping[tok.decode("utf-8")] = i
        else:
            mapping[_token_to_display(tok)] = i
    with open(vocab_file, "w", encoding="utf-8") as f:
        json.dump(mapping, f, ensure_ascii=False, sort_keys=False)
    with open(merges_file, "w", encoding="utf-8") as f:
        f.write("#version: 0.2\n")
        for a, b in vocab.merges:
            f.write(f"{_token_to_display(a)} {_token_to_display(b)}\n")
