"""Modified-corpus construction: function-word masks, content-word masks,
and part-of-speech sequences.

Word spans are maximal runs of [a-z0-9']; everything else passes through
untouched by the masks and is dropped by the POS transform. The stop-word
list is a frozen 318-entry snapshot shipped as package data.
"""

from __future__ import annotations

import enum
import logging
import re
from importlib import resources
from pathlib import Path

from .errors import TaggerError

log = logging.getLogger(__name__)

FUNC_TOKEN = "<FUNC>"
CONTENT_TOKEN = "<CONTENT>"

_WORD = re.compile(r"[a-z0-9']+")

# Penn-Treebank-style word tag set; the builtin tagger only ever emits these.
PTB_TAGS = (
    "CC CD DT EX FW IN JJ JJR JJS LS MD NN NNS NNP NNPS PDT POS PRP PRP$ "
    "RB RBR RBS RP SYM TO UH VB VBD VBG VBN VBP VBZ WDT WP WP$ WRB"
).split()


class AblationMode(enum.Enum):
    INTACT = "intact"
    CONTENT_ONLY = "content_only"      # function words masked out
    FUNCTION_ONLY = "function_only"    # content words masked out
    POS_ONLY = "pos_only"

    @classmethod
    def parse(cls, name: str) -> "AblationMode":
        for m in cls:
            if m.value == name or m.name.lower() == name.lower():
                return m
        raise ValueError(f"unknown ablation mode {name!r}")

    def special_tokens(self) -> list[str]:
        if self is AblationMode.CONTENT_ONLY:
            return [FUNC_TOKEN]
        if self is AblationMode.FUNCTION_ONLY:
            return [CONTENT_TOKEN]
        if self is AblationMode.POS_ONLY:
            return list(PTB_TAGS)
        return []


def load_stoplist(path: str | Path | None = None) -> frozenset[str]:
    """Function-word list; defaults to the vendored snapshot."""
    if path is None:
        text = resources.files("stylolm.data").joinpath("stopwords.txt").read_text()
    else:
        text = Path(path).read_text()
    words = frozenset(w.strip() for w in text.splitlines() if w.strip())
    if not words:
        raise ValueError("empty stop-word list")
    return words


def segment_words(text: str) -> list[tuple[str, bool]]:
    """Split into (span, is_word) pieces whose concatenation is the input."""
    spans = []
    pos = 0
    for m in _WORD.finditer(text):
        if m.start() > pos:
            spans.append((text[pos:m.start()], False))
        spans.append((m.group(0), True))
        pos = m.end()
    if pos < len(text):
        spans.append((text[pos:], False))
    return spans


def mask_function_words(text: str, stoplist: frozenset[str]) -> str:
    """Replace every stop-listed word span with the function-word token."""
    return "".join(
        FUNC_TOKEN if is_word and span in stoplist else span
        for span, is_word in segment_words(text)
    )


def mask_content_words(text: str, stoplist: frozenset[str]) -> str:
    """Replace every non-stop-listed word span with the content-word token."""
    return "".join(
        CONTENT_TOKEN if is_word and span not in stoplist else span
        for span, is_word in segment_words(text)
    )


class BuiltinTagger:
    """Lexicon + suffix-rule tagger over the Penn tag set.

    Approximate by design: exact-fidelity runs supply externally produced
    tag files instead (see ExternalTagger).
    """

    def __init__(self, lexicon: dict[str, str] | None = None):
        if lexicon is None:
            lexicon = {}
            data = resources.files("stylolm.data").joinpath("tag_lexicon.txt").read_text()
            for line in data.splitlines():
                if not line.strip():
                    continue
                word, tag = line.split("\t")
                lexicon[word] = tag
        bad = set(lexicon.values()) - set(PTB_TAGS)
        if bad:
            raise TaggerError(f"lexicon uses unregistered tags: {sorted(bad)}")
        self.lexicon = lexicon

    @staticmethod
    def _suffix_tag(word: str) -> str:
        if word[0].isdigit():
            return "CD"
        if len(word) > 4 and word.endswith("ly"):
            return "RB"
        if len(word) > 4 and word.endswith("ing"):
            return "VBG"
        if len(word) > 3 and word.endswith("ed"):
            return "VBD"
        if len(word) > 4 and word.endswith("est"):
            return "JJS"
        if len(word) > 4 and word.endswith(("ness", "ment", "tion", "sion", "ship", "hood", "ity")):
            return "NN"
        if len(word) > 4 and word.endswith("ous"):
            return "JJ"
        if len(word) > 4 and word.endswith("ful"):
            return "JJ"
        if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is", "'s")):
            return "NNS"
        return "NN"

    def tag_words(self, words: list[str], book: str | None = None) -> list[str]:
        return [self.lexicon.get(w) or self._suffix_tag(w) for w in words]


class ExternalTagger:
    """Pre-tagged corpus files: one "word<TAB>tag" line per word, aligned to
    segment_words output of the named book."""

    def __init__(self, tag_files: dict[str, str | Path]):
        self.tag_files = dict(tag_files)
        self._cache: dict[str, list[tuple[str, str]]] = {}

    def _load(self, book: str) -> list[tuple[str, str]]:
        if book not in self._cache:
            if book not in self.tag_files:
                raise TaggerError(f"no tag file registered for book {book!r}")
            pairs = []
            for lineno, line in enumerate(Path(self.tag_files[book]).read_text().splitlines(), 1):
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise TaggerError(f"{self.tag_files[book]}:{lineno}: expected word<TAB>tag")
                if parts[1] not in PTB_TAGS:
                    raise TaggerError(f"{self.tag_files[book]}:{lineno}: unregistered tag {parts[1]!r}")
                pairs.append((parts[0], parts[1]))
            self._cache[book] = pairs
        return self._cache[book]

    def tag_words(self, words: list[str], book: str | None = None) -> list[str]:
        if book is None:
            raise TaggerError("external tagger needs the book name to align tags")
        pairs = self._load(book)
        if len(pairs) != len(words):
            raise TaggerError(
                f"tag file for {book!r} has {len(pairs)} words, book has {len(words)}")
        for i, ((w, _), word) in enumerate(zip(pairs, words)):
            if w != word:
                raise TaggerError(f"tag file for {book!r} diverges at word {i}: {w!r} != {word!r}")
        return [t for _, t in pairs]


def load_tagger(source: str | dict[str, str | Path] = "builtin"):
    """"builtin" -> BuiltinTagger; a {book: tag file} mapping -> ExternalTagger."""
    if source == "builtin":
        return BuiltinTagger()
    if isinstance(source, dict):
        return ExternalTagger(source)
    raise TaggerError(f"unknown tagger source {source!r}")


def pos_transform(text: str, tagger, book: str | None = None) -> str:
    """Replace each word with its part-of-speech tag; non-word spans are
    dropped, leaving single spaces between tags."""
    words = [span for span, is_word in segment_words(text) if is_word]
    if not words:
        return ""
    tags = tagger.tag_words(words, book=book)
    fallback = sum(1 for t in tags if t is None)
    if fallback:
        log.warning("tagger returned no tag for %d word(s); fell back to NN", fallback)
        tags = [t if t is not None else "NN" for t in tags]
    return " ".join(tags)


def apply_mode(text: str, mode: AblationMode, stoplist: frozenset[str] | None = None,
               tagger=None, book: str | None = None) -> str:
    """Route a normalized text through the corpus transform for ``mode``."""
    if mode is AblationMode.INTACT:
        return text
    if stoplist is None:
        stoplist = load_stoplist()
    if mode is AblationMode.CONTENT_ONLY:
        return mask_function_words(text, stoplist)
    if mode is AblationMode.FUNCTION_ONLY:
        return mask_content_words(text, stoplist)
    if mode is AblationMode.POS_ONLY:
        return pos_transform(text, tagger or BuiltinTagger(), book=book)
    raise ValueError(f"unhandled mode {mode}")
