"""Closed-vocabulary word-level tokenization and one-hot encoding.

Sentences are lowercased, NFC-normalized, and split on whitespace and
punctuation boundaries (punctuation kept as tokens).  The five reserved
tokens render as literal words (``<cls>``, ``<sep>``, ...) and are
recognized atomically by the tokenizer, so a decoded sentence containing
them re-encodes to the same rows.
"""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCorpus, EmptySentence, IdOutOfRange

CLS = "<cls>"
SEP = "<sep>"
UNK = "<unk>"
PAD = "<pad>"
REF = "<ref>"
SPECIAL_TOKENS = (CLS, SEP, UNK, PAD, REF)

_TOKEN_RE = re.compile(
    "|".join(re.escape(t) for t in SPECIAL_TOKENS) + r"|\w+|[^\w\s]"
)


def tokenize(text: str) -> list[str]:
    """Lowercase, NFC-normalize, and split into word/punctuation tokens."""
    return _TOKEN_RE.findall(unicodedata.normalize("NFC", text).lower())


@dataclass(frozen=True)
class Vocabulary:
    """Immutable closed token inventory with a dense id space.

    The five reserved tokens occupy ids 0..4; corpus tokens follow in
    descending frequency order (ties lexicographic).
    """

    tokens: tuple[str, ...]
    index_of: dict[str, int] = field(repr=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate token strings in vocabulary")
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError("reserved tokens must occupy ids 0..4")
        for i, tok in enumerate(self.tokens):
            if self.index_of[tok] != i:
                raise ValueError(f"index_of[{tok!r}] != {i}")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def cls_id(self) -> int:
        return self.index_of[CLS]

    @property
    def sep_id(self) -> int:
        return self.index_of[SEP]

    @property
    def unk_id(self) -> int:
        return self.index_of[UNK]

    @property
    def pad_id(self) -> int:
        return self.index_of[PAD]

    @property
    def ref_id(self) -> int:
        return self.index_of[REF]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    def id_for(self, token: str) -> int:
        """Id of ``token``, falling back to the unknown-token id."""
        return self.index_of.get(token, self.unk_id)

    def fingerprint(self) -> int:
        """Stable 64-bit hash of the full token inventory."""
        h = hashlib.blake2b(digest_size=8)
        h.update(b"vocab-v1\x00")
        for tok in self.tokens:
            h.update(tok.encode("utf-8"))
            h.update(b"\x00")
        return int.from_bytes(h.digest(), "little")


def build_vocabulary(corpus: list[str], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from raw sentences.

    Keeps every token whose corpus frequency is at least ``min_count``.
    Ordering is deterministic: reserved tokens first, then tokens by
    descending frequency, ties broken lexicographically.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: dict[str, int] = {}
    for sentence in corpus:
        for tok in tokenize(sentence):
            counts[tok] = counts.get(tok, 0) + 1
    if not counts:
        raise EmptyCorpus("corpus has no tokens after normalization")
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count and tok not in SPECIAL_TOKENS),
        key=lambda tok: (-counts[tok], tok),
    )
    tokens = SPECIAL_TOKENS + tuple(kept)
    return Vocabulary(tokens=tokens, index_of={t: i for i, t in enumerate(tokens)})


@dataclass(frozen=True, eq=False)
class EncodedInput:
    """A tokenized input as a one-hot row matrix plus segment layout.

    ``onehot`` has one row per token (reserved layout tokens included) and
    one column per vocabulary entry.  ``segment_bounds`` holds a half-open
    ``(start, end)`` row range for each sentence body; ``attackable`` is
    the set of rows eligible for perturbation (the target slot's body).
    """

    onehot: np.ndarray
    segment_bounds: tuple[tuple[int, int], ...]
    attackable: tuple[int, ...]
    target_slot: str

    def __post_init__(self):
        self.onehot.flags.writeable = False

    @property
    def n(self) -> int:
        return self.onehot.shape[0]

    def row_ids(self) -> np.ndarray:
        """Per-row argmax token ids (ties to the lowest id)."""
        return np.argmax(self.onehot, axis=1)

    def body_rows(self) -> list[int]:
        """All sentence-body rows across segments, in order."""
        return [r for start, end in self.segment_bounds for r in range(start, end)]


def encode(
    v: Vocabulary,
    first: str,
    second: str | None = None,
    target_slot: str = "first",
) -> EncodedInput:
    """Encode one sentence (or a pair) as a one-hot matrix.

    Layout is ``[CLS, first, SEP]`` for a single sentence and
    ``[CLS, first, SEP, SEP, second, SEP]`` for a pair.  Unknown words map
    to the unknown-token id.  Only the ``target_slot`` body rows are
    attackable.
    """
    if target_slot not in ("first", "second"):
        raise ValueError(f"target_slot must be 'first' or 'second', got {target_slot!r}")
    first_toks = tokenize(first)
    if not first_toks:
        raise EmptySentence("first sentence tokenizes to zero tokens")
    second_toks: list[str] | None = None
    if second is not None:
        second_toks = tokenize(second)
        if not second_toks:
            raise EmptySentence("second sentence tokenizes to zero tokens")
    if target_slot == "second" and second_toks is None:
        raise EmptySentence("target_slot is 'second' but no second sentence given")

    ids = [v.cls_id] + [v.id_for(t) for t in first_toks] + [v.sep_id]
    bounds = [(1, 1 + len(first_toks))]
    if second_toks is not None:
        start = len(ids) + 1
        ids += [v.sep_id] + [v.id_for(t) for t in second_toks] + [v.sep_id]
        bounds.append((start, start + len(second_toks)))

    onehot = np.zeros((len(ids), v.size), dtype=np.float64)
    onehot[np.arange(len(ids)), ids] = 1.0
    slot_index = 0 if target_slot == "first" else 1
    start, end = bounds[slot_index]
    return EncodedInput(
        onehot=onehot,
        segment_bounds=tuple(bounds),
        attackable=tuple(range(start, end)),
        target_slot=target_slot,
    )


def decode(v: Vocabulary, row_ids) -> str:
    """Render token ids as a sentence; reserved tokens keep their literal form."""
    words = []
    for i in row_ids:
        i = int(i)
        if not 0 <= i < v.size:
            raise IdOutOfRange(f"token id {i} outside [0, {v.size})")
        words.append(v.tokens[i])
    return " ".join(words)


def decode_slot(v: Vocabulary, e: EncodedInput, slot_index: int, row_ids=None) -> str:
    """Decode one sentence body (no layout tokens) from an encoded input.

    ``row_ids`` overrides the argmax ids, letting callers decode a
    perturbed candidate against the original layout.
    """
    ids = e.row_ids() if row_ids is None else np.asarray(row_ids)
    start, end = e.segment_bounds[slot_index]
    return decode(v, ids[start:end])


def baseline_encoding(e: EncodedInput, v: Vocabulary) -> EncodedInput:
    """Replace every sentence-body row with a one-hot at the reference id.

    Layout rows (CLS/SEP) are untouched, so the result is the all-reference
    input used as the attribution baseline.  Idempotent.
    """
    onehot = e.onehot.copy()
    for start, end in e.segment_bounds:
        onehot[start:end, :] = 0.0
        onehot[start:end, v.ref_id] = 1.0
    return EncodedInput(
        onehot=onehot,
        segment_bounds=e.segment_bounds,
        attackable=e.attackable,
        target_slot=e.target_slot,
    )


@dataclass(frozen=True)
class CorpusRecord:
    """One corpus line: an integer label plus one or two sentences."""

    label: int
    first: str
    second: str | None = None


def load_corpus(path) -> list[CorpusRecord]:
    """Read a tab-separated corpus file.

    Each line is ``label<TAB>sentence`` or ``label<TAB>sentence1<TAB>sentence2``
    with integer string labels.  Blank lines are skipped.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0].strip().lstrip("-").isdigit():
                raise ValueError(f"{path}:{lineno}: expected label<TAB>sentence[<TAB>sentence2]")
            label = int(parts[0])
            second = parts[2] if len(parts) == 3 else None
            records.append(CorpusRecord(label=label, first=parts[1], second=second))
    return records
