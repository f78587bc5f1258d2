"""A small differentiable text classifier with exact input gradients.

The network embeds each input row by a matrix product (so real-valued,
perturbed rows are first-class inputs, not just one-hot ones), mean-pools
the sentence-body rows per segment, and classifies the concatenated pooled
vector with a single tanh hidden layer.  All gradients are hand-written in
double precision; no autograd framework is involved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptFile,
    FormatVersionMismatch,
    LabelOutOfRange,
    ShapeMismatch,
    VocabFingerprintMismatch,
)
from .text import REF, SPECIAL_TOKENS, CorpusRecord, Vocabulary, encode

REF_ID = SPECIAL_TOKENS.index(REF)
FORMAT_VERSION = 1
_MAGIC = b"OBF1"


@dataclass(eq=False)
class ClassifierCheckpoint:
    """Weights of the classifier plus the vocabulary it was trained against.

    The pooled vector concatenates two segment means (a single-segment
    input duplicates its mean), so ``hidden_weights`` is ``(2d, h)``.
    The reference-token embedding row is pinned to the zero vector.
    """

    embedding: np.ndarray       # (n_words, d)
    hidden_weights: np.ndarray  # (2d, h)
    hidden_bias: np.ndarray     # (h,)
    out_weights: np.ndarray     # (h, c)
    out_bias: np.ndarray        # (c,)
    label_names: list[str]
    vocab_fingerprint: int
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.validate()

    @property
    def n_words(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden(self) -> int:
        return self.hidden_weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.out_bias.shape[0]

    def validate(self):
        d = self.dim
        if self.hidden_weights.shape[0] != 2 * d:
            raise ShapeMismatch("hidden layer expects the concatenated 2d pooled vector")
        if self.out_weights.shape != (self.hidden, self.n_classes):
            raise ShapeMismatch("output layer shape mismatch")
        for m in (self.embedding, self.hidden_weights, self.hidden_bias,
                  self.out_weights, self.out_bias):
            if not np.all(np.isfinite(m)):
                raise ValueError("checkpoint contains non-finite values")
        if np.any(self.embedding[REF_ID] != 0.0):
            raise ValueError("reference-token embedding row must be exactly zero")
        if len(self.label_names) != self.n_classes:
            raise ValueError("one label name per class required")


@dataclass(frozen=True, eq=False)
class ForwardResult:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_label: int


@dataclass(frozen=True)
class LogitOf:
    """Attribute/differentiate the raw logit of one class."""

    class_index: int


@dataclass(frozen=True, eq=False)
class LossVsReference:
    """Cross-entropy between fixed reference probabilities and the model's
    softmax output; the loss the attack descends."""

    reference_probs: np.ndarray


def _pool(emb: np.ndarray, segment_bounds) -> np.ndarray:
    means = [emb[start:end].mean(axis=0) for start, end in segment_bounds]
    if len(means) == 1:
        means = [means[0], means[0]]
    return np.concatenate(means)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def forward(ckpt: ClassifierCheckpoint, e: np.ndarray, segment_bounds) -> ForwardResult:
    """Run the classifier on a (possibly real-valued) row matrix.

    Each row is embedded by ``row @ embedding``; sentence-body rows are
    mean-pooled per segment and layout rows (CLS/SEP) are ignored.
    """
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != ckpt.n_words:
        raise ShapeMismatch(f"expected (n, {ckpt.n_words}) input, got {e.shape}")
    emb = e @ ckpt.embedding
    pooled = _pool(emb, segment_bounds)
    t = np.tanh(pooled @ ckpt.hidden_weights + ckpt.hidden_bias)
    logits = t @ ckpt.out_weights + ckpt.out_bias
    probs = _softmax(logits)
    return ForwardResult(logits=logits, probabilities=probs,
                         predicted_label=int(np.argmax(logits)))


def pooled_head_forward(ckpt: ClassifierCheckpoint, pooled: np.ndarray):
    """Classifier head on an already-pooled vector.  Returns (logits, probs, tanh activations)."""
    t = np.tanh(pooled @ ckpt.hidden_weights + ckpt.hidden_bias)
    logits = t @ ckpt.out_weights + ckpt.out_bias
    return logits, _softmax(logits), t


def pooled_head_gradient(ckpt: ClassifierCheckpoint, t: np.ndarray,
                         g_logits: np.ndarray) -> np.ndarray:
    """Backpropagate a logits gradient to the pooled vector."""
    g_t = g_logits @ ckpt.out_weights.T
    g_a = g_t * (1.0 - t * t)
    return g_a @ ckpt.hidden_weights.T


def _logits_gradient(probs: np.ndarray, target) -> np.ndarray:
    if isinstance(target, LogitOf):
        g = np.zeros_like(probs)
        if not 0 <= target.class_index < probs.shape[0]:
            raise ShapeMismatch(f"class index {target.class_index} out of range")
        g[target.class_index] = 1.0
        return g
    if isinstance(target, LossVsReference):
        ref = np.asarray(target.reference_probs, dtype=np.float64)
        if ref.shape != probs.shape:
            raise ShapeMismatch("reference probabilities shape mismatch")
        return probs - ref
    raise TypeError(f"unsupported gradient target {target!r}")


def input_gradient(ckpt: ClassifierCheckpoint, e: np.ndarray, segment_bounds,
                   target) -> np.ndarray:
    """Exact gradient of a scalar with respect to every input entry.

    ``target`` is either ``LogitOf(class)`` or ``LossVsReference(probs)``.
    Rows outside every segment (CLS/SEP) never enter the pooling, so their
    gradient is identically zero.
    """
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != ckpt.n_words:
        raise ShapeMismatch(f"expected (n, {ckpt.n_words}) input, got {e.shape}")
    emb = e @ ckpt.embedding
    pooled = _pool(emb, segment_bounds)
    _, probs, t = pooled_head_forward(ckpt, pooled)
    g_pooled = pooled_head_gradient(ckpt, t, _logits_gradient(probs, target))

    d = ckpt.dim
    seg_grads = [g_pooled[:d], g_pooled[d:]]
    if len(segment_bounds) == 1:
        seg_grads = [seg_grads[0] + seg_grads[1]]

    grad = np.zeros_like(e)
    for (start, end), g_seg in zip(segment_bounds, seg_grads):
        # same row gradient for every row of the segment: mean pooling
        row_grad = ckpt.embedding @ (g_seg / (end - start))
        grad[start:end, :] = row_grad
    return grad


@dataclass(frozen=True, eq=False)
class TrainResult:
    checkpoint: ClassifierCheckpoint
    train_accuracy: float
    n_samples: int


def train(
    records: list[CorpusRecord],
    v: Vocabulary,
    *,
    d: int = 32,
    h: int = 64,
    epochs: int = 30,
    learning_rate: float = 0.1,
    batch_size: int = 16,
    seed: int = 0,
    label_names: list[str] | None = None,
    embedding_init_scale: float = 0.3,
) -> TrainResult:
    """Train the classifier with plain minibatch SGD.

    Deterministic given ``seed``.  The reference-token embedding row is
    pinned to zero throughout.  Labels must be contiguous from zero.
    """
    if not records:
        raise ValueError("no training records")
    labels = [r.label for r in records]
    if min(labels) < 0:
        raise LabelOutOfRange(f"negative label {min(labels)}")
    c = max(labels) + 1
    if label_names is None:
        label_names = [f"class_{i}" for i in range(c)]
    if len(label_names) != c:
        raise ValueError(f"expected {c} label names")

    # token ids per segment; training uses index lookup, the same math as
    # the one-hot matrix product
    encoded = []
    for r in records:
        e = encode(v, r.first, r.second)
        ids = e.row_ids()
        encoded.append([ids[start:end] for start, end in e.segment_bounds])

    rng = np.random.default_rng(seed)
    emb = rng.normal(0.0, embedding_init_scale, size=(v.size, d))
    emb[REF_ID] = 0.0
    W_h = rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(2 * d, h))
    b_h = np.zeros(h)
    W_o = rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, c))
    b_o = np.zeros(c)

    n = len(records)
    for _ in range(epochs):
        order = rng.permutation(n)
        for batch_start in range(0, n, batch_size):
            batch = order[batch_start:batch_start + batch_size]
            gW_h = np.zeros_like(W_h)
            gb_h = np.zeros_like(b_h)
            gW_o = np.zeros_like(W_o)
            gb_o = np.zeros_like(b_o)
            emb_rows: list[np.ndarray] = []
            emb_grads: list[np.ndarray] = []
            for idx in batch:
                segs = encoded[idx]
                means = [emb[ids].mean(axis=0) for ids in segs]
                if len(means) == 1:
                    means = [means[0], means[0]]
                pooled = np.concatenate(means)
                a = pooled @ W_h + b_h
                t = np.tanh(a)
                logits = t @ W_o + b_o
                probs = _softmax(logits)

                g_logits = probs.copy()
                g_logits[labels[idx]] -= 1.0
                gW_o += np.outer(t, g_logits)
                gb_o += g_logits
                g_t = g_logits @ W_o.T
                g_a = g_t * (1.0 - t * t)
                gW_h += np.outer(pooled, g_a)
                gb_h += g_a
                g_pooled = g_a @ W_h.T
                seg_grads = [g_pooled[:d], g_pooled[d:]]
                if len(segs) == 1:
                    seg_grads = [seg_grads[0] + seg_grads[1]]
                for ids, g_seg in zip(segs, seg_grads):
                    emb_rows.append(ids)
                    emb_grads.append(np.tile(g_seg / len(ids), (len(ids), 1)))

            scale = learning_rate / len(batch)
            W_h -= scale * gW_h
            b_h -= scale * gb_h
            W_o -= scale * gW_o
            b_o -= scale * gb_o
            np.add.at(emb, np.concatenate(emb_rows), -scale * np.concatenate(emb_grads))
            emb[REF_ID] = 0.0

    ckpt = ClassifierCheckpoint(
        embedding=emb, hidden_weights=W_h, hidden_bias=b_h,
        out_weights=W_o, out_bias=b_o, label_names=list(label_names),
        vocab_fingerprint=v.fingerprint(),
    )
    correct = 0
    for idx, segs in enumerate(encoded):
        means = [emb[ids].mean(axis=0) for ids in segs]
        if len(means) == 1:
            means = [means[0], means[0]]
        logits, _, _ = pooled_head_forward(ckpt, np.concatenate(means))
        correct += int(np.argmax(logits)) == labels[idx]
    return TrainResult(checkpoint=ckpt, train_accuracy=correct / n, n_samples=n)


def save_checkpoint(ckpt: ClassifierCheckpoint, path) -> None:
    """Write the versioned binary checkpoint container."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4I", ckpt.n_words, ckpt.dim, ckpt.hidden, ckpt.n_classes))
        for m in (ckpt.embedding, ckpt.hidden_weights, ckpt.hidden_bias,
                  ckpt.out_weights, ckpt.out_bias):
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
        for name in ckpt.label_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<Q", ckpt.vocab_fingerprint))


def load_checkpoint(path, expected_vocab: Vocabulary | None = None) -> ClassifierCheckpoint:
    """Read a checkpoint, verifying format version and (optionally) the
    vocabulary fingerprint."""
    with open(path, "rb") as fh:
        data = fh.read()

    def take(n: int, offset: int) -> tuple[bytes, int]:
        if offset + n > len(data):
            raise CorruptFile(f"{path}: truncated at byte {offset}")
        return data[offset:offset + n], offset + n

    magic, off = take(4, 0)
    if magic != _MAGIC:
        if magic[:3] == _MAGIC[:3]:
            raise FormatVersionMismatch(f"{path}: format {magic!r}, expected {_MAGIC!r}")
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    raw, off = take(16, off)
    n_words, d, h, c = struct.unpack("<4I", raw)

    def matrix(shape, offset):
        count = int(np.prod(shape))
        raw, offset = take(count * 8, offset)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64), offset

    embedding, off = matrix((n_words, d), off)
    hidden_weights, off = matrix((2 * d, h), off)
    hidden_bias, off = matrix((h,), off)
    out_weights, off = matrix((h, c), off)
    out_bias, off = matrix((c,), off)
    label_names = []
    for _ in range(c):
        raw, off = take(4, off)
        (length,) = struct.unpack("<I", raw)
        raw, off = take(length, off)
        label_names.append(raw.decode("utf-8"))
    raw, off = take(8, off)
    (fingerprint,) = struct.unpack("<Q", raw)
    if off != len(data):
        raise CorruptFile(f"{path}: {len(data) - off} trailing bytes")

    try:
        ckpt = ClassifierCheckpoint(
            embedding=embedding, hidden_weights=hidden_weights, hidden_bias=hidden_bias,
            out_weights=out_weights, out_bias=out_bias, label_names=label_names,
            vocab_fingerprint=fingerprint,
        )
    except (ShapeMismatch, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if expected_vocab is not None and expected_vocab.fingerprint() != fingerprint:
        raise VocabFingerprintMismatch(
            f"{path}: checkpoint fingerprint {fingerprint:#x} != vocabulary "
            f"{expected_vocab.fingerprint():#x}")
    return ckpt
