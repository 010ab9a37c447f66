"""Word embeddings: in-repo skip-gram pretraining and text-format I/O.

The embedding file format is plain text: an optional leading ``#`` comment,
a header line ``V d``, then one line per token holding the token followed by
``d`` floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .corpus import PAD_ID, Vocabulary
from .errors import DataError
from .tensor import Tensor

DEFAULT_DIM = 100


@dataclass
class EmbeddingTable:
    """Trainable lookup table, one row per vocabulary entry.

    The PAD row is all-zero; the training loop keeps it frozen so padding
    positions contribute nothing anywhere downstream.
    """

    matrix: Tensor
    dim: int

    def __post_init__(self):
        self.matrix.data[PAD_ID] = 0.0

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def random(cls, vocab_size: int, dim: int, seed: int = 0) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        mat = (rng.random((vocab_size, dim)) - 0.5) / dim
        mat[PAD_ID] = 0.0
        return cls(Tensor(mat, requires_grad=True, name="embedding"), dim)


def _subsample_pairs(tokens: np.ndarray, window: int, rng: np.random.Generator):
    """Center/context index pairs with the usual randomly shrunk window."""
    n = tokens.size
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    spans = rng.integers(1, window + 1, size=n)
    centers, contexts = [], []
    for pos in range(n):
        lo = max(0, pos - spans[pos])
        hi = min(n, pos + spans[pos] + 1)
        for ctx in range(lo, hi):
            if ctx != pos:
                centers.append(pos)
                contexts.append(ctx)
    return tokens[np.array(centers)], tokens[np.array(contexts)]


def train_skipgram(
    token_docs: list[list[int]],
    vocab_size: int,
    dim: int = DEFAULT_DIM,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    seed: int = 0,
    lr: float = 0.025,
) -> EmbeddingTable:
    """Skip-gram with negative sampling over id-encoded documents.

    Updates are applied per document (mini-batch SGD over that document's
    center/context pairs), negatives drawn from the unigram^(3/4)
    distribution.  Fully deterministic for a fixed seed.
    """
    if dim <= 0:
        raise ValueError(f"embedding dimension must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    w_in = (rng.random((vocab_size, dim)) - 0.5) / dim
    w_out = np.zeros((vocab_size, dim))
    w_in[PAD_ID] = 0.0

    counts = np.zeros(vocab_size)
    for doc in token_docs:
        for t in doc:
            counts[t] += 1
    counts[PAD_ID] = 0.0
    noise = counts ** 0.75
    total = noise.sum()
    if total == 0 or epochs == 0:
        return EmbeddingTable(Tensor(w_in, requires_grad=True, name="embedding"), dim)
    noise /= total
    noise_cdf = np.cumsum(noise)

    steps_total = max(1, epochs * len(token_docs))
    step = 0
    for _ in range(epochs):
        for doc in token_docs:
            tokens = np.asarray([t for t in doc if t != PAD_ID], dtype=np.int64)
            centers, contexts = _subsample_pairs(tokens, window, rng)
            step += 1
            if centers.size == 0:
                continue
            cur_lr = max(lr * (1.0 - step / steps_total), lr * 1e-4)

            n_pairs = centers.size
            neg = np.searchsorted(noise_cdf, rng.random((n_pairs, negatives)))
            # targets: positive context then the negatives, labels 1/0...0
            tgt = np.concatenate([contexts[:, None], neg], axis=1)
            lbl = np.zeros((n_pairs, negatives + 1))
            lbl[:, 0] = 1.0

            vc = w_in[centers]  # [P, d]
            vo = w_out[tgt]  # [P, 1+k, d]
            score = expit(np.einsum("pd,pkd->pk", vc, vo))
            err = (score - lbl) * cur_lr  # [P, 1+k]
            grad_c = np.einsum("pk,pkd->pd", err, vo)
            grad_o = err[:, :, None] * vc[:, None, :]
            np.add.at(w_in, centers, -grad_c)
            np.add.at(w_out, tgt.reshape(-1), -grad_o.reshape(-1, dim))
    w_in[PAD_ID] = 0.0
    return EmbeddingTable(Tensor(w_in, requires_grad=True, name="embedding"), dim)


def save_embeddings(table: EmbeddingTable, vocab: Vocabulary, path, config_hash: str = "") -> None:
    mat = table.matrix.data
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        fh.write(f"{len(vocab)} {table.dim}\n")
        for i, token in enumerate(vocab.id_to_token):
            fh.write(token + " " + " ".join(repr(float(v)) for v in mat[i]) + "\n")


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    """Load embeddings aligned to ``vocab``.

    Tokens absent from the file get seeded random rows (reproducible per
    run); the PAD row is forced to zero.  A file dimension different from
    ``dim`` or a malformed line is a format error carrying the line number.
    """
    lines = Path(path).read_text().splitlines()
    body = [(ln, line) for ln, line in enumerate(lines, start=1) if not line.startswith("#")]
    if not body:
        raise DataError(f"{path}: empty embedding file")
    header_ln, header = body[0]
    parts = header.split()
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise DataError(f"{path}:{header_ln}: expected header 'V d', got {header!r}")
    file_dim = int(parts[1])
    if file_dim != dim:
        raise DataError(
            f"{path}: embedding dimension {file_dim} does not match configured {dim}"
        )

    rng = np.random.default_rng(seed)
    mat = (rng.random((len(vocab), dim)) - 0.5) / dim
    seen = np.zeros(len(vocab), dtype=bool)
    for ln, line in body[1:]:
        fields = line.rstrip().split(" ")
        if len(fields) != dim + 1:
            raise DataError(
                f"{path}:{ln}: expected token plus {dim} floats, got {len(fields)} fields"
            )
        token = fields[0]
        if token not in vocab:
            continue
        idx = vocab.token_to_id[token]
        try:
            mat[idx] = [float(v) for v in fields[1:]]
        except ValueError:
            raise DataError(f"{path}:{ln}: non-numeric embedding value") from None
        seen[idx] = True
    mat[PAD_ID] = 0.0
    return EmbeddingTable(Tensor(mat, requires_grad=True, name="embedding"), dim)
