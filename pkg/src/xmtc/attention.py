"""Label-wise attention over the encoded document plus the shared classifier.

Each label attends over sequence positions with weights from the dot product
of its (masked) representation and the encoded tokens; the per-label context
vectors feed a shared linear map with per-label bias and a sigmoid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor, add, bce_loss, matmul, mul, reshape, sigmoid, softmax, transpose

_NEG_INF = -1e30


@dataclass
class AttentionOutput:
    alpha: Tensor  # [L, n] row-stochastic over valid positions
    context: Tensor  # [L, d_e]


@dataclass
class ClassifierParams:
    w: Tensor  # [d_e, 1] shared projection
    b: Tensor  # [L] per-label bias


def init_classifier_params(dim: int, num_labels: int, rng: np.random.Generator) -> ClassifierParams:
    limit = np.sqrt(6.0 / (dim + 1))
    return ClassifierParams(
        w=Tensor(rng.uniform(-limit, limit, (dim, 1)), requires_grad=True, name="classifier.w"),
        b=Tensor(np.zeros(num_labels), requires_grad=True, name="classifier.b"),
    )


def label_attention(
    encoded: Tensor, h_masked: Tensor, pad_mask: np.ndarray | None = None
) -> AttentionOutput:
    """Attention weights and per-label context vectors.

    ``pad_mask`` marks valid positions with 1; padded positions get a large
    negative score before the softmax, so they receive zero weight and
    contribute nothing to the context.
    """
    if encoded.shape[1] != h_masked.shape[1]:
        raise ShapeError(
            f"encoder dim {encoded.shape[1]} != label representation dim {h_masked.shape[1]}"
        )
    n = encoded.shape[0]
    scores = matmul(h_masked, transpose(encoded))  # [L, n]
    if pad_mask is not None:
        pad_mask = np.asarray(pad_mask, dtype=np.float64).reshape(-1)
        if pad_mask.shape[0] != n:
            raise ShapeError(f"pad mask length {pad_mask.shape[0]} != sequence length {n}")
        if pad_mask.sum() == 0:
            raise DataError("document has no valid (non-padding) positions")
        scores = add(scores, Tensor(((1.0 - pad_mask) * _NEG_INF)[None, :]))
    alpha = softmax(scores, axis=1)
    context = matmul(alpha, encoded)
    return AttentionOutput(alpha=alpha, context=context)


def classify(context: Tensor, params: ClassifierParams) -> Tensor:
    """Per-label probabilities: sigmoid of the shared projection plus bias."""
    if context.shape[1] != params.w.shape[0]:
        raise ShapeError(f"context dim {context.shape[1]} != classifier dim {params.w.shape[0]}")
    logits = add(reshape(matmul(context, params.w), (context.shape[0],)), params.b)
    return sigmoid(logits)


def loss(predictions: Tensor, gold_vec) -> Tensor:
    """Multi-label binary cross-entropy (delegates to the tensor op)."""
    return bce_loss(predictions, gold_vec)


def attention_heat_records(doc_id: str, alpha: np.ndarray, label_codes: list[str],
                           top_positions: int = 10) -> list[dict]:
    """Flatten attention weights into (label, token index, weight) rows for
    qualitative inspection; keeps the heaviest positions per label."""
    records = []
    for row, code in enumerate(label_codes):
        weights = alpha[row]
        order = np.argsort(-weights, kind="stable")[:top_positions]
        for pos in order.tolist():
            records.append({"doc_id": doc_id, "label": code,
                            "token_index": pos, "weight": float(weights[pos])})
    return records


def write_attention_heat(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
