"""Label co-occurrence graph and the two-layer graph convolution over it.

The graph is directed: edge (i -> j) exists when the conditional probability
P(label j | label i), estimated on the training split, reaches the
binarization threshold.  Node features are descriptor-averaged word
embeddings, so gradients can flow from the label representations back into
the shared embedding table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import DocumentRecord, LabelCatalog, Vocabulary, preprocess
from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor, matmul, relu

logger = logging.getLogger(__name__)

NORM_MODES = ("raw", "self_loop_row_norm")


@dataclass
class CooccurrenceGraph:
    """Binary label-label adjacency plus the conditional-probability table."""

    adjacency: np.ndarray  # [L, L] of {0.0, 1.0}
    lam: float
    pair_count: int  # 1-entries strictly above the diagonal
    cond_prob: np.ndarray | None = None

    @property
    def num_labels(self) -> int:
        return self.adjacency.shape[0]


def build_cooccurrence(
    train_docs: list[DocumentRecord], num_labels: int, lam: float = 1.0
) -> CooccurrenceGraph:
    """Estimate P(j|i) on the training split and binarize at ``lam``.

    The comparison is >= lam; the diagonal is forced to 1.  Rows for labels
    never seen in training stay all-zero in the probability table.  Callers
    must pass the training split only; evaluation documents would leak label
    statistics into the graph.
    """
    occur = np.zeros((len(train_docs), num_labels))
    for row, doc in enumerate(train_docs):
        for lab in doc.labels:
            if lab < 0 or lab >= num_labels:
                raise DataError(f"document {doc.doc_id}: label id {lab} outside catalog")
            occur[row, lab] = 1.0
    joint = occur.T @ occur
    singles = np.diag(joint).copy()
    cond = np.zeros_like(joint)
    seen = singles > 0
    cond[seen] = joint[seen] / singles[seen, None]

    adj = np.where(cond >= lam, 1.0, 0.0)
    adj[~seen] = 0.0
    np.fill_diagonal(adj, 1.0)
    pair_count = int(np.triu(adj, k=1).sum())
    return CooccurrenceGraph(adjacency=adj, lam=lam, pair_count=pair_count, cond_prob=cond)


def save_graph(graph: CooccurrenceGraph, path, config_hash: str = "") -> None:
    """Write the adjacency as a sorted coordinate list; probabilities are
    training-corpus state and are not persisted."""
    with open(path, "w") as fh:
        fh.write(f"# xmtc-graph v1 config={config_hash}\n")
        fh.write(f"{graph.num_labels} {float(graph.lam)!r} {graph.pair_count}\n")
        rows, cols = np.nonzero(graph.adjacency)
        for i, j in zip(rows.tolist(), cols.tolist()):
            fh.write(f"{i} {j}\n")


def load_graph(path) -> tuple[CooccurrenceGraph, str]:
    lines = Path(path).read_text().splitlines()
    config_hash = ""
    if lines and lines[0].startswith("#"):
        head = lines.pop(0)
        if "config=" in head:
            config_hash = head.split("config=", 1)[1].strip()
    if not lines:
        raise DataError(f"{path}: empty graph file")
    try:
        num_labels_s, lam_s, pair_count_s = lines[0].split()
        num_labels, lam, pair_count = int(num_labels_s), float(lam_s), int(pair_count_s)
    except ValueError:
        raise DataError(f"{path}: malformed graph header {lines[0]!r}") from None
    adj = np.zeros((num_labels, num_labels))
    for line in lines[1:]:
        i_s, j_s = line.split()
        adj[int(i_s), int(j_s)] = 1.0
    graph = CooccurrenceGraph(adjacency=adj, lam=lam, pair_count=pair_count)
    if int(np.triu(adj, k=1).sum()) != pair_count:
        raise DataError(f"{path}: pair count does not match stored coordinates")
    return graph, config_hash


# ---------------------------------------------------------------------------
# label features


@dataclass
class LabelFeatures:
    """Descriptor-averaged label feature matrix, one row per label."""

    values: Tensor  # [L, d_e]


def descriptor_average_matrix(catalog: LabelCatalog, vocab: Vocabulary) -> np.ndarray:
    """Sparse-in-spirit averaging operator S with S[i, tok] = 1/Z_i.

    Multiplying S by the embedding table yields every label's mean
    descriptor embedding in one product, keeping the whole feature
    construction differentiable with respect to the table.
    """
    s = np.zeros((len(catalog), len(vocab)))
    for i, descriptor in enumerate(catalog.descriptors):
        ids = vocab.encode(preprocess(descriptor))
        if not ids:
            logger.warning("label %s has an empty descriptor; feature row is zero",
                           catalog.codes[i])
            continue
        for tok in ids:
            s[i, tok] += 1.0 / len(ids)
    return s


def build_label_features(catalog: LabelCatalog, embedding: Tensor, vocab: Vocabulary) -> LabelFeatures:
    """Average each label's descriptor token embeddings (OOV tokens use UNK)."""
    s = descriptor_average_matrix(catalog, vocab)
    return LabelFeatures(values=matmul(Tensor(s), embedding))


# ---------------------------------------------------------------------------
# graph convolution


@dataclass
class GcnParams:
    w1: Tensor  # [d_e, d_e]
    w2: Tensor  # [d_e, d_e]
    norm_mode: str = "self_loop_row_norm"

    def __post_init__(self):
        if self.norm_mode not in NORM_MODES:
            raise ConfigError(f"unknown norm_mode {self.norm_mode!r}; choose from {NORM_MODES}")


def init_gcn_params(dim: int, rng: np.random.Generator, norm_mode: str = "self_loop_row_norm") -> GcnParams:
    """Near-identity init: label representations start as (graph-smoothed)
    descriptor averages, which keeps them aligned with the shared word
    embedding space; the layers learn mixing as a refinement."""
    limit = np.sqrt(6.0 / (dim + dim))

    def weight(name):
        noise = rng.uniform(-limit, limit, (dim, dim))
        return Tensor(np.eye(dim) + 0.1 * noise, requires_grad=True, name=name)

    return GcnParams(w1=weight("gcn.w1"), w2=weight("gcn.w2"), norm_mode=norm_mode)


def normalize_adjacency(adjacency: np.ndarray, norm_mode: str) -> np.ndarray:
    """Propagation matrix for the GCN.

    ``raw`` uses the binary adjacency as-is; ``self_loop_row_norm`` adds a
    self loop and row-normalizes, which keeps activation scale independent
    of node degree.
    """
    if norm_mode == "raw":
        return adjacency.copy()
    if norm_mode == "self_loop_row_norm":
        a = adjacency + np.eye(adjacency.shape[0])
        return a / a.sum(axis=1, keepdims=True)
    raise ConfigError(f"unknown norm_mode {norm_mode!r}; choose from {NORM_MODES}")


def gcn_forward(graph: CooccurrenceGraph, features, params: GcnParams) -> Tensor:
    """Two aggregation layers: ReLU after the first, identity after the
    second so label representations can carry signed components."""
    values = features.values if isinstance(features, LabelFeatures) else features
    if values.shape[0] != graph.num_labels:
        raise ShapeError(
            f"feature rows {values.shape[0]} != graph labels {graph.num_labels}"
        )
    a_hat = Tensor(normalize_adjacency(graph.adjacency, params.norm_mode))
    h1 = relu(matmul(matmul(a_hat, values), params.w1))
    return matmul(matmul(a_hat, h1), params.w2)
