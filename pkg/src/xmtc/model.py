"""Full model assembly: embeddings -> encoder -> label side -> attention -> classifier.

``ModelParams`` is the named registry of every trainable tensor, which is
what optimizers iterate over and checkpoints serialize.  ``CodingModel``
wires the pieces together for one of the architecture variants:

* ``full``              - GCN over the co-occurrence graph on descriptor features
* ``no_label_feature``  - learned label embeddings through a fully connected layer
* ``no_mask``           - candidate masking disabled (handled by the pipeline)

The label side is document-independent, so one batch computes it once and
shares the result across documents; the tape accumulates gradients from all
consumers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .attention import ClassifierParams, classify, init_classifier_params, label_attention
from .corpus import PAD_ID, LabelCatalog, Vocabulary
from .encoder import BlockParams, EncoderConfig, encode, init_block_params
from .errors import ConfigError
from .graph import CooccurrenceGraph, GcnParams, descriptor_average_matrix, gcn_forward, init_gcn_params
from .mask import DocMask, apply_mask
from .tensor import Tensor, matmul

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_label_feature", "no_mask", "swap_embeddings")


class ModelParams:
    """Named registry of trainable tensors, ordered by insertion."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, tensor: Tensor) -> Tensor:
        if not tensor.name:
            raise ValueError("registered parameters must be named")
        if tensor.name in self._params:
            raise ValueError(f"duplicate parameter name {tensor.name!r}")
        self._params[tensor.name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(arrays)
        if missing:
            raise ConfigError(f"checkpoint parameter names do not match model: {sorted(missing)}")
        for name, arr in arrays.items():
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ConfigError(
                    f"checkpoint parameter {name!r} has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = np.array(arr, dtype=np.float64)


@dataclass
class CodingModel:
    params: ModelParams
    graph: CooccurrenceGraph
    encoder_config: EncoderConfig
    blocks: list[BlockParams]
    gcn: GcnParams | None
    classifier: ClassifierParams
    feature_matrix: np.ndarray | None  # [L, V] descriptor averaging operator
    variant: str
    hard_gating: bool = True

    @property
    def embedding(self) -> Tensor:
        return self.params["embedding"]

    @property
    def num_labels(self) -> int:
        return self.graph.num_labels

    def label_representations(self) -> Tensor:
        """Document-independent label matrix H_label, [L, d_e]."""
        if self.variant == "no_label_feature":
            return matmul(self.params["labelfc.embed"], self.params["labelfc.w"])
        features = matmul(Tensor(self.feature_matrix), self.embedding)
        return gcn_forward(self.graph, features, self.gcn)

    def forward_doc(
        self,
        token_ids,
        doc_mask: DocMask,
        h_label: Tensor,
        train: bool = False,
        rng: np.random.Generator | None = None,
        pad_mask: np.ndarray | None = None,
    ) -> Tensor:
        """Per-label probabilities for one document."""
        if pad_mask is None:
            pad_mask = (np.asarray(list(token_ids)) != PAD_ID).astype(np.float64)
        encoded = encode(token_ids, self.embedding, self.blocks, self.encoder_config,
                         train=train, rng=rng)
        h_masked = apply_mask(h_label, doc_mask)
        att = label_attention(encoded, h_masked, pad_mask=pad_mask)
        return classify(att.context, self.classifier)

    def attention_weights(self, token_ids, doc_mask: DocMask,
                          h_label: Tensor | None = None) -> np.ndarray:
        """[L, n] attention weight matrix for one document (inference mode)."""
        if h_label is None:
            h_label = self.label_representations()
        pad_mask = (np.asarray(list(token_ids)) != PAD_ID).astype(np.float64)
        encoded = encode(token_ids, self.embedding, self.blocks, self.encoder_config)
        att = label_attention(encoded, apply_mask(h_label, doc_mask), pad_mask=pad_mask)
        return att.alpha.data

    def predict_scores(self, token_ids, doc_mask: DocMask, h_label: Tensor | None = None,
                       doc_id: str = "?") -> np.ndarray:
        """Inference scores with optional hard gating.

        With gating on, labels outside the candidate set get probability 0.
        An empty candidate set suspends gating for the document (otherwise
        nothing could ever be predicted) and is logged.
        """
        if h_label is None:
            h_label = self.label_representations()
        scores = self.forward_doc(token_ids, doc_mask, h_label).data.copy()
        if self.hard_gating:
            if doc_mask.empty:
                logger.info("doc %s: empty candidate mask; hard gating suspended", doc_id)
            else:
                scores *= doc_mask.vec
        return scores


def build_model(
    vocab_size: int,
    num_labels: int,
    dim: int,
    graph: CooccurrenceGraph,
    encoder_config: EncoderConfig,
    seed: int = 0,
    embedding_matrix: np.ndarray | None = None,
    feature_matrix: np.ndarray | None = None,
    variant: str = "full",
    norm_mode: str = "self_loop_row_norm",
    hard_gating: bool = True,
) -> CodingModel:
    """Initialize all parameters and assemble a model.

    ``embedding_matrix`` (e.g. skip-gram pretrained) seeds the embedding
    table; otherwise rows are random.  ``feature_matrix`` is required for
    the graph variants and maps the embedding table to descriptor-averaged
    label features.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    rng = np.random.default_rng(seed)
    params = ModelParams()

    if embedding_matrix is None:
        # unit-scale rows; the 1/dim word2vec-style init is too quiet to
        # drive attention when training from scratch
        emb = rng.standard_normal((vocab_size, dim)) / np.sqrt(dim)
    else:
        emb = np.array(embedding_matrix, dtype=np.float64)
        if emb.shape != (vocab_size, dim):
            raise ConfigError(
                f"embedding matrix shape {emb.shape} != (vocab {vocab_size}, dim {dim})"
            )
    emb[PAD_ID] = 0.0
    params.register(Tensor(emb, requires_grad=True, name="embedding"))

    blocks = []
    for b in range(encoder_config.num_blocks):
        block = init_block_params(encoder_config, dim, rng, prefix=f"block{b}")
        for filt in block.level_filters:
            params.register(filt)
        params.register(block.residual_filter)
        blocks.append(block)

    gcn = None
    if variant == "no_label_feature":
        limit = np.sqrt(6.0 / (num_labels + dim))
        params.register(Tensor(rng.uniform(-limit, limit, (num_labels, dim)),
                               requires_grad=True, name="labelfc.embed"))
        wlim = np.sqrt(6.0 / (dim + dim))
        params.register(Tensor(rng.uniform(-wlim, wlim, (dim, dim)),
                               requires_grad=True, name="labelfc.w"))
    else:
        if feature_matrix is None:
            raise ConfigError("graph variants need a descriptor feature matrix")
        gcn = init_gcn_params(dim, rng, norm_mode=norm_mode)
        params.register(gcn.w1)
        params.register(gcn.w2)

    classifier = init_classifier_params(dim, num_labels, rng)
    params.register(classifier.w)
    params.register(classifier.b)

    return CodingModel(
        params=params,
        graph=graph,
        encoder_config=encoder_config,
        blocks=blocks,
        gcn=gcn,
        classifier=classifier,
        feature_matrix=feature_matrix,
        variant=variant,
        hard_gating=hard_gating,
    )


def model_from_artifacts(
    vocab: Vocabulary,
    catalog: LabelCatalog,
    graph: CooccurrenceGraph,
    dim: int,
    encoder_config: EncoderConfig,
    seed: int = 0,
    embedding_matrix: np.ndarray | None = None,
    variant: str = "full",
    norm_mode: str = "self_loop_row_norm",
    hard_gating: bool = True,
) -> CodingModel:
    """Convenience constructor computing the descriptor feature matrix."""
    feature_matrix = None
    if variant != "no_label_feature":
        feature_matrix = descriptor_average_matrix(catalog, vocab)
    return build_model(
        vocab_size=len(vocab),
        num_labels=len(catalog),
        dim=dim,
        graph=graph,
        encoder_config=encoder_config,
        seed=seed,
        embedding_matrix=embedding_matrix,
        feature_matrix=feature_matrix,
        variant=variant,
        norm_mode=norm_mode,
        hard_gating=hard_gating,
    )
