"""Training loop (Adam, per-epoch lr decay, global-norm clipping, early
stopping on validation micro-F1) plus evaluation and ablation drivers."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import PAD_ID, DocumentRecord, LabelCatalog, Vocabulary
from .errors import ConfigError, DataError, DivergenceError
from .graph import CooccurrenceGraph
from .mask import AuxMaskIndex, DocMask, make_doc_mask
from .metrics import MetricsReport, compute_metrics
from .model import VARIANTS, CodingModel, ModelParams, model_from_artifacts
from .tensor import GradTape, Tensor, add, bce_loss, mul

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    prediction_threshold: float = 0.0005

    def __post_init__(self):
        positive = {
            "lr": self.lr, "lr_decay": self.lr_decay, "clip_norm": self.clip_norm,
            "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "prediction_threshold": self.prediction_threshold,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


class Adam:
    """Standard Adam with bias-corrected moment estimates."""

    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


def clip_global_norm(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients together so their joint norm is at most
    ``max_norm``; gradients already inside the ball are untouched."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= scale
    return norm


def _check_finite(loss_value: float, params: ModelParams) -> None:
    """Abort on divergence, naming the first offending parameter."""
    if np.isfinite(loss_value):
        return
    for name, p in params.items():
        if not np.isfinite(p.data).all() or (p.grad is not None and not np.isfinite(p.grad).all()):
            raise DivergenceError(f"non-finite values in parameter {name!r} (loss={loss_value})")
    raise DivergenceError(f"training loss became non-finite ({loss_value})")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_micro_f1: float
    lr: float


@dataclass
class TrainResult:
    params_arrays: dict[str, np.ndarray]
    optimizer_state: dict
    best_epoch: int
    best_val_micro_f1: float
    history: list[EpochStats] = field(default_factory=list)


def _doc_masks(docs: list[DocumentRecord], index: AuxMaskIndex | None,
               num_labels: int, masking: bool) -> list[DocMask]:
    if not masking or index is None:
        return [DocMask.all_ones(num_labels) for _ in docs]
    return [make_doc_mask(doc, index) for doc in docs]


def batch_loss(model: CodingModel, docs: list[DocumentRecord], masks: list[DocMask],
               rng: np.random.Generator) -> Tensor:
    """Mean document BCE over one batch; the label side is computed once
    and shared by every document on the tape."""
    h_label = model.label_representations()
    total = None
    for doc, doc_mask in zip(docs, masks):
        y_hat = model.forward_doc(doc.tokens, doc_mask, h_label, train=True, rng=rng)
        doc_loss = bce_loss(y_hat, doc.label_vector(model.num_labels))
        total = doc_loss if total is None else add(total, doc_loss)
    return mul(total, 1.0 / len(docs))


def train(
    train_docs: list[DocumentRecord],
    val_docs: list[DocumentRecord],
    model: CodingModel,
    mask_index: AuxMaskIndex | None,
    config: TrainConfig,
    ks: tuple[int, ...] = (5, 8, 15),
) -> TrainResult:
    """Mini-batch training with early stopping on validation micro-F1.

    Returns the best-validation parameter snapshot along with the optimizer
    state and per-epoch history.  The candidate-mask index must have been
    built from the training split beforehand.
    """
    if not train_docs:
        raise DataError("empty training split")
    masking = model.variant != "no_mask"
    train_masks = _doc_masks(train_docs, mask_index, model.num_labels, masking)

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.params, lr=config.lr)
    best = TrainResult(params_arrays={}, optimizer_state={}, best_epoch=-1, best_val_micro_f1=-1.0)
    since_best = 0

    order = np.arange(len(train_docs))
    for epoch in range(config.max_epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch = [train_docs[i] for i in batch_idx]
            masks = [train_masks[i] for i in batch_idx]
            model.params.zero_grads()
            with GradTape() as tape:
                loss = batch_loss(model, batch, masks, rng)
                tape.backward(loss)
            loss_value = float(loss.data)
            _check_finite(loss_value, model.params)
            clip_global_norm(model.params, config.clip_norm)
            optimizer.step()
            model.embedding.data[PAD_ID] = 0.0  # PAD row stays frozen
            epoch_loss += loss_value * len(batch)
        epoch_loss /= len(train_docs)

        val_report = evaluate(val_docs, model, mask_index, config.prediction_threshold, ks)
        stats = EpochStats(epoch=epoch, train_loss=epoch_loss,
                           val_micro_f1=val_report.micro_f1, lr=optimizer.lr)
        best.history.append(stats)
        logger.info("epoch %d: train loss %.5f, val micro-F1 %.4f, lr %.3g",
                    epoch, epoch_loss, val_report.micro_f1, optimizer.lr)

        if val_report.micro_f1 > best.best_val_micro_f1:
            best.best_val_micro_f1 = val_report.micro_f1
            best.best_epoch = epoch
            best.params_arrays = {name: p.data.copy() for name, p in model.params.items()}
            best.optimizer_state = {
                "t": optimizer.t,
                "m": {k: v.copy() for k, v in optimizer.m.items()},
                "v": {k: v.copy() for k, v in optimizer.v.items()},
            }
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
        optimizer.lr *= config.lr_decay

    model.params.load_arrays(best.params_arrays)
    return best


def collect_scores(
    docs: list[DocumentRecord],
    model: CodingModel,
    mask_index: AuxMaskIndex | None,
) -> tuple[np.ndarray, np.ndarray]:
    """(gold, gated scores) matrices for an evaluation split, fixed doc order."""
    masking = model.variant != "no_mask"
    masks = _doc_masks(docs, mask_index, model.num_labels, masking)
    h_label = model.label_representations()
    gold = np.zeros((len(docs), model.num_labels), dtype=bool)
    scores = np.zeros((len(docs), model.num_labels))
    for row, (doc, doc_mask) in enumerate(zip(docs, masks)):
        gold[row] = doc.label_vector(model.num_labels) > 0
        scores[row] = model.predict_scores(doc.tokens, doc_mask, h_label, doc_id=doc.doc_id)
    return gold, scores


def evaluate(
    docs: list[DocumentRecord],
    model: CodingModel,
    mask_index: AuxMaskIndex | None,
    threshold: float,
    ks: tuple[int, ...] = (5, 8, 15),
    label_codes: list[str] | None = None,
) -> MetricsReport:
    gold, scores = collect_scores(docs, model, mask_index)
    return compute_metrics(gold, scores, threshold, ks, label_codes=label_codes)


# ---------------------------------------------------------------------------
# ablation


def _report_summary(report: MetricsReport, result: TrainResult) -> dict:
    return {
        "micro_f1": report.micro_f1,
        "macro_f1": report.macro_f1,
        "micro_auc": report.micro_auc,
        "macro_auc": report.macro_auc,
        "p_at_k": {str(k): v for k, v in sorted(report.p_at_k.items())},
        "best_epoch": result.best_epoch,
        "best_val_micro_f1": result.best_val_micro_f1,
    }


def ablate(
    variants: list[str],
    train_docs: list[DocumentRecord],
    val_docs: list[DocumentRecord],
    test_docs: list[DocumentRecord],
    vocab: Vocabulary,
    catalog: LabelCatalog,
    graph: CooccurrenceGraph,
    mask_index: AuxMaskIndex | None,
    embedding_matrix: np.ndarray,
    cfg,
) -> dict:
    """Train and evaluate architecture variants on identical data and seed.

    ``cfg`` is a resolved RunConfig.  ``swap_embeddings`` replaces the
    in-repo pretrained table with the file named by ``cfg.embedding_path``;
    the other variants share ``embedding_matrix``.
    """
    report: dict = {"seed": cfg.seed, "variants": {}}
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {variant!r}; choose from {VARIANTS}")
        emb = embedding_matrix
        if variant == "swap_embeddings":
            if not cfg.embedding_path:
                raise ConfigError("swap_embeddings ablation needs embedding_path in the config")
            from .embeddings import load_embeddings

            emb = load_embeddings(cfg.embedding_path, vocab, cfg.embedding_size,
                                  seed=cfg.seed).matrix.data
        from .encoder import EncoderConfig

        model = model_from_artifacts(
            vocab=vocab,
            catalog=catalog,
            graph=graph,
            dim=cfg.embedding_size,
            encoder_config=EncoderConfig(
                kernel_size=cfg.filter_size, rates=cfg.dilation_rates,
                num_blocks=cfg.num_blocks, dropout=cfg.dropout,
                activation=cfg.activation, causal=cfg.causal_conv,
            ),
            seed=cfg.seed,
            embedding_matrix=emb,
            variant=variant,
            norm_mode=cfg.norm_mode,
            hard_gating=cfg.hard_gating and variant != "no_mask",
        )
        tc = TrainConfig(
            lr=cfg.learning_rate, lr_decay=cfg.lr_decay, clip_norm=cfg.clip_norm,
            batch_size=cfg.batch_size, max_epochs=cfg.max_epochs, patience=cfg.patience,
            seed=cfg.seed, prediction_threshold=cfg.prediction_threshold,
        )
        result = train(train_docs, val_docs, model, mask_index, tc, ks=cfg.p_at_k)
        test_report = evaluate(test_docs, model, mask_index, cfg.prediction_threshold,
                               ks=cfg.p_at_k)
        report["variants"][variant] = _report_summary(test_report, result)
        logger.info("ablate %s: test micro-F1 %.4f", variant, test_report.micro_f1)

    if "full" in report["variants"]:
        full_f1 = report["variants"]["full"]["micro_f1"]
        report["micro_f1_delta_vs_full"] = {
            v: full_f1 - summary["micro_f1"]
            for v, summary in report["variants"].items()
            if v != "full"
        }
    return report


# ---------------------------------------------------------------------------
# checkpointing

_CKPT_MAGIC = b"XMTC-CKPT-v1\n"


def save_checkpoint(
    path,
    params_arrays: dict[str, np.ndarray],
    optimizer_state: dict,
    epoch: int,
    config_hash: str = "",
    vocab_hash: str = "",
    variant: str = "full",
) -> None:
    """Self-describing binary container: magic, JSON manifest, raw blobs.

    Arrays are stored as little-endian float64 bytes, so a reload reproduces
    forward passes bit-exactly.
    """
    names = list(params_arrays)
    manifest = {
        "epoch": epoch,
        "config_hash": config_hash,
        "vocab_hash": vocab_hash,
        "variant": variant,
        "params": [{"name": n, "shape": list(params_arrays[n].shape)} for n in names],
        "adam_t": int(optimizer_state.get("t", 0)),
    }
    payload = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for n in names:
            fh.write(np.ascontiguousarray(params_arrays[n], dtype="<f8").tobytes())
        for state_name in ("m", "v"):
            table = optimizer_state.get(state_name, {})
            for n in names:
                arr = table.get(n, np.zeros_like(params_arrays[n]))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns (parameter arrays, optimizer state, manifest metadata)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(_CKPT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file")
    offset = len(_CKPT_MAGIC)
    (length,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    manifest = json.loads(raw[offset : offset + length])
    offset += length

    def read_block(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        return np.array(arr, dtype=np.float64)

    params = {spec["name"]: read_block(spec["shape"]) for spec in manifest["params"]}
    state = {"t": manifest["adam_t"], "m": {}, "v": {}}
    for state_name in ("m", "v"):
        for spec in manifest["params"]:
            state[state_name][spec["name"]] = read_block(spec["shape"])
    return params, state, manifest
