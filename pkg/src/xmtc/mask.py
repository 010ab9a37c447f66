"""Per-document candidate-label masks from auxiliary code terminologies.

Three auxiliary terminologies (``drg``, ``cpt``, ``drugs``) are counted
against labels on the training split.  A code's candidate set keeps every
label whose conditional probability given the code strictly exceeds the
threshold; a document's mask is the union of candidate sets over all of its
codes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import TERMINOLOGIES, DocumentRecord, LabelCatalog
from .errors import DataError, ShapeError
from .tensor import Tensor, mul

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.005


@dataclass
class AuxMaskIndex:
    """Conditional co-occurrence tables P(label | aux code), plus audit counts.

    The full probability tables are kept (threshold 0), so any tau can be
    applied after the fact without recounting the corpus.
    """

    num_labels: int
    tau: float = DEFAULT_TAU
    tau_overrides: dict[str, float] = field(default_factory=dict)
    probs: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    pair_counts: dict[str, dict[str, np.ndarray]] | None = None
    code_counts: dict[str, dict[str, int]] | None = None

    def tau_for(self, terminology: str) -> float:
        return self.tau_overrides.get(terminology, self.tau)

    def candidates(self, terminology: str, code: str) -> np.ndarray | None:
        """Boolean candidate vector for one code, or None if the code is
        unknown (never seen in training)."""
        per_term = self.probs.get(terminology, {})
        p = per_term.get(code)
        if p is None:
            return None
        return p > self.tau_for(terminology)


def build_mask_index(
    train_docs: list[DocumentRecord],
    num_labels: int,
    tau: float = DEFAULT_TAU,
    tau_overrides: dict[str, float] | None = None,
) -> AuxMaskIndex:
    """Count label / auxiliary-code co-occurrence on the training split.

    A code occurrence is document-level (a code listed twice in one record
    counts once).  Codes that never occur are simply absent from the index.
    """
    pair_counts: dict[str, dict[str, np.ndarray]] = {t: {} for t in TERMINOLOGIES}
    code_counts: dict[str, dict[str, int]] = {t: {} for t in TERMINOLOGIES}
    for doc in train_docs:
        label_vec = np.zeros(num_labels)
        for lab in doc.labels:
            if lab < 0 or lab >= num_labels:
                raise DataError(f"document {doc.doc_id}: label id {lab} outside catalog")
            label_vec[lab] = 1.0
        for term in TERMINOLOGIES:
            for code in set(doc.aux_codes.get(term, ())):
                if code not in pair_counts[term]:
                    pair_counts[term][code] = np.zeros(num_labels)
                    code_counts[term][code] = 0
                pair_counts[term][code] += label_vec
                code_counts[term][code] += 1

    probs = {
        term: {code: pair_counts[term][code] / code_counts[term][code]
               for code in pair_counts[term]}
        for term in TERMINOLOGIES
    }
    return AuxMaskIndex(
        num_labels=num_labels,
        tau=tau,
        tau_overrides=dict(tau_overrides or {}),
        probs=probs,
        pair_counts=pair_counts,
        code_counts=code_counts,
    )


@dataclass
class DocMask:
    """Candidate label set for one document, as a set and an aligned 0/1
    vector (same label order as the representation matrix)."""

    labels: set[int]
    vec: np.ndarray

    @property
    def empty(self) -> bool:
        return not self.labels

    @classmethod
    def all_ones(cls, num_labels: int) -> "DocMask":
        return cls(labels=set(range(num_labels)), vec=np.ones(num_labels))


def make_doc_mask(doc: DocumentRecord, index: AuxMaskIndex) -> DocMask:
    """Union of candidate sets over the document's codes in all three
    terminologies.  Codes unseen in training are skipped (logged), since
    inference-time records may carry new codes."""
    vec = np.zeros(index.num_labels, dtype=bool)
    for term in TERMINOLOGIES:
        for code in doc.aux_codes.get(term, ()):
            cand = index.candidates(term, code)
            if cand is None:
                logger.debug("doc %s: unknown %s code %r skipped", doc.doc_id, term, code)
                continue
            vec |= cand
    return DocMask(labels=set(np.nonzero(vec)[0].tolist()), vec=vec.astype(np.float64))


def apply_mask(h_label: Tensor, mask: DocMask) -> Tensor:
    """Zero the representation rows of labels outside the candidate set.

    Gradient flow through zeroed rows is blocked by the multiplication."""
    if h_label.shape[0] != mask.vec.shape[0]:
        raise ShapeError(
            f"label representation rows {h_label.shape[0]} != mask length {mask.vec.shape[0]}"
        )
    return mul(h_label, Tensor(mask.vec[:, None]))


@dataclass
class MaskStats:
    recall_of_gold: float
    mean_mask_size: float
    mask_fraction: float
    num_docs: int
    num_gold_pairs: int


def mask_stats(index: AuxMaskIndex, docs: list[DocumentRecord]) -> MaskStats:
    """Gold-label recall and size statistics of the document masks."""
    covered = 0
    gold_pairs = 0
    sizes = []
    for doc in docs:
        mask = make_doc_mask(doc, index)
        sizes.append(len(mask.labels))
        gold_pairs += len(doc.labels)
        covered += len(doc.labels & mask.labels)
    mean_size = float(np.mean(sizes)) if sizes else 0.0
    return MaskStats(
        recall_of_gold=covered / gold_pairs if gold_pairs else 0.0,
        mean_mask_size=mean_size,
        mask_fraction=mean_size / index.num_labels if index.num_labels else 0.0,
        num_docs=len(docs),
        num_gold_pairs=gold_pairs,
    )


# ---------------------------------------------------------------------------
# artifact I/O


def save_mask_index(index: AuxMaskIndex, catalog: LabelCatalog, path, config_hash: str = "") -> None:
    """Persist the full probability tables (no tau filtering), so the
    threshold can be re-applied at load time without recounting."""
    with open(path, "w") as fh:
        fh.write(f"# xmtc-mask-index v1 config={config_hash} tau={float(index.tau)!r}\n")
        for term in TERMINOLOGIES:
            fh.write(f"[{term}]\n")
            for code in sorted(index.probs.get(term, {})):
                p = index.probs[term][code]
                for lab in np.nonzero(p)[0].tolist():
                    fh.write(f"{code}\t{catalog.codes[lab]}\t{float(p[lab])!r}\n")


def load_mask_index(
    path,
    catalog: LabelCatalog,
    tau: float | None = None,
    tau_overrides: dict[str, float] | None = None,
) -> tuple[AuxMaskIndex, str]:
    """Load a saved index; pass ``tau`` to re-threshold, else the saved
    value applies.  Audit counts are not stored in the artifact."""
    lines = Path(path).read_text().splitlines()
    config_hash = ""
    saved_tau = DEFAULT_TAU
    if lines and lines[0].startswith("#"):
        head = lines.pop(0)
        for part in head.split():
            if part.startswith("config="):
                config_hash = part[len("config="):]
            elif part.startswith("tau="):
                saved_tau = float(part[len("tau="):])
    probs: dict[str, dict[str, np.ndarray]] = {t: {} for t in TERMINOLOGIES}
    term = None
    for ln, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            term = line[1:-1]
            if term not in TERMINOLOGIES:
                raise DataError(f"{path}:{ln}: unknown terminology {term!r}")
            continue
        if term is None:
            raise DataError(f"{path}:{ln}: entry before any terminology section")
        try:
            code, label_code, prob_s = line.split("\t")
        except ValueError:
            raise DataError(f"{path}:{ln}: expected 'code<TAB>label<TAB>prob'") from None
        vec = probs[term].setdefault(code, np.zeros(len(catalog)))
        vec[catalog.id_of(label_code)] = float(prob_s)
    index = AuxMaskIndex(
        num_labels=len(catalog),
        tau=saved_tau if tau is None else tau,
        tau_overrides=dict(tau_overrides or {}),
        probs=probs,
    )
    return index, config_hash
