"""Rationale quality metrics and inter-generator overlap."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EvalReport:
    precision: float | None
    recall: float | None
    f1: float | None
    sparsity: float
    accuracy: float
    masks: list = field(default_factory=list, repr=False)
    predictions: list = field(default_factory=list, repr=False)

    def as_row(self, scale=100.0):
        """Values scaled for tables; absent P/R/F1 become empty strings."""
        def fmt(v):
            return "" if v is None else f"{v * scale:.2f}"

        return {
            "S": fmt(self.sparsity),
            "Acc": fmt(self.accuracy),
            "P": fmt(self.precision),
            "R": fmt(self.recall),
            "F1": fmt(self.f1),
        }


def token_prf1(pred_masks, gold_masks):
    """Micro-averaged token precision, recall and F1.

    Examples whose gold mask is None are skipped.  Zero denominators give 0.
    """
    tp = n_pred = n_gold = 0
    for i, (p, g) in enumerate(zip(pred_masks, gold_masks)):
        if g is None:
            continue
        p = np.asarray(p).astype(bool)
        g = np.asarray(g).astype(bool)
        if p.shape != g.shape:
            raise ValueError(f"example {i}: predicted mask length {p.size} != gold length {g.size}")
        tp += int(np.count_nonzero(p & g))
        n_pred += int(np.count_nonzero(p))
        n_gold += int(np.count_nonzero(g))
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def sparsity(pred_masks):
    """Mean fraction of selected tokens per example."""
    fractions = [np.count_nonzero(m) / len(m) if len(m) else 0.0 for m in pred_masks]
    return float(np.mean(fractions)) if fractions else 0.0


def accuracy(predictions, labels):
    """Argmax accuracy; ``np.argmax`` resolves ties to the lowest class index."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    if predictions.ndim == 1:
        hits = predictions == labels
    else:
        hits = predictions.argmax(axis=-1) == labels
    return float(np.mean(hits)) if hits.size else 0.0


def generator_overlap(m_i, m_j):
    """Share of differing tokens: |M_i - M_j|_1 / (|M_i|_1 + |M_j|_1).

    Two empty masks are defined to disagree nowhere (0).
    """
    a = np.asarray(m_i, dtype=np.float64)
    b = np.asarray(m_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mask lengths differ: {a.shape} vs {b.shape}")
    den = np.abs(a).sum() + np.abs(b).sum()
    if den == 0:
        return 0.0
    return float(np.abs(a - b).sum() / den)


def batch_overlap(masks_i, masks_j):
    vals = [generator_overlap(a, b) for a, b in zip(masks_i, masks_j)]
    return float(np.mean(vals)) if vals else 0.0


def padded_batch_overlap(masks_i, masks_j, pad):
    """``batch_overlap`` for padded (B, T) mask arrays; padding is ignored."""
    a = np.asarray(masks_i, dtype=np.float64) * pad
    b = np.asarray(masks_j, dtype=np.float64) * pad
    diff = np.abs(a - b).sum(axis=1)
    den = a.sum(axis=1) + b.sum(axis=1)
    vals = np.divide(diff, den, out=np.zeros_like(diff), where=den > 0)
    return float(vals.mean()) if len(vals) else 0.0


def write_rationale_dump(path, labels, predictions, masks, ids=None):
    """One line per example: ``id<TAB>label<TAB>prediction<TAB>mask``."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, (y, p, m) in enumerate(zip(labels, predictions, masks)):
            ex_id = k if ids is None else ids[k]
            bits = "".join("1" if v else "0" for v in np.asarray(m).astype(bool))
            fh.write(f"{ex_id}\t{int(y)}\t{int(p)}\t{bits}\n")
