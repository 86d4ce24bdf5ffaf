"""Fixed synthetic experiments comparing one generator (RNP) against MGR.

Each setup returns a corpus spec and a training config built from a seed, so a
single integer reproduces a whole run.  Budgets are identical across methods:
same corpus, epochs, batch size, base learning rate and regularizers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data import SyntheticSpec, generate_synthetic
from .metrics import batch_overlap
from .models import MgrModel
from .training import (
    TrainConfig,
    eval_masks,
    first_segment_mask,
    predictor_accuracy_on,
    rationale_f1,
    skew_pretrain,
    train_loop,
)

# corpus shared by all experiments: causal and spurious spans of equal length
CORPUS = dict(vocab_size=100, n_train=2000, n_dev=500, n_test=500, seq_len=40,
              causal_len=4, spurious_len=4, cues_per_set=4, emb_dim=16)
# s matches the causal fraction 4/40; patience equals the epoch budget so
# a slow start at chance accuracy is not cut short
TRAIN = dict(eta=3e-3, lambda1=10.0, lambda2=0.05, sparsity_target=0.1, hidden_size=16,
             epochs=15, batch_size=32, early_stop_patience=15, tau=1.0, omega_mask="hard")
SKEW_SEGMENT = 10
SKEW_LEVELS = (10, 15, 20)
SKEW_TRAIN = dict(epochs=12, early_stop_patience=12)
OVERLAP_TRAIN = dict(epochs=8, early_stop_patience=8)


def spurious_setup(seed, rho=0.8, n=3, **overrides):
    spec = SyntheticSpec(rho=rho, seed=seed, **CORPUS)
    cfg = TrainConfig(n=n, seed=seed, **{**TRAIN, **overrides})
    return spec, cfg


def skew_setup(seed, skew_epochs=20, n=3, rho=0.8, **overrides):
    spec = SyntheticSpec(rho=rho, seed=seed, first_segment=SKEW_SEGMENT, **CORPUS)
    cfg = TrainConfig(n=n, seed=seed, skew_epochs=skew_epochs, skew_segment=SKEW_SEGMENT,
                      **{**TRAIN, **SKEW_TRAIN, **overrides})
    return spec, cfg


def overlap_setup(seed, n=3, **overrides):
    """Decorrelated task (no spurious span) for tracking generator agreement."""
    spec = SyntheticSpec(rho=0.0, seed=seed, **CORPUS)
    cfg = TrainConfig(n=n, seed=seed, **{**TRAIN, **OVERLAP_TRAIN, **overrides})
    return spec, cfg


@dataclass
class MethodResult:
    n: int
    seed: int
    f1_g1: float
    f1_avg: float
    precision: float
    recall: float
    accuracy: float
    sparsity: float
    seconds: float
    best_epoch: int
    rows: list = field(default_factory=list, repr=False)
    curve: list = field(default_factory=list, repr=False)
    skew_gap: float | None = None

    @property
    def overlaps(self):
        """Logged mean pairwise overlap of the training-time masks, per epoch."""
        cols = [k for k in (self.rows[0] if self.rows else {}) if k.startswith("overlap_")]
        return [float(np.mean([r[c] for c in cols])) if cols else 0.0 for r in self.rows]

    @property
    def final_f1s(self):
        """Test F1 of every generator after the last epoch (not the best checkpoint)."""
        return self.curve[-1] if self.curve else None

    @property
    def method(self):
        return "RNP" if self.n == 1 else f"MGR(n={self.n})"


def mean_overlap(model, split):
    """Mean pairwise share of differing tokens between eval-mode masks."""
    if model.n < 2:
        return 0.0
    masks, _ = eval_masks(model, split)
    return float(np.mean([batch_overlap(masks[i], masks[j]) for i, j in combinations(range(model.n), 2)]))


def skew_predictor_state(corpus, cfg):
    """Predictor weights after skew pretraining; identical for every n at one seed."""
    scratch = MgrModel(corpus.embeddings, n=1, hidden_size=cfg.hidden_size, seed=cfg.seed, pooling=cfg.pooling)
    skew_pretrain(scratch, corpus.train, cfg)
    return {k: v for k, v in scratch.state_dict().items() if k.startswith("pred.")}


def run_method(corpus, cfg, track=False, predictor_state=None):
    """Build, optionally skew-pretrain, train and score one model on ``corpus``.

    Scores use the best-dev checkpoint on the test split: F1 of generator 1
    (the one used at inference) and the mean F1 over all generators.  With
    ``track`` the test F1 of every generator is also recorded after each
    epoch.  ``predictor_state`` replaces skew pretraining with saved weights.
    """
    t0 = time.perf_counter()
    model = MgrModel(corpus.embeddings, n=cfg.n, hidden_size=cfg.hidden_size, seed=cfg.seed,
                     share_encoder=cfg.share_encoder, pooling=cfg.pooling)
    gap = None
    if cfg.skew_epochs:
        if predictor_state is None:
            skew_pretrain(model, corpus.train, cfg)
        else:
            model.load_state_dict({**model.state_dict(), **predictor_state})
        seg = cfg.skew_segment
        on_first = predictor_accuracy_on(model, corpus.dev, lambda b: first_segment_mask(b.pad, seg))
        on_gold = predictor_accuracy_on(model, corpus.dev, lambda b: b.gold.astype(np.float64) * b.pad)
        gap = on_first - on_gold
    curve = []

    def cb(epoch, m, row):
        if track:
            masks, _ = eval_masks(m, corpus.test)
            curve.append([rationale_f1(masks[i], corpus.test)[2] for i in range(m.n)])

    result = train_loop(model, corpus.train, corpus.dev, cfg, cb)
    masks, probs = eval_masks(model, corpus.test)
    prf = [rationale_f1(masks[i], corpus.test) for i in range(model.n)]
    labels = corpus.test.labels
    acc = float(np.mean(probs[0].argmax(axis=1) == labels))
    sp = float(np.mean([m.mean() for m in masks[0]]))
    return MethodResult(
        n=cfg.n, seed=cfg.seed, f1_g1=prf[0][2], f1_avg=float(np.mean([p[2] for p in prf])),
        precision=prf[0][0], recall=prf[0][1], accuracy=acc, sparsity=sp,
        seconds=time.perf_counter() - t0, best_epoch=result.best_epoch, rows=result.log,
        curve=curve, skew_gap=gap,
    )


def compare(setup, seeds, ns=(1, 3), track=False, **kwargs):
    """Run every method in ``ns`` on each seed's corpus; returns a flat result list.

    Skew pretraining does not depend on n, so it runs once per seed and the
    skewed predictor is shared by all methods.
    """
    out = []
    for seed in seeds:
        spec, cfg = setup(seed, **kwargs)
        corpus = generate_synthetic(spec)
        state = skew_predictor_state(corpus, cfg) if cfg.skew_epochs else None
        for n in ns:
            _, cfg = setup(seed, n=n, **kwargs)
            out.append(run_method(corpus, cfg, track, state))
    return out


def summarize(results):
    """Per-method means of the headline numbers, keyed by method name."""
    table = {}
    for r in results:
        table.setdefault(r.method, []).append(r)
    keys = ("f1_g1", "f1_avg", "precision", "recall", "accuracy", "sparsity", "seconds")
    return {m: {k: float(np.mean([getattr(r, k) for r in rs])) for k in keys} for m, rs in table.items()}
