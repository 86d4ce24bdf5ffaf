"""Objective, optimisation and the training loop for multi-generator rationalization."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from itertools import combinations

import numpy as np

from . import autograd as ag
from .data import balanced_batches, make_batch, sequential_batches
from .metrics import EvalReport, accuracy, padded_batch_overlap, sparsity, token_prf1
from .models import apply_mask, embed, mgr_forward, predictor_logits, sampling_streams
from .optim import Adam, NonFiniteGradientError

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the best model restored so far."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class TrainConfig:
    n: int = 3
    eta: float = 1e-3
    lambda1: float = 1.0
    lambda2: float = 1.0
    sparsity_target: float = 0.1
    tau: float = 1.0
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    early_stop_patience: int = 5
    share_encoder: bool = False
    separate_lr: bool = True
    hidden_size: int = 200
    pooling: str = "mean"
    max_len: int = 256
    skew_epochs: int = 0
    skew_segment: int = 10
    omega_mask: str = "relaxed"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n < 1:
            raise ValueError("n: need at least one generator")
        if self.eta <= 0:
            raise ValueError("eta: learning rate must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1/lambda2: regularizer weights must be non-negative")
        if not 0.0 < self.sparsity_target < 1.0:
            raise ValueError("sparsity_target: must lie in (0, 1)")
        if self.tau <= 0:
            raise ValueError("tau: temperature must be positive")
        if self.epochs < 0:
            raise ValueError("epochs: must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience: must be positive")
        if self.skew_epochs < 0:
            raise ValueError("skew_epochs: must be non-negative")
        if self.omega_mask not in ("relaxed", "hard"):
            raise ValueError("omega_mask: must be 'relaxed' or 'hard'")
        if self.pooling not in ("mean", "max"):
            raise ValueError("pooling: must be 'mean' or 'max'")

    def replace(self, **changes):
        return TrainConfig(**{**asdict(self), **changes})


def _parse_value(raw, typ):
    if typ in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw.strip()


def parse_config_text(text):
    """Parse ``key = value`` lines (``#`` comments) into TrainConfig overrides."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config field {key!r}")
        try:
            out[key] = _parse_value(raw, types[key])
        except ValueError as err:
            raise ValueError(f"{key}: {err}") from None
    return out


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def dump_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


@dataclass(frozen=True)
class LrSchedule:
    generator_rates: tuple
    predictor_rate: float

    @classmethod
    def from_config(cls, cfg):
        if cfg.separate_lr:
            rates = tuple(i * cfg.eta for i in range(1, cfg.n + 1))
        else:
            rates = (cfg.eta,) * cfg.n
        return cls(rates, cfg.eta / cfg.n)


# ---------------------------------------------------------------------------
# objective


def omega(mask, length=None, lambda1=1.0, lambda2=1.0, s=0.1):
    """Sparsity-plus-continuity penalty of one mask over its first ``length`` positions."""
    m = np.asarray(mask, dtype=np.float64)
    length = len(m) if length is None else int(length)
    if length <= 0:
        raise ValueError("mask length must be positive")
    m = m[:length]
    return float(lambda1 * abs(m.sum() / length - s) + lambda2 * np.abs(np.diff(m)).sum())


def omega_batch(mask, pad, lambda1, lambda2, s):
    """Per-example penalty (B,) for mask tensor (B, T); padding positions are excluded."""
    pad = np.asarray(pad, dtype=np.float64)
    lengths = pad.sum(axis=1)
    if np.any(lengths <= 0):
        raise ValueError("mask length must be positive")
    frac = ag.div(ag.sum_(ag.mul(mask, pad), axis=1), lengths)
    term1 = ag.mul(ag.abs_(ag.sub(frac, s)), lambda1)
    B, T = mask.shape
    if T > 1:
        step = ag.sub(ag.slice_axis(mask, 1, T, 1), ag.slice_axis(mask, 0, T - 1, 1))
        term2 = ag.mul(ag.sum_(ag.mul(ag.abs_(step), pad[:, 1:]), axis=1), lambda2)
        return ag.add(term1, term2)
    return term1


def cross_entropy(logits, labels):
    """Per-example cross-entropy (B,) in nats."""
    lp = ag.log_softmax(logits)
    onehot = np.zeros(lp.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ag.neg(ag.sum_(ag.mul(lp, onehot), axis=1))


@dataclass
class LossParts:
    loss: ag.Tensor
    ce: list
    omega: list
    sparsity: list
    outputs: list


def mgr_loss(model, batch, cfg, rngs=None, mode="train"):
    """Sum over generators of batch-mean (cross-entropy + penalty)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    outs = mgr_forward(model, batch, cfg.tau, mode, rngs)
    total = None
    ce_vals, om_vals, sp_vals = [], [], []
    for i, o in enumerate(outs):
        ce = ag.mean(cross_entropy(o.logits, batch.labels))
        use_soft = cfg.omega_mask == "relaxed" and o.mask.relaxed is not None
        penalised = o.mask.relaxed if use_soft else o.mask.value
        om = ag.mean(omega_batch(penalised, batch.pad, cfg.lambda1, cfg.lambda2, cfg.sparsity_target))
        for tag, t in ((f"ce_g{i + 1}", ce), (f"omega_g{i + 1}", om)):
            if not np.isfinite(t.data):
                raise NonFiniteLossError(f"non-finite {tag}")
        term = ag.add(ce, om)
        total = term if total is None else ag.add(total, term)
        ce_vals.append(float(ce.data))
        om_vals.append(float(om.data))
        sp_vals.append(float((o.mask.hard_mask.sum(axis=1) / batch.pad.sum(axis=1)).mean()))
    return LossParts(total, ce_vals, om_vals, sp_vals, outs)


# ---------------------------------------------------------------------------
# optimisation


def build_optimizers(model, cfg):
    """One Adam group per generator (rate i*eta) plus the predictor (eta/n).

    A shared generator encoder forms its own group at the base rate eta.
    """
    sched = LrSchedule.from_config(cfg)
    groups = []
    for i, g in enumerate(model.generators):
        params = g.head_params if model.share_encoder else g.params
        groups.append(Adam(params, sched.generator_rates[i]))
    if model.share_encoder:
        groups.append(Adam(model.shared_encoder.params, cfg.eta))
    pred = list(model.predictor.params)
    if model.train_embeddings:
        pred.append(model.embedding)
    groups.append(Adam(pred, sched.predictor_rate))
    return groups


def train_step(model, batch, cfg, optimizers, rngs):
    """One backward pass and one Adam step per parameter group."""
    params = list(model.named_params().values())
    ag.zero_grad(params)
    parts = mgr_loss(model, batch, cfg, rngs)
    ag.backward(parts.loss)
    for opt in optimizers:
        opt.step()
    return parts


# ---------------------------------------------------------------------------
# evaluation helpers


def eval_masks(model, split, batch_size=256, generators=None):
    """Eval-mode masks (trimmed to true length) and predictions per generator."""
    idx = list(range(model.n)) if generators is None else list(generators)
    masks = {i: [] for i in idx}
    probs = {i: [] for i in idx}
    for batch in sequential_batches(split, batch_size):
        outs = mgr_forward(model, batch, mode="eval", generators=idx)
        lengths = batch.lengths
        for i, o in zip(idx, outs):
            hard = o.mask.hard_mask.astype(np.int64)
            masks[i].extend(hard[b, :lengths[b]] for b in range(len(batch)))
            probs[i].append(o.probs)
    return masks, {i: np.concatenate(p) for i, p in probs.items()}


def infer(model, examples):
    """Generator-1 eval-mode masks and the predictor's class probabilities."""
    single = not isinstance(examples, (list, tuple)) and not hasattr(examples, "examples")
    exs = [examples] if single else list(examples)
    batch = make_batch(exs)
    out = mgr_forward(model, batch, mode="eval", generators=[0])[0]
    lengths = batch.lengths
    masks = [out.mask.hard_mask[b, :lengths[b]].astype(np.int64) for b in range(len(exs))]
    probs = out.probs
    if single:
        return masks[0], probs[0]
    return masks, probs


def rationale_f1(masks, split):
    return token_prf1(masks, [ex.gold_mask for ex in split])


def evaluate_model(model, split, generator=0):
    """EvalReport for one generator's eval-mode masks; P/R/F1 need gold masks."""
    masks, probs = eval_masks(model, split, generators=[generator])
    m, pr = masks[generator], probs[generator]
    prec = rec = f1 = None
    if split.has_gold:
        prec, rec, f1 = rationale_f1(m, split)
    return EvalReport(prec, rec, f1, sparsity(m), accuracy(pr, split.labels), m, list(pr.argmax(axis=1)))


def dev_metrics(model, split):
    masks, probs = eval_masks(model, split)
    labels = split.labels
    return {
        "dev_acc": accuracy(probs[0], labels),
        "sparsity": sparsity(masks[0]),
        "f1": rationale_f1(masks[0], split)[2] if split.has_gold else None,
    }


# ---------------------------------------------------------------------------
# training loop


class EarlyStopping:
    """Track the best score; ties keep the earlier epoch."""

    def __init__(self, patience):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch, score):
        """Record an epoch; returns True if it became the new best."""
        if score > self.best_score:
            self.best_score, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


def log_header(n):
    cols = ["epoch", "loss"]
    cols += [f"ce_g{i}" for i in range(1, n + 1)]
    cols += [f"omega_g{i}" for i in range(1, n + 1)]
    cols += ["dev_acc", "sparsity"]
    cols += [f"overlap_{i + 1}{j + 1}" for i, j in combinations(range(n), 2)]
    return cols


def write_log(path, rows, n):
    header = log_header(n)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in header])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


@dataclass
class TrainResult:
    model: object
    log: list
    best_epoch: int
    stopped_epoch: int


def train_loop(model, train, dev, cfg, epoch_callback=None):
    """Train with balanced batches and dev-accuracy early stopping.

    The best checkpoint (by dev accuracy, earliest on ties) is loaded back into
    ``model`` before returning.  ``epoch_callback(epoch, model, row)`` runs
    after each epoch's evaluation.  Logged overlaps average the pairwise
    disagreement of the masks sampled during the epoch's training steps.
    """
    optimizers = build_optimizers(model, cfg)
    rngs = sampling_streams(cfg.seed, model.n)
    stopper = EarlyStopping(cfg.early_stop_patience)
    best_state = model.state_dict()
    rows = []
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        pairs = list(combinations(range(model.n), 2))
        sums = np.zeros(1 + 2 * model.n + len(pairs))
        steps = 0
        try:
            for batch in balanced_batches(train, cfg.batch_size, cfg.seed, epoch):
                parts = train_step(model, batch, cfg, optimizers, rngs)
                hard = [o.mask.hard_mask for o in parts.outputs]
                ov = [padded_batch_overlap(hard[i], hard[j], batch.pad) for i, j in pairs]
                sums += [float(parts.loss.data), *parts.ce, *parts.omega, *ov]
                steps += 1
        except (NonFiniteLossError, NonFiniteGradientError) as err:
            model.load_state_dict(best_state)
            result = TrainResult(model, rows, stopper.best_epoch, epoch)
            raise TrainingDiverged(f"epoch {epoch}: {err}", result) from err
        means = sums / max(steps, 1)
        dm = dev_metrics(model, dev)
        row = {"epoch": epoch, "loss": means[0]}
        for i in range(model.n):
            row[f"ce_g{i + 1}"] = means[1 + i]
            row[f"omega_g{i + 1}"] = means[1 + model.n + i]
        row["dev_acc"] = dm["dev_acc"]
        row["sparsity"] = dm["sparsity"]
        for k, (i, j) in enumerate(pairs):
            row[f"overlap_{i + 1}{j + 1}"] = means[1 + 2 * model.n + k]
        rows.append(row)
        log.info("epoch %d loss %.4f dev_acc %.4f", epoch, row["loss"], row["dev_acc"])
        if epoch_callback is not None:
            epoch_callback(epoch, model, row)
        if stopper.update(epoch, dm["dev_acc"]):
            best_state = model.state_dict()
        if stopper.should_stop:
            break
    model.load_state_dict(best_state)
    return TrainResult(model, rows, stopper.best_epoch, epoch if rows else 0)


def first_segment_mask(pad, segment):
    m = np.zeros_like(pad)
    m[:, :segment] = 1.0
    return m * pad


def skew_pretrain(model, train, cfg, k_epochs=None, segment=None):
    """Train the predictor alone on first-segment-only input for ``k_epochs``.

    Generators are left untouched.  Returns the per-epoch mean loss.
    """
    k_epochs = cfg.skew_epochs if k_epochs is None else k_epochs
    segment = cfg.skew_segment if segment is None else segment
    if k_epochs < 0:
        raise ValueError("k_epochs must be non-negative")
    if k_epochs == 0:
        return []
    opt = Adam(list(model.predictor.params), cfg.eta)
    losses = []
    for epoch in range(1, k_epochs + 1):
        total, steps = 0.0, 0
        for batch in balanced_batches(train, cfg.batch_size, cfg.seed, epoch, tag="skew"):
            opt.zero_grad()
            m = first_segment_mask(batch.pad, segment)
            z = apply_mask(embed(model, batch.ids), ag.Tensor(m))
            loss = ag.mean(cross_entropy(predictor_logits(model.predictor, z, m, batch.pad), batch.labels))
            ag.backward(loss)
            opt.step()
            total += float(loss.data)
            steps += 1
        losses.append(total / max(steps, 1))
    return losses


def predictor_accuracy_on(model, split, mask_fn, batch_size=256):
    """Predictor accuracy when fed the masks produced by ``mask_fn(batch)``."""
    probs = []
    for batch in sequential_batches(split, batch_size):
        m = mask_fn(batch)
        z = apply_mask(embed(model, batch.ids), ag.Tensor(m))
        probs.append(ag.softmax(predictor_logits(model.predictor, z, m, batch.pad)).data)
    return accuracy(np.concatenate(probs), split.labels)
