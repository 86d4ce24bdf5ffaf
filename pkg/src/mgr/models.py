"""Generators, predictor and the multi-generator composite.

A generator maps a token sequence to per-token selection probabilities with a
bidirectional GRU and a linear head.  Masks are drawn with a binary-concrete
relaxation whose hard threshold is passed forward while the gradient follows
the relaxed value.  The predictor reads the masked embeddings, pools over the
selected positions and classifies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autograd as ag
from .autograd import Tensor
from .rng import stream

CHECKPOINT_FORMAT = "mgr-checkpoint"
CHECKPOINT_VERSION = 1


class Encoder:
    """Bidirectional single-layer GRU."""

    def __init__(self, input_dim, hidden_size, rng, name="encoder"):
        bound = 1.0 / np.sqrt(hidden_size)
        H = hidden_size
        self.hidden_size = H
        self.weights = {}
        for d in ("fwd", "bwd"):
            self.weights[d] = (
                ag.parameter(rng.uniform(-bound, bound, (input_dim, 3 * H)), f"{name}.{d}.w_x"),
                ag.parameter(rng.uniform(-bound, bound, (H, 3 * H)), f"{name}.{d}.w_h"),
                ag.parameter(rng.uniform(-bound, bound, 3 * H), f"{name}.{d}.b"),
            )

    @property
    def params(self):
        return [p for d in ("fwd", "bwd") for p in self.weights[d]]

    @property
    def output_dim(self):
        return 2 * self.hidden_size

    def __call__(self, x, step_mask):
        return encode_all([self], x, step_mask)[0]


def encode_all(encoders, x, step_mask):
    """Bidirectional states (B, T, 2H) of several same-sized encoders on one input.

    All directions of all encoders advance together in one recurrent loop.
    """
    cells = [enc.weights[d] for enc in encoders for d in ("fwd", "bwd")]
    states = ag.gru_group(x, cells, step_mask, [False, True] * len(encoders))
    _, B, T, H = states.shape
    parts = [ag.reshape(ag.slice_axis(states, k, k + 1, 0), (B, T, H)) for k in range(len(cells))]
    return [ag.concat(parts[2 * i:2 * i + 2], axis=-1) for i in range(len(encoders))]


def _linear_init(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class GeneratorParams:
    def __init__(self, encoder, rng, name="gen"):
        self.encoder = encoder
        self.head_w = ag.parameter(_linear_init(rng, encoder.output_dim, 1), f"{name}.head.w")
        self.head_b = ag.parameter(np.zeros(1), f"{name}.head.b")

    @property
    def head_params(self):
        return [self.head_w, self.head_b]

    @property
    def params(self):
        return self.encoder.params + self.head_params


class PredictorParams:
    def __init__(self, input_dim, hidden_size, class_count, rng, pooling="mean"):
        if pooling not in ("mean", "max"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.encoder = Encoder(input_dim, hidden_size, rng, name="pred.encoder")
        self.head_w = ag.parameter(_linear_init(rng, self.encoder.output_dim, class_count), "pred.head.w")
        self.head_b = ag.parameter(np.zeros(class_count), "pred.head.b")
        self.class_count = class_count
        self.pooling = pooling

    @property
    def params(self):
        return self.encoder.params + [self.head_w, self.head_b]


@dataclass
class MaskSample:
    """Per-token selection probabilities and the sampled binary mask.

    ``value`` is the tensor fed downstream: equal to ``hard_mask`` in the
    forward pass, differentiable through the relaxation in train mode.
    """

    probs: np.ndarray
    hard_mask: np.ndarray
    tau: float
    value: Tensor = field(repr=False, default=None)
    relaxed: Tensor = field(repr=False, default=None)


class MgrModel:
    """n generators sharing one predictor over a fixed embedding table."""

    def __init__(self, embedding, n=3, hidden_size=200, class_count=2, seed=0,
                 share_encoder=False, pooling="mean", train_embeddings=False):
        if n < 1:
            raise ValueError("an MGR model needs at least one generator")
        embedding = np.asarray(embedding, dtype=np.float64)
        self.embedding = Tensor(embedding.copy(), requires_grad=train_embeddings, name="embedding")
        self.n = n
        self.hidden_size = hidden_size
        self.class_count = class_count
        self.seed = seed
        self.share_encoder = share_encoder
        self.pooling = pooling
        self.train_embeddings = train_embeddings
        d = embedding.shape[1]
        if share_encoder:
            shared = Encoder(d, hidden_size, stream(seed, "init", "gen-encoder"), name="gen.encoder")
            self.generators = [
                GeneratorParams(shared, stream(seed, "init", "gen", i), name=f"gen{i + 1}") for i in range(n)
            ]
        else:
            self.generators = []
            for i in range(n):
                rng = stream(seed, "init", "gen", i)
                enc = Encoder(d, hidden_size, rng, name=f"gen{i + 1}.encoder")
                self.generators.append(GeneratorParams(enc, rng, name=f"gen{i + 1}"))
        self.predictor = PredictorParams(d, hidden_size, class_count, stream(seed, "init", "pred"), pooling)

    @property
    def shared_encoder(self):
        return self.generators[0].encoder if self.share_encoder else None

    def named_params(self):
        """Every distinct parameter tensor, keyed by its name."""
        out = {}
        if self.train_embeddings:
            out[self.embedding.name] = self.embedding
        for g in self.generators:
            for p in g.params:
                out.setdefault(p.name, p)
        for p in self.predictor.params:
            out[p.name] = p
        return out

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_params().items()}
        state["embedding"] = self.embedding.data.copy()
        return state

    def load_state_dict(self, state):
        params = self.named_params()
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        self.embedding.data = np.array(state["embedding"], dtype=np.float64)

    def config(self):
        return {
            "n": self.n,
            "hidden_size": self.hidden_size,
            "class_count": self.class_count,
            "seed": self.seed,
            "share_encoder": self.share_encoder,
            "pooling": self.pooling,
            "train_embeddings": self.train_embeddings,
        }


# ---------------------------------------------------------------------------
# forward pieces


def embed(model, ids):
    return ag.embedding(model.embedding, ids)


def generator_logits(gen, x, pad, states=None):
    """Selection logits (B, T) for embedded input ``x`` (B, T, D).

    ``states`` reuses encoder output that was already computed.
    """
    h = gen.encoder(x, pad) if states is None else states
    B, T, _ = h.shape
    logits = ag.add(ag.matmul(h, gen.head_w), gen.head_b)
    return ag.reshape(logits, (B, T))


def generator_forward(model, gen, ids, pad=None):
    """Per-token selection probabilities; padding positions are exactly 0."""
    ids = np.atleast_2d(np.asarray(ids))
    if ids.size == 0 or ids.shape[1] == 0:
        raise ValueError("generator input is empty")
    pad = (ids != 0).astype(np.float64) if pad is None else np.atleast_2d(pad)
    logits = generator_logits(gen, embed(model, ids), pad)
    return ag.sigmoid(logits).data * pad


def _logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def mask_from_logits(logits, pad, tau=1.0, mode="train", rng=None):
    """Sample a mask from selection logits.

    Modes: ``train`` draws a binary-concrete sample and passes the hard
    threshold forward with a straight-through gradient; ``eval`` thresholds the
    probabilities at 0.5; ``relaxed`` returns the soft sample itself (used for
    finite-difference checks of the relaxed path).
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    pad = np.asarray(pad, dtype=np.float64)
    probs = expit(logits.data) * pad
    if mode == "eval":
        hard = (logits.data > 0).astype(np.float64) * pad
        return MaskSample(probs, hard, tau, Tensor(hard))
    if mode not in ("train", "relaxed"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode sampling needs a random generator")
    u = rng.random(logits.shape)
    noise = np.log(u) - np.log1p(-u)
    soft = ag.mul(ag.sigmoid(ag.mul(ag.add(logits, noise), 1.0 / tau)), pad)
    hard = ((logits.data + noise) > 0).astype(np.float64) * pad
    if mode == "relaxed":
        return MaskSample(probs, hard, tau, soft, soft)
    return MaskSample(probs, hard, tau, ag.straight_through(hard, soft), soft)


def sample_mask(probs, tau=1.0, mode="train", seed=None, rng=None):
    """Draw a mask from probabilities in (0, 1).

    P(hard = 1) equals the input probability: the logistic-noise threshold of
    the binary-concrete sample is exactly a Bernoulli draw.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    probs = np.asarray(probs, dtype=np.float64)
    if mode == "eval":
        hard = (probs > 0.5).astype(np.float64)
        return MaskSample(probs, hard, tau, Tensor(hard))
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValueError("sampling probabilities must lie strictly inside (0, 1)")
    if rng is None:
        rng = np.random.default_rng(seed)
    return mask_from_logits(Tensor(_logit(probs)), np.ones_like(probs), tau, mode, rng)


def apply_mask(x, mask):
    """Scale each embedded token of ``x`` (B, T, D) by its mask value (B, T)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    mask = mask.value if isinstance(mask, MaskSample) else mask
    mask = mask if isinstance(mask, Tensor) else Tensor(mask)
    if x.shape[:2] != mask.shape:
        raise ag.ShapeError(f"apply_mask: incompatible shapes {x.shape} and {mask.shape}")
    B, T = mask.shape
    return ag.mul(x, ag.reshape(mask, (B, T, 1)))


def predictor_logits(pred, z, mask, pad):
    """Class logits (B, c) from masked input ``z`` and the mask that produced it."""
    mask = mask.value if isinstance(mask, MaskSample) else mask
    mask = mask if isinstance(mask, Tensor) else Tensor(mask)
    h = pred.encoder(z, pad)
    B, T, _ = h.shape
    if pred.pooling == "mean":
        w = ag.reshape(mask, (B, T, 1))
        num = ag.sum_(ag.mul(h, w), axis=1)
        # max(count, 1): an empty rationale pools to zero without a 1/eps gradient
        count = ag.sum_(w, axis=1)
        full = (count.data >= 1.0).astype(np.float64)
        den = ag.add(ag.mul(count, full), 1.0 - full)
        pooled = ag.div(num, den)
    else:
        pooled = ag.masked_max(h, mask.data)
    return ag.add(ag.matmul(pooled, pred.head_w), pred.head_b)


def predictor_forward(pred, z, mask, pad):
    return ag.softmax(predictor_logits(pred, z, mask, pad))


@dataclass
class GeneratorOutput:
    mask: MaskSample
    logits: Tensor  # predictor class logits

    @property
    def probs(self):
        return ag.softmax(self.logits).data


def mgr_forward(model, batch, tau=1.0, mode="train", rngs=None, generators=None):
    """Run every generator (or the listed indices) through the shared predictor.

    ``rngs[i]`` is generator i's private sampling stream.  The predictor runs
    once over all rationales stacked along the batch axis.
    """
    x = embed(model, batch.ids)
    idx = range(model.n) if generators is None else generators
    encoders = []
    for i in idx:
        if model.generators[i].encoder not in encoders:
            encoders.append(model.generators[i].encoder)
    states = encode_all(encoders, x, batch.pad)
    masks, zs = [], []
    for i in idx:
        gen = model.generators[i]
        logits = generator_logits(gen, x, batch.pad, states[encoders.index(gen.encoder)])
        m = mask_from_logits(logits, batch.pad, tau, mode, None if rngs is None else rngs[i])
        masks.append(m)
        zs.append(apply_mask(x, m))
    if len(masks) == 1:
        return [GeneratorOutput(masks[0], predictor_logits(model.predictor, zs[0], masks[0], batch.pad))]
    B = len(batch)
    stacked = predictor_logits(
        model.predictor,
        ag.concat(zs, axis=0),
        ag.concat([m.value for m in masks], axis=0),
        np.tile(batch.pad, (len(masks), 1)),
    )
    return [
        GeneratorOutput(m, ag.slice_axis(stacked, k * B, (k + 1) * B, 0)) for k, m in enumerate(masks)
    ]


def sampling_streams(seed, n):
    return [stream(seed, "sample", i) for i in range(n)]


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, model, extra=None):
    """Write all named tensors and the model config into one ``.npz`` archive.

    The archive holds one array per parameter plus ``__meta__``, a JSON string
    with keys ``format``, ``version``, ``model`` (constructor config) and
    ``extra`` (free-form, e.g. the training config).
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.config(),
        "extra": extra or {},
    }
    arrays = model.state_dict()
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, extra)``."""
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not an MGR checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        state = {k: archive[k] for k in archive.files if k != "__meta__"}
    model = MgrModel(state["embedding"], **meta["model"])
    model.load_state_dict(state)
    return model, meta["extra"]
