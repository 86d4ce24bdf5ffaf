import math

import numpy as np
import pytest

from mgr import autograd as ag
from mgr.data import SyntheticSpec, balanced_batches, generate_synthetic
from mgr.models import MgrModel, sampling_streams
from mgr.training import (
    EarlyStopping,
    LrSchedule,
    TrainConfig,
    build_optimizers,
    cross_entropy,
    dump_config,
    first_segment_mask,
    infer,
    load_config,
    log_header,
    mgr_loss,
    omega,
    omega_batch,
    parse_config_text,
    predictor_accuracy_on,
    skew_pretrain,
    train_loop,
    train_step,
    write_log,
)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SyntheticSpec(rho=0.8, n_train=200, n_dev=60, n_test=60, emb_dim=6, seed=1))


def _model(corpus, n=3, seed=0):
    return MgrModel(corpus.embeddings, n=n, hidden_size=5, seed=seed)


def _cfg(**kw):
    base = dict(n=3, hidden_size=5, epochs=2, batch_size=32, eta=2e-3, lambda1=2.0, lambda2=0.5)
    return TrainConfig(**{**base, **kw})


def test_omega_examples():
    assert omega([1, 1, 0, 0], s=0.5, lambda1=1, lambda2=1) == 1.0
    assert omega([1, 0, 1, 0], s=0.5, lambda1=1, lambda2=1) == 3.0
    assert omega([0, 0, 0, 0], s=0.25, lambda1=2, lambda2=1) == 0.5
    with pytest.raises(ValueError):
        omega([1, 0], length=0)


def test_omega_batch_matches_scalar_and_ignores_padding():
    m = np.array([[1, 1, 0, 1, 0], [0, 1, 1, 0, 0]], dtype=float)
    pad = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=float)
    got = omega_batch(ag.tensor(m), pad, 1.5, 0.7, 0.3).data
    want = [omega(m[0], 5, 1.5, 0.7, 0.3), omega(m[1], 3, 1.5, 0.7, 0.3)]
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_cross_entropy_perfect_and_uniform():
    perfect = cross_entropy(ag.tensor([[1000.0, -1000.0], [-1000.0, 1000.0]]), np.array([0, 1])).data
    np.testing.assert_array_equal(perfect, [0.0, 0.0])
    uniform = cross_entropy(ag.tensor(np.zeros((3, 2))), np.array([0, 1, 1])).data
    np.testing.assert_allclose(uniform, math.log(2), atol=1e-15)


def test_uniform_predictions_two_generators_loss(corpus):
    m = _model(corpus, n=2)
    m.predictor.head_w.data[:] = 0.0
    m.predictor.head_b.data[:] = 0.0
    cfg = _cfg(n=2, lambda1=0.0, lambda2=0.0)
    batch = next(balanced_batches(corpus.train, 16, 0))
    parts = mgr_loss(m, batch, cfg, sampling_streams(0, 2))
    assert abs(float(parts.loss.data) - 2 * math.log(2)) < 1e-12


@pytest.mark.parametrize("omega_mask", ["relaxed", "hard"])
def test_loss_is_sum_of_per_generator_terms(corpus, omega_mask):
    m = _model(corpus, n=3)
    cfg = _cfg(omega_mask=omega_mask)
    batch = next(balanced_batches(corpus.train, 16, 0))
    parts = mgr_loss(m, batch, cfg, sampling_streams(4, 3))
    assert abs(float(parts.loss.data) - sum(parts.ce) - sum(parts.omega)) < 1e-10
    # recompute generator 2's terms independently from its sampled mask
    o = parts.outputs[1]
    ce = float(ag.mean(cross_entropy(o.logits, batch.labels)).data)
    lengths = batch.pad.sum(axis=1)
    vals = o.mask.relaxed.data if omega_mask == "relaxed" else o.mask.hard_mask
    om = np.mean([omega(vals[b], lengths[b], cfg.lambda1, cfg.lambda2, cfg.sparsity_target)
                  for b in range(len(batch))])
    assert abs(ce - parts.ce[1]) < 1e-12 and abs(om - parts.omega[1]) < 1e-10


def test_loss_independent_of_lr_schedule(corpus):
    batch = next(balanced_batches(corpus.train, 16, 0))
    vals = []
    for sep in (True, False):
        m = _model(corpus)
        vals.append(float(mgr_loss(m, batch, _cfg(separate_lr=sep), sampling_streams(2, 3)).loss.data))
    assert vals[0] == vals[1]


def test_lr_schedule_rates(corpus):
    cfg = _cfg(eta=0.01)
    sched = LrSchedule.from_config(cfg)
    assert sched.generator_rates == (0.01, 0.02, 0.03) and sched.predictor_rate == 0.01 / 3
    opts = build_optimizers(_model(corpus), cfg)
    assert [o.lr for o in opts] == [0.01, 0.02, 0.03, 0.01 / 3]
    assert LrSchedule.from_config(_cfg(separate_lr=False)).generator_rates == (2e-3,) * 3


def test_train_step_uses_group_rates(corpus):
    m = _model(corpus)
    cfg = _cfg(eta=0.01)
    opts = build_optimizers(m, cfg)
    before = {k: v.data.copy() for k, v in m.named_params().items()}
    batch = next(balanced_batches(corpus.train, 16, 0))
    train_step(m, batch, cfg, opts, sampling_streams(0, 3))
    # Adam's first step moves each coordinate by about its rate, sign aside
    for i in range(3):
        p = m.generators[i].head_b
        step = abs(p.data - before[p.name])[0]
        assert abs(step - 0.01 * (i + 1)) < 1e-6 * (i + 1)


def test_training_is_deterministic(corpus):
    states = []
    for _ in range(2):
        m = _model(corpus)
        cfg = _cfg()
        opts = build_optimizers(m, cfg)
        rngs = sampling_streams(cfg.seed, 3)
        for k, batch in enumerate(balanced_batches(corpus.train, 16, 0)):
            if k == 4:
                break
            train_step(m, batch, cfg, opts, rngs)
        states.append({k: v.tobytes() for k, v in m.state_dict().items()})
    assert states[0] == states[1]


def test_early_stopping_rule():
    es = EarlyStopping(3)
    scores = [0.5, 0.6, 0.7, 0.8, 0.9, 0.9, 0.85, 0.9, 0.95]
    stopped = None
    for epoch, s in enumerate(scores, 1):
        es.update(epoch, s)
        if es.should_stop:
            stopped = epoch
            break
    assert stopped == 8 and es.best_epoch == 5


def test_zero_epochs_returns_initial_model(corpus):
    m = _model(corpus)
    before = m.state_dict()
    res = train_loop(m, corpus.train, corpus.dev, _cfg(epochs=0))
    assert res.log == [] and res.best_epoch == 0
    assert all(before[k].tobytes() == v.tobytes() for k, v in m.state_dict().items())


def test_train_loop_log_and_best_checkpoint(corpus, tmp_path):
    m = _model(corpus)
    res = train_loop(m, corpus.train, corpus.dev, _cfg(epochs=2))
    assert [r["epoch"] for r in res.log] == [1, 2]
    assert set(log_header(3)) <= set(res.log[0])
    write_log(tmp_path / "log.csv", res.log, 3)
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == "epoch,loss,ce_g1,ce_g2,ce_g3,omega_g1,omega_g2,omega_g3,dev_acc,sparsity,overlap_12,overlap_13,overlap_23"


def test_separable_task_learned_by_single_generator():
    c = generate_synthetic(SyntheticSpec(rho=0.0, emb_dim=16, seed=0))
    cfg = TrainConfig(n=1, hidden_size=16, eta=3e-3, lambda1=10.0, lambda2=0.05, epochs=8, early_stop_patience=8,
                      omega_mask="hard")
    m = MgrModel(c.embeddings, n=1, hidden_size=16, seed=0)
    res = train_loop(m, c.train, c.dev, cfg)
    assert max(r["dev_acc"] for r in res.log) > 0.95


def test_config_file_round_trip(tmp_path):
    cfg = _cfg(n=5, share_encoder=True, pooling="max")
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg
    assert load_config(p, eta=0.5).eta == 0.5


def test_config_errors_name_field():
    with pytest.raises(ValueError, match="unknown config field 'bogus'"):
        parse_config_text("bogus = 1")
    with pytest.raises(ValueError, match="sparsity_target"):
        TrainConfig(sparsity_target=1.5)
    with pytest.raises(ValueError, match="n:"):
        TrainConfig(n=0)


def test_skew_zero_epochs_is_no_op(corpus):
    m = _model(corpus, n=1)
    before = m.state_dict()
    assert skew_pretrain(m, corpus.train, _cfg(n=1), 0) == []
    assert all(before[k].tobytes() == v.tobytes() for k, v in m.state_dict().items())
    with pytest.raises(ValueError):
        skew_pretrain(m, corpus.train, _cfg(n=1), -1)


def test_skew_binds_predictor_to_first_segment():
    c = generate_synthetic(SyntheticSpec(rho=1.0, first_segment=10, n_train=400, n_dev=100, emb_dim=8, seed=2))
    m = MgrModel(c.embeddings, n=1, hidden_size=8, seed=0)
    gens_before = [p.data.copy() for p in m.generators[0].params]
    skew_pretrain(m, c.train, _cfg(n=1, eta=5e-3), 5, 10)
    assert all(np.array_equal(a, p.data) for a, p in zip(gens_before, m.generators[0].params))
    first = predictor_accuracy_on(m, c.dev, lambda b: first_segment_mask(b.pad, 10))
    causal = predictor_accuracy_on(m, c.dev, lambda b: b.gold.astype(float) * b.pad)
    assert first > causal


def test_infer_uses_generator_one_and_is_deterministic(corpus):
    m = _model(corpus)
    exs = corpus.test.examples[:5]
    m1, p1 = infer(m, exs)
    m2, p2 = infer(m, exs)
    assert all(np.array_equal(a, b) for a, b in zip(m1, m2)) and np.array_equal(p1, p2)
    one = MgrModel(corpus.embeddings, n=1, hidden_size=5, seed=0)
    mask_single, _ = infer(one, exs[0])
    assert np.array_equal(mask_single, infer(m, exs[0])[0])
