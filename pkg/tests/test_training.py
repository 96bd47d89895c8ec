import numpy as np
import pytest

import oracles
from lear import tensor as T
from lear.data import Corpus, LabelFile, Record, Span, SynthSpec, synth_corpus
from lear.errors import ConfigError, DivergenceError, ValidationError
from lear.model import ModelConfig
from lear.tensor import Tensor
from lear.training import (Adam, AdamState, TrainConfig, adam_step, build_model, gradcheck, lr_schedule,
                           parse_config, scheduled_lr, seed_streams, train)


@pytest.fixture(scope="module")
def small():
    splits, labels = synth_corpus(SynthSpec(num_categories=2, sentences=8, dev_sentences=4), seed=3)
    return splits, labels


def tiny_model(splits, labels, seed=0, mode="flat"):
    cfg = ModelConfig(d_model=8, n_layers=1, n_heads=2, max_seq_len=32, mode=mode)
    return build_model(cfg, splits["train"], labels, seed)


def test_adam_zero_gradient_is_fixed_point():
    theta = np.array([0.3, -1.2])
    state = AdamState.zeros_like(theta)
    for _ in range(3):
        theta_next = adam_step(theta, np.zeros(2), state, 1e-3)
        assert np.array_equal(theta_next, theta)


def test_adam_first_step():
    delta = adam_step(np.zeros(1), np.ones(1), AdamState.zeros_like(np.zeros(1)), 1e-3)[0]
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert delta == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-15)
    assert abs(delta - -9.99999995e-4) < 1e-11


def test_adam_matches_unrolled_recurrence():
    theta = np.array([0.5])
    state = AdamState.zeros_like(theta)
    grads = [0.7, 0.7, -0.2, 1.5]
    for g in grads:
        theta = adam_step(theta, np.array([g]), state, 1e-2)
    assert theta[0] == pytest.approx(oracles.adam_unrolled(0.5, grads, 1e-2), rel=1e-14)


def test_adam_two_learning_rate_tiers():
    enc, task = Tensor(np.zeros(2), requires_grad=True), Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([("encoder.w", enc), ("scoring.w", task)])
    enc.grad = np.ones(2)
    task.grad = np.ones(2)
    opt.step(1e-3, 1e-2)
    assert enc.data[0] == pytest.approx(-1e-3, rel=1e-7) and task.data[0] == pytest.approx(-1e-2, rel=1e-7)


def test_adam_non_finite_gradient_diverges():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(DivergenceError, match="w"):
        Adam([("w", p)]).step(1e-3, 1e-3)
    assert np.array_equal(p.data, np.zeros(2))


def test_lr_schedule_examples_and_monotonicity():
    assert lr_schedule(0, 10, 0.1) == 0.1
    assert lr_schedule(10, 10, 0.1) == 0.0
    assert lr_schedule(5, 10, 0.1) == pytest.approx(0.05)
    assert lr_schedule(12, 10, 0.1) == 0.0
    values = [lr_schedule(s, 37, 1e-3) for s in range(38)]
    assert all(a >= b for a, b in zip(values, values[1:])) and values[-1] == 0.0
    assert scheduled_lr(0, 10, 1.0, warmup_frac=0.2) == 0.5
    assert scheduled_lr(2, 10, 1.0, warmup_frac=0.2) == 1.0


def test_parse_config():
    model_cfg, train_cfg = parse_config("d_model = 16  # small\nmode = nested\nlr_task = 5e-4\nepochs=3\n")
    assert model_cfg.d_model == 16 and model_cfg.mode == "nested"
    assert train_cfg.mode == "nested" and train_cfg.decode == "nested"
    assert train_cfg.lr_task == 5e-4 and train_cfg.epochs == 3


@pytest.mark.parametrize("text", ["colour = red", "epochs = 1\nepochs = 2", "epochs", "epochs = many",
                                  "mode = nested\ndecode = heuristic", "dropout = 1.0", "batch_size = 0"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_seed_streams_are_independent_and_reproducible():
    a = [g.random(3) for g in seed_streams(5)]
    b = [g.random(3) for g in seed_streams(5)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])


def test_training_is_deterministic(small):
    splits, labels = small
    cfg = TrainConfig(epochs=2, batch_size=4, seed=11)
    r1 = train(tiny_model(splits, labels, 11), splits["train"], cfg, splits["dev"])
    r2 = train(tiny_model(splits, labels, 11), splits["train"], cfg, splits["dev"])
    assert r1.step_log == r2.step_log
    assert r1.metrics_csv() == r2.metrics_csv()
    assert r1.checkpoint == r2.checkpoint and r1.model.to_bytes() == r2.model.to_bytes()


def test_zero_learning_rate_keeps_parameters_and_losses(small):
    splits, labels = small
    model = tiny_model(splits, labels)
    before = model.to_bytes()
    cfg = TrainConfig(lr_encoder=0.0, lr_task=0.0, epochs=3, batch_size=8, dropout=0.0)
    result = train(model, splits["train"], cfg)
    assert model.to_bytes() == before
    # the per-epoch shuffle only reorders the float summation
    losses = [h.loss for h in result.history]
    assert losses == pytest.approx([losses[0]] * 3, rel=1e-14)


def test_training_reduces_loss(small):
    splits, labels = small
    cfg = TrainConfig(epochs=4, batch_size=4, lr_encoder=3e-3, lr_task=3e-3, dropout=0.0)
    result = train(tiny_model(splits, labels), splits["train"], cfg)
    assert result.history[-1].loss < result.history[0].loss
    csv = result.metrics_csv().splitlines()
    assert csv[0] == "epoch,precision,recall,f1,loss" and len(csv) == 5
    assert result.best_f1 == max(h.f1 for h in result.history)


def test_nested_training_step_runs(small):
    splits, _ = synth_corpus(SynthSpec(num_categories=2, sentences=4, mode="nested"), seed=1)
    labels = synth_corpus(SynthSpec(num_categories=2, sentences=4, mode="nested"), seed=1)[1]
    model = tiny_model(splits, labels, mode="nested")
    result = train(model, splits["train"], TrainConfig(mode="nested", epochs=1, batch_size=2))
    assert len(result.step_log) == 2 and np.isfinite(result.history[0].loss)


def test_empty_corpus_and_category_mismatch(small):
    splits, labels = small
    model = tiny_model(splits, labels)
    with pytest.raises(ValidationError, match="empty"):
        train(model, Corpus([], vocab=splits["train"].vocab), TrainConfig(epochs=1))
    odd = Corpus([Record(0, "w1 w2", [Span(0, 1, "Nope")])], vocab=splits["train"].vocab)
    with pytest.raises(ValidationError, match="Nope"):
        train(model, odd, TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        train(model, splits["train"], TrainConfig(epochs=1, mode="nested"))


def test_gradcheck_passes_on_correct_graph():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    report = gradcheck(lambda: T.sum(T.tanh(T.matmul(x, w))), [("x", x), ("w", w)])
    assert report.passed and report.max_rel_error < 1e-7
    assert "overall" in report.format()


def test_gradcheck_catches_corrupted_gradient():
    def bad_tanh(t):
        y = np.tanh(t.data)
        return T.make_op(y, (t,), lambda g: (g * (1.0 - y),))  # wrong derivative

    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    report = gradcheck(lambda: T.sum(bad_tanh(T.matmul(x, w))), [("x", x), ("w", w)])
    assert not report.passed
    assert all(not c.passed for c in report.checks)
    assert "FAIL" in report.format()


def test_gradcheck_non_finite_loss_aborts():
    x = Tensor(np.array([800.0]), requires_grad=True)
    with pytest.raises(DivergenceError), np.errstate(over="ignore"):
        gradcheck(lambda: T.sum(T.exp(x)), [("x", x)])


def test_label_file_mismatch_with_model_names():
    labels = LabelFile(["A"], ["alpha"])
    splits, _ = synth_corpus(SynthSpec(num_categories=2, sentences=4), seed=1)
    model = tiny_model(splits, labels)
    with pytest.raises(ValidationError):
        train(model, splits["train"], TrainConfig(epochs=1))
