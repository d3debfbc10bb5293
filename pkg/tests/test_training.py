import numpy as np
import pytest

from ssmlora import tensor as T
from ssmlora.adapter import AdapterConfig
from ssmlora.encoder import EncoderConfig, attach_adapters, build_encoder, encoder_forward
from ssmlora.errors import ConfigError, InputError, NumericError, TrainingError
from ssmlora.planner import plan_by_name
from ssmlora.tasks import Dataset, TaskSpec, gen_task
from ssmlora.training import (
    Adam,
    TrainOptions,
    cross_entropy,
    evaluate,
    gradcheck,
    randomize_adapters,
    rel_error,
    train,
)

TINY = EncoderConfig(L=2, d=16, heads=2, d_ff=32, vocab=8, max_seq=16, n_classes=4)
TASK = TaskSpec("copy-classify", seq_len=8, n_train=64, n_eval=32, vocab=8, n_classes=4, seed=5)
ADAPTER = AdapterConfig(r=4)


def tiny_model(pattern="alternating", seed=1):
    return attach_adapters(build_encoder(TINY, 0), plan_by_name(pattern, TINY.L), ADAPTER, seed)


def sample(seed=0, batch=2, seq=6, vocab=8, classes=4):
    g = np.random.default_rng(seed)
    return g.integers(0, vocab, size=(batch, seq)), g.integers(0, classes, size=batch)


# options and optimizer ------------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [dict(lr=-1.0), dict(batch_size=0), dict(max_epochs=0),
                                    dict(patience=5, max_epochs=3)])
def test_invalid_options(kwargs):
    with pytest.raises(ConfigError):
        TrainOptions(**kwargs)


def test_adam_first_step_moves_by_lr_times_sign():
    p = T.Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    opt = Adam([p], lr=0.01)
    opt.step([np.array([0.3, -4.0, 0.0])])
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p.data, [0.99, -1.99, 0.5], atol=1e-9)


def test_adam_two_steps_match_hand_computation():
    p = T.Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    g1, g2 = 1.0, 3.0
    opt.step([np.array([g1])])
    opt.step([np.array([g2])])
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2
    step2 = 0.1 * (m / (1 - 0.9 ** 2)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(p.data, [-0.1 / (1 + 1e-8) - step2], rtol=1e-12)


def test_cross_entropy_uniform_logits():
    loss = cross_entropy(T.Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
    assert abs(loss.item() - np.log(4)) < 1e-15


# evaluation -------------------------------------------------------------------------------

def test_evaluate_single_bin_equals_overall():
    _, ev = gen_task(TASK)
    res = evaluate(tiny_model(), ev)
    assert len(res.bins) == 1 and res.bins[0].accuracy == res.accuracy and res.bins[0].n == res.n == 32


def test_bins_partition_mixed_lengths():
    spec = TaskSpec("needle", seq_len=16, min_len=4, n_train=1, n_eval=200, vocab=8, n_classes=4, seed=2)
    _, ev = gen_task(spec)
    model = tiny_model()
    res = evaluate(model, ev, bins=4)
    assert sum(b.n for b in res.bins) == 200
    assert res.bins[0].lo == ev.lengths.min() and res.bins[-1].hi == ev.lengths.max()
    weighted = sum(b.n * b.accuracy for b in res.bins if b.n) / 200
    assert abs(weighted - res.accuracy) < 1e-12
    explicit = evaluate(model, ev, bins=[(4, 9), (10, 16), (17, 20)])
    assert explicit.bins[-1].n == 0 and explicit.bins[-1].accuracy is None


def test_evaluate_empty_dataset():
    empty = Dataset(np.zeros((0, 4), dtype=int), np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    with pytest.raises(InputError):
        evaluate(tiny_model(), empty)


def test_untrained_model_is_at_chance_on_balanced_binary_task():
    cfg = EncoderConfig(vocab=2)
    spec = TaskSpec("parity", seq_len=64, vocab=2, parity_span=2, n_train=1, n_eval=1000, seed=2)
    _, ev = gen_task(spec)
    model = attach_adapters(build_encoder(cfg, 0), plan_by_name("alternating", 4), AdapterConfig(), 1)
    assert abs(evaluate(model, ev).accuracy - 0.5) <= 0.05


# training ---------------------------------------------------------------------------------

def test_zero_learning_rate_keeps_metrics_constant():
    model = tiny_model()
    before = model.adapter_state()
    m = train(model, TASK, TrainOptions(lr=0.0, max_epochs=3, patience=3, batch_size=16))
    keys = [(e.train_loss, e.train_acc, e.eval_loss, e.eval_acc) for e in m.epochs]
    assert len(set(keys)) == 1 and len(keys) == 3
    assert all(np.array_equal(before[k], v) for k, v in model.adapter_state().items())


def test_identical_seeds_give_identical_curves():
    def curve():
        m = train(tiny_model(), TASK, TrainOptions(lr=1e-2, max_epochs=3, patience=3, batch_size=16, seed=4))
        return [e.to_dict() for e in m.epochs]

    assert curve() == curve()


def test_training_touches_only_the_trainable_set():
    model = tiny_model()
    base_hash = model.base_hash()
    before = model.adapter_state()
    metrics = train(model, TASK, TrainOptions(lr=1e-2, max_epochs=2, patience=2, batch_size=16))
    assert model.base_hash() == base_hash
    assert any(not np.array_equal(before[k], v) for k, v in model.adapter_state().items())
    assert metrics.adapter_params == model.adapter_param_count()
    assert metrics.trainable_params == metrics.adapter_params + metrics.head_params


def test_early_stopping_reports_best_epoch():
    model = tiny_model()
    m = train(model, TASK, TrainOptions(lr=0.0, max_epochs=10, patience=2, batch_size=16))
    assert m.stopped_early and len(m.epochs) == 3 and m.best_epoch == 1
    m2 = train(tiny_model(), TASK, TrainOptions(lr=5e-2, max_epochs=6, patience=2, batch_size=16))
    assert m2.best_eval_acc == max(e.eval_acc for e in m2.epochs)
    assert m2.epochs[m2.best_epoch - 1].eval_acc == m2.best_eval_acc


def test_best_parameters_are_restored():
    model = tiny_model()
    m = train(model, TASK, TrainOptions(lr=5e-2, max_epochs=6, patience=6, batch_size=16))
    _, ev = gen_task(TASK)
    assert evaluate(model, ev).accuracy == m.best_eval_acc


def test_divergence_raises_with_epoch_index():
    model = tiny_model()
    model.head["W"].data[0, 0] = np.nan
    with pytest.raises(TrainingError) as exc:
        train(model, TASK, TrainOptions(lr=1e-3, max_epochs=2, patience=1))
    assert exc.value.epoch == 1


def test_empty_split_rejected():
    train_set, _ = gen_task(TASK)
    with pytest.raises(InputError):
        train(tiny_model(), (train_set, train_set.subset([])), TrainOptions(max_epochs=1, patience=1))


def test_epoch_record_serialization_excludes_wallclock():
    m = train(tiny_model(), TASK, TrainOptions(lr=0.0, max_epochs=1, patience=1))
    rec = m.final
    assert "seconds" not in rec.to_dict() and rec.to_dict(timing=True)["seconds"] > 0


# gradient check --------------------------------------------------------------------------

def test_rel_error_floor_and_zero_case():
    np.testing.assert_array_equal(rel_error(np.array([0.0, 1.0]), np.array([0.0, 1.0])), [0.0, 0.0])
    assert rel_error(np.array([1e-12]), np.array([0.0]))[0] == pytest.approx(1e-4)
    assert rel_error(np.array([2.0]), np.array([1.0]))[0] == 0.5


def test_gradcheck_fresh_adapters():
    model = tiny_model()
    res = gradcheck(model, sample(), n_coords=32, seed=1)
    assert res.passed and res.max_rel_err < 1e-6
    for name, err in res.per_param.items():
        if name.endswith("W_b"):
            assert err < 1e-6


def test_gradcheck_nonzero_adapters_all_patterns():
    for pattern in ("alternating", "dense-lora", "dense-ssmlora"):
        model = tiny_model(pattern)
        randomize_adapters(model, seed=3, scale=0.2)
        res = gradcheck(model, sample(1), n_coords=64, seed=2, include_head=True)
        assert res.max_rel_err < 1e-5, (pattern, res.worst)
        assert res.n_coords == sum(min(64, p.size) for _, p in model.trainable())


def test_gradcheck_fails_at_impossible_tolerance():
    model = tiny_model()
    randomize_adapters(model, seed=3)
    res = gradcheck(model, sample(), tolerance=1e-15, n_coords=16)
    assert not res.passed and res.worst is not None


def test_gradcheck_after_zero_lr_training_equals_fresh():
    fresh = gradcheck(tiny_model(), sample(), n_coords=16, seed=1)
    trained_model = tiny_model()
    train(trained_model, TASK, TrainOptions(lr=0.0, max_epochs=1, patience=1))
    trained = gradcheck(trained_model, sample(), n_coords=16, seed=1)
    assert trained.per_param == fresh.per_param and trained.max_rel_err == fresh.max_rel_err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradcheck_non_finite_loss():
    model = tiny_model()
    model.head["b"].data[0] = np.inf
    with pytest.raises(NumericError):
        gradcheck(model, sample(), n_coords=4)


def test_gradcheck_is_dropout_free():
    model = tiny_model()
    randomize_adapters(model, seed=0)
    tk, lb = sample()
    a = cross_entropy(encoder_forward(model, tk), lb).item()
    b = cross_entropy(encoder_forward(model, tk), lb).item()
    assert a == b
    r1 = gradcheck(model, (tk, lb), n_coords=8, seed=0)
    r2 = gradcheck(model, (tk, lb), n_coords=8, seed=0)
    assert r1.per_param == r2.per_param
