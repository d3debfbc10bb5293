import numpy as np
import pytest

from ssmlora.errors import ConfigError, InputError
from ssmlora.tasks import PAD, TaskSpec, gen_task, label_of, needle_label, parity_label


def unpadded(data, i):
    return data.tokens[i, :data.lengths[i]]


def test_parity_of_zeros_is_zero():
    assert parity_label(np.zeros(64, dtype=int)) == 0
    assert parity_label(np.array([1, 0, 1, 1])) == 1
    assert parity_label(np.array([1, 1, 1, 1]), span=3) == 1


def test_needle_marker_at_position_zero():
    vocab = 8
    seq = np.array([vocab - 1, 3, 0, 2, 5])
    assert needle_label(seq, vocab) == 3
    with pytest.raises(InputError):
        needle_label(np.array([0, 1, vocab - 1]), vocab)


@pytest.mark.parametrize("spec", [
    TaskSpec("parity", seq_len=12, n_train=200, n_eval=50, vocab=2, parity_span=3, seed=4),
    TaskSpec("parity", seq_len=12, n_train=200, n_eval=50, vocab=16, seed=4),
    TaskSpec("copy-classify", seq_len=10, n_train=200, n_eval=50, vocab=8, n_classes=4, seed=4),
    TaskSpec("needle", seq_len=10, n_train=200, n_eval=50, vocab=8, n_classes=4, seed=4, min_len=3),
])
def test_labels_are_a_function_of_tokens(spec):
    for data in gen_task(spec):
        for i in range(len(data)):
            assert label_of(spec, unpadded(data, i)) == data.labels[i]
            assert np.all(data.tokens[i, data.lengths[i]:] == PAD)


def test_copy_classify_repeats_only_the_class_token():
    spec = TaskSpec("copy-classify", seq_len=16, n_train=300, n_eval=10, vocab=8, n_classes=4, seed=2)
    train, _ = gen_task(spec)
    for row, c in zip(train.tokens, train.labels):
        assert row[0] == c and np.sum(row == c) == 2


def test_needle_has_one_marker():
    spec = TaskSpec("needle", seq_len=16, n_train=300, n_eval=10, vocab=8, n_classes=4, seed=2)
    train, _ = gen_task(spec)
    assert np.all(np.sum(train.tokens == 7, axis=1) == 1)
    pos = np.argmax(train.tokens == 7, axis=1)
    assert pos.max() < 15 and pos.min() == 0  # uniform placement reaches the first slot


@pytest.mark.parametrize("kind,kw", [("parity", dict(vocab=2, parity_span=2)), ("parity", {}),
                                     ("copy-classify", dict(vocab=8)), ("needle", dict(vocab=8))])
def test_class_balance(kind, kw):
    spec = TaskSpec(kind, seq_len=16, n_train=10_000, n_eval=1, seed=1, **kw)
    train, _ = gen_task(spec)
    freq = np.bincount(train.labels, minlength=spec.classes) / len(train)
    assert np.all(np.abs(freq - 1 / spec.classes) < 0.05)


def test_generation_is_deterministic_and_seeded():
    spec = TaskSpec("needle", seq_len=8, n_train=50, n_eval=20, vocab=6, n_classes=3, seed=9)
    a, b = gen_task(spec), gen_task(spec)
    c = gen_task(TaskSpec("needle", seq_len=8, n_train=50, n_eval=20, vocab=6, n_classes=3, seed=10))
    assert a[0].tokens.tobytes() == b[0].tokens.tobytes() and a[1].labels.tobytes() == b[1].labels.tobytes()
    assert a[0].tokens.tobytes() != c[0].tokens.tobytes()
    assert a[0].tokens.tobytes() != a[1].tokens[:20].tobytes()


@pytest.mark.parametrize("kwargs", [
    dict(kind="copy-classify", vocab=4, n_classes=4),
    dict(kind="needle", vocab=3, n_classes=3),
    dict(kind="parity", vocab=1),
    dict(kind="sorting"),
    dict(kind="parity", parity_span=100, seq_len=10),
    dict(kind="parity", min_len=1),
    dict(kind="parity", n_train=0),
])
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigError):
        TaskSpec(**kwargs)


def test_mixed_lengths_and_batches():
    spec = TaskSpec("needle", seq_len=20, min_len=5, n_train=300, n_eval=10, vocab=8, seed=3)
    train, _ = gen_task(spec)
    assert train.lengths.min() >= 5 and train.lengths.max() <= 20 and len(np.unique(train.lengths)) > 5
    seen = []
    for tok, lab, idx in train.batches(16):
        assert tok.shape[1] == train.lengths[idx[0]] and np.all(train.lengths[idx] == tok.shape[1])
        assert np.all(tok >= 0)
        seen.extend(idx.tolist())
    assert sorted(seen) == list(range(len(train)))
    with pytest.raises(InputError):
        next(train.batches(0))
