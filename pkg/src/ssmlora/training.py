"""Optimizer, training loop, evaluation and the finite-difference gradient check."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .encoder import FrozenEncoder, encoder_forward
from .errors import ConfigError, InputError, NumericError, TrainingError
from .tasks import Dataset, TaskSpec, gen_task
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative", "lr")
        for key in ("batch_size", "max_epochs", "patience", "eval_batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key)
        if self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs", "patience")


class Adam:
    """Adam with fixed betas; updates parameter arrays in place."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    logp = T.log_softmax(logits, axis=-1)
    return -logp[np.arange(len(labels)), labels].mean()


# evaluation ----------------------------------------------------------------------

@dataclass
class BinResult:
    lo: int
    hi: int
    n: int
    accuracy: float | None


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    n: int
    bins: list[BinResult] = field(default_factory=list)


def _bin_edges(lengths: np.ndarray, bins) -> list[tuple[int, int]]:
    lo, hi = int(lengths.min()), int(lengths.max())
    if bins is None:
        return [(lo, hi)]
    if isinstance(bins, int):
        if bins < 1:
            raise InputError("need at least one bin")
        cuts = np.linspace(lo, hi + 1, bins + 1)
        edges = [(int(np.ceil(a)), int(np.ceil(b)) - 1) for a, b in zip(cuts[:-1], cuts[1:])]
        return [(a, b) for a, b in edges if b >= a]
    return [(int(a), int(b)) for a, b in bins]


def evaluate(model: FrozenEncoder, data: Dataset, bins=None, batch_size: int = 256) -> EvalResult:
    """Overall accuracy and loss, plus accuracy per sequence-length bin.

    ``bins`` is ``None`` (one bin over the observed length range), an int
    (that many equal-width bins) or explicit inclusive ``(lo, hi)`` pairs.
    """
    if len(data) == 0:
        raise InputError("cannot evaluate an empty dataset")
    correct = np.zeros(len(data), dtype=bool)
    loss_sum = 0.0
    for tokens, labels, idx in data.batches(batch_size):
        logits = encoder_forward(model, tokens)
        loss_sum += cross_entropy(logits, labels).item() * len(idx)
        correct[idx] = logits.data.argmax(axis=-1) == labels
    results = []
    for lo, hi in _bin_edges(data.lengths, bins):
        mask = (data.lengths >= lo) & (data.lengths <= hi)
        n = int(mask.sum())
        results.append(BinResult(lo, hi, n, float(correct[mask].mean()) if n else None))
    return EvalResult(float(correct.mean()), loss_sum / len(data), len(data), results)


# training ------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    eval_loss: float
    eval_acc: float
    seconds: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("seconds")
        return d


@dataclass
class Metrics:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_eval_acc: float = 0.0
    best_epoch: int = 0
    stopped_early: bool = False
    trainable_params: int = 0
    adapter_params: int = 0
    head_params: int = 0

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]


def _snapshot(params: list[Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def train(model: FrozenEncoder, task: TaskSpec | tuple[Dataset, Dataset], opts: TrainOptions,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> Metrics:
    """Adam on the model's trainable set with eval-accuracy early stopping.

    Every epoch ends with a dropout-free pass over both splits; those numbers
    are what the epoch record reports. The best-scoring parameters are
    restored before returning.
    """
    train_set, eval_set = gen_task(task) if isinstance(task, TaskSpec) else task
    if len(train_set) == 0 or len(eval_set) == 0:
        raise InputError("training needs non-empty train and eval splits")
    named = model.trainable()
    params = [p for _, p in named]
    opt = Adam(params, opts.lr)
    rng = np.random.default_rng(opts.seed)
    metrics = Metrics(
        trainable_params=sum(p.size for p in params),
        adapter_params=model.adapter_param_count(),
        head_params=model.head_param_count(),
    )
    best = _snapshot(params)
    best_acc, wait = -1.0, 0
    for epoch in range(1, opts.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        batches = list(train_set.batches(opts.batch_size, order))
        for k in rng.permutation(len(batches)):
            tokens, labels, _ = batches[k]
            loss = cross_entropy(encoder_forward(model, tokens, training=True, rng=rng), labels)
            if not np.isfinite(loss.item()):
                raise TrainingError("non-finite training loss", epoch)
            grads = T.backward(loss, wrt=params)
            if opts.lr > 0:
                opt.step(grads)
        tr = evaluate(model, train_set, batch_size=opts.eval_batch_size)
        ev = evaluate(model, eval_set, batch_size=opts.eval_batch_size)
        if not (np.isfinite(tr.loss) and np.isfinite(ev.loss)):
            raise TrainingError("non-finite evaluation loss", epoch)
        rec = EpochRecord(epoch, tr.loss, tr.accuracy, ev.loss, ev.accuracy, time.perf_counter() - t0)
        metrics.epochs.append(rec)
        log.debug("epoch %d: train %.4f/%.3f eval %.4f/%.3f", epoch, tr.loss, tr.accuracy, ev.loss, ev.accuracy)
        if on_epoch is not None:
            on_epoch(rec)
        if ev.accuracy > best_acc:
            best_acc, wait = ev.accuracy, 0
            metrics.best_epoch = epoch
            best = _snapshot(params)
        else:
            wait += 1
            if wait >= opts.patience:
                metrics.stopped_early = epoch < opts.max_epochs
                break
    for p, b in zip(params, best):
        p.data[...] = b
    metrics.best_eval_acc = best_acc
    return metrics


# gradient check ------------------------------------------------------------------

@dataclass
class Worst:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradcheckResult:
    max_rel_err: float
    tolerance: float
    n_coords: int
    worst: Worst | None
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; zero-vs-zero scores 0."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def pinned_loss_fn(model: FrozenEncoder, tokens, labels):
    """Loss as a function of the trainable parameters with every chain input
    held at its value from an unperturbed pass.

    This is the truncated function whose exact gradient autodiff computes,
    since each chain hands its state on with the gradient stopped.
    """
    ref = encoder_forward(model, tokens, return_state=True)
    pinned = dict(ref.state.trace)

    def loss() -> Tensor:
        return cross_entropy(encoder_forward(model, tokens, pinned=pinned), labels)

    return loss, pinned


def gradcheck(model: FrozenEncoder, sample: tuple[np.ndarray, np.ndarray], delta: float = 1e-5,
              tolerance: float = 1e-5, n_coords: int = 64, seed: int = 0,
              include_head: bool = False, floor: float = 1e-8) -> GradcheckResult:
    """Compare backward gradients with central differences on sampled coordinates.

    Up to ``n_coords`` coordinates per adapter matrix are drawn uniformly
    without replacement. Runs dropout-free.
    """
    tokens, labels = sample
    loss_fn, _ = pinned_loss_fn(model, tokens, labels)
    loss = loss_fn()
    if not np.isfinite(loss.item()):
        raise NumericError("non-finite loss at the gradcheck point")
    named = [(n, p) for n, p in model.trainable() if include_head or not n.startswith("head.")]
    grads = T.backward(loss, wrt=[p for _, p in named])
    rng = np.random.default_rng(seed)
    result = GradcheckResult(0.0, tolerance, 0, None)
    for (name, p), g in zip(named, grads):
        k = min(n_coords, p.size)
        idx = np.sort(rng.choice(p.size, size=k, replace=False))
        numeric = T.finite_diff(lambda _: loss_fn().item(), p, delta, idx)
        analytic = g.reshape(-1)[idx]
        err = rel_error(analytic, numeric, floor)
        j = int(np.argmax(err))
        result.per_param[name] = float(err[j])
        result.n_coords += k
        if result.worst is None or err[j] > result.worst.rel_err:
            result.worst = Worst(name, int(idx[j]), float(analytic[j]), float(numeric[j]), float(err[j]))
    result.max_rel_err = result.worst.rel_err if result.worst else 0.0
    return result


def randomize_adapters(model: FrozenEncoder, seed: int = 0, scale: float = 0.1) -> None:
    """Overwrite every adapter matrix with seeded Gaussian values (testing aid)."""
    rng = np.random.default_rng(seed)
    for name, p in model.trainable():
        if not name.startswith("head."):
            p.data[...] = rng.normal(0.0, scale, size=p.shape)
