"""Low-rank adapter units: the state-carrying time module and a plain LoRA pair.

A time module projects its input down to rank ``r``, advances a hidden state
with one explicit Taylor step, min-max normalizes that state per token, and
projects ``x_new + h_norm`` back up. The result is a delta added to the frozen
projection of the layer it is attached to::

    x_new  = dropout(x) @ W_a
    h_next = h @ W_c + x_new @ W_d + h
    h_norm = (h_next - min(h_next)) / (max(h_next) - min(h_next) + eps)
    delta  = (alpha / r) * (x_new + h_norm) @ W_b

The state handed to the next module on the chain is ``h_next`` with the
gradient stopped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class AdapterConfig:
    r: int = 8
    alpha: float = 16.0
    epsilon: float = 1e-5
    init_sigma: float | None = None  # None -> 1/sqrt(d)
    dropout: float = 0.1

    def __post_init__(self):
        if not isinstance(self.r, (int, np.integer)) or self.r < 1:
            raise ConfigError(f"rank must be a positive integer, got {self.r!r}", "r")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}", "epsilon")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}", "dropout")
        if self.init_sigma is not None and self.init_sigma < 0:
            raise ConfigError("init_sigma must be non-negative", "init_sigma")

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def sigma_for(self, d: int) -> float:
        return 1.0 / math.sqrt(d) if self.init_sigma is None else float(self.init_sigma)

    def check_width(self, d: int) -> None:
        if self.r > d:
            raise ConfigError(f"rank {self.r} exceeds width {d}", "r")


@dataclass
class TimeModule:
    W_a: Tensor
    W_b: Tensor
    W_c: Tensor
    W_d: Tensor
    t: int = 0
    kind: str = ""

    @property
    def d(self) -> int:
        return self.W_a.shape[0]

    @property
    def d_out(self) -> int:
        return self.W_b.shape[1]

    @property
    def r(self) -> int:
        return self.W_a.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"W_a": self.W_a, "W_b": self.W_b, "W_c": self.W_c, "W_d": self.W_d}

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters().values())


@dataclass
class LoraModule:
    """Baseline adapter: ``delta = (alpha / r) * dropout(x) @ W_a @ W_b``."""

    W_a: Tensor
    W_b: Tensor
    kind: str = ""

    @property
    def r(self) -> int:
        return self.W_a.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"W_a": self.W_a, "W_b": self.W_b}

    def num_params(self) -> int:
        return self.W_a.size + self.W_b.size


def _param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def init_time_module(d: int, cfg: AdapterConfig, t: int = 0, seed=0,
                     d_out: int | None = None, kind: str = "") -> TimeModule:
    """Gaussian ``W_a``; ``W_b``, ``W_c`` and ``W_d`` exactly zero."""
    cfg.check_width(d)
    d_out = d if d_out is None else d_out
    rng = np.random.default_rng(seed)
    r = cfg.r
    return TimeModule(
        W_a=_param(rng.normal(0.0, 1.0, size=(d, r)) * cfg.sigma_for(d), "W_a"),
        W_b=_param(np.zeros((r, d_out)), "W_b"),
        W_c=_param(np.zeros((r, r)), "W_c"),
        W_d=_param(np.zeros((r, r)), "W_d"),
        t=t,
        kind=kind,
    )


def init_lora_module(d: int, cfg: AdapterConfig, seed=0, d_out: int | None = None,
                     kind: str = "") -> LoraModule:
    cfg.check_width(d)
    d_out = d if d_out is None else d_out
    rng = np.random.default_rng(seed)
    return LoraModule(
        W_a=_param(rng.normal(0.0, 1.0, size=(d, cfg.r)) * cfg.sigma_for(d), "W_a"),
        W_b=_param(np.zeros((cfg.r, d_out)), "W_b"),
        kind=kind,
    )


def _dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0 or rng is None:
        return x
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))


def project_down(x: Tensor, m: TimeModule | LoraModule, dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
    """``x_new = x @ W_a`` per position; dropout hits ``x`` only when ``rng`` is given."""
    x = T.as_tensor(x)
    if x.shape[-1] != m.W_a.shape[0]:
        raise DimensionError(
            f"input width {x.shape[-1]} does not match adapter width {m.W_a.shape[0]}"
        )
    return _dropout(x, dropout, rng) @ m.W_a


def state_update(h: Tensor, x_new: Tensor, m: TimeModule) -> Tensor:
    """One Taylor step of the state: ``h @ W_c + x_new @ W_d + h``."""
    h, x_new = T.as_tensor(h), T.as_tensor(x_new)
    if h.shape != x_new.shape:
        raise DimensionError(f"state shape {h.shape} does not match projected input {x_new.shape}")
    return h @ m.W_c + x_new @ m.W_d + h


def normalize_state(h_next: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Min-max rescale over the rank axis, independently for every token."""
    h_next = T.as_tensor(h_next)
    if not np.all(np.isfinite(h_next.data)):
        raise NumericError("non-finite value in state before normalization")
    lo = h_next.min(axis=-1, keepdims=True)
    hi = h_next.max(axis=-1, keepdims=True)
    return (h_next - lo) / (hi - lo + epsilon)


@dataclass
class ModuleOutput:
    delta: Tensor
    h_out: Tensor
    h_next: Tensor = field(repr=False)
    x_new: Tensor = field(repr=False)


def module_forward(x: Tensor, h_in: Tensor, m: TimeModule, cfg: AdapterConfig,
                   rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Return ``(delta, h_out)``; ``h_out`` is detached from the graph.

    Pass ``rng`` to enable adapter-path dropout (training mode).
    """
    out = module_step(x, h_in, m, cfg, rng)
    return out.delta, out.h_out


def module_step(x: Tensor, h_in: Tensor, m: TimeModule, cfg: AdapterConfig,
                rng: np.random.Generator | None = None) -> ModuleOutput:
    x_new = project_down(x, m, cfg.dropout, rng)
    h_next = state_update(h_in, x_new, m)
    h_norm = normalize_state(h_next, cfg.epsilon)
    delta = ((x_new + h_norm) @ m.W_b) * cfg.scale
    return ModuleOutput(delta=delta, h_out=T.stop_gradient(h_next), h_next=h_next, x_new=x_new)


def lora_forward(x: Tensor, m: LoraModule, cfg: AdapterConfig,
                 rng: np.random.Generator | None = None) -> Tensor:
    return (project_down(x, m, cfg.dropout, rng) @ m.W_b) * cfg.scale
