"""Chains of time modules and the per-pass state threaded through them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapter import AdapterConfig, TimeModule, module_step
from .errors import ContractError, DimensionError, SequencingError
from .tensor import Tensor

KINDS = ("query", "key", "value", "qkv", "ffn")


@dataclass
class Chain:
    kind: str
    modules: list[TimeModule]
    cfg: AdapterConfig

    def __post_init__(self):
        for i, m in enumerate(self.modules):
            if m.t != i:
                raise ContractError(f"chain {self.kind!r}: module {i} carries position {m.t}")
            if m.r != self.cfg.r:
                raise ContractError(f"chain {self.kind!r}: module {i} has rank {m.r}, chain rank {self.cfg.r}")

    def __len__(self) -> int:
        return len(self.modules)

    @property
    def r(self) -> int:
        return self.cfg.r


@dataclass
class PassState:
    batch: int
    seq: int
    h: dict[str, Tensor]
    cursor: dict[str, int]
    rng: np.random.Generator | None = None
    # (kind, t) -> h_in to use instead of the live state (truncated-function evaluation)
    pinned: dict[tuple[str, int], np.ndarray] | None = None
    # (kind, t) -> h_in actually consumed at that step
    trace: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)


def begin_pass(chains, batch: int, seq: int, rng: np.random.Generator | None = None,
               pinned: dict[tuple[str, int], np.ndarray] | None = None) -> PassState:
    """Zero state for every chain, cursors at position 0."""
    if batch < 1 or seq < 1:
        raise ContractError(f"batch and seq must be >= 1, got {batch}x{seq}")
    chains = chains.values() if isinstance(chains, dict) else chains
    h, cursor = {}, {}
    for chain in chains:
        h[chain.kind] = Tensor(np.zeros((batch, seq, chain.r)))
        cursor[chain.kind] = 0
    return PassState(batch=batch, seq=seq, h=h, cursor=cursor, rng=rng, pinned=pinned)


def chain_step(state: PassState, chain: Chain, x: Tensor, t: int | None = None) -> Tensor:
    """Run the chain's next module on ``x`` and return its delta.

    ``t`` names the position the caller believes it is stepping; it must equal
    the chain's cursor.
    """
    if chain.kind not in state.cursor:
        raise ContractError(f"chain {chain.kind!r} was not registered at begin_pass")
    expected = state.cursor[chain.kind]
    actual = expected if t is None else t
    if actual != expected or expected >= len(chain):
        raise SequencingError(chain.kind, expected, actual)
    if tuple(x.shape[:-1]) != (state.batch, state.seq):
        raise DimensionError(
            f"chain {chain.kind!r}: input shape {tuple(x.shape)} drifted from pass shape "
            f"({state.batch}, {state.seq}, ...)"
        )
    key = (chain.kind, expected)
    h_in = state.h[chain.kind]
    if state.pinned is not None and key in state.pinned:
        h_in = Tensor(state.pinned[key])
    state.trace[key] = h_in.data
    out = module_step(x, h_in, chain.modules[expected], chain.cfg, state.rng)
    state.h[chain.kind] = out.h_out
    state.cursor[chain.kind] = expected + 1
    return out.delta


def run_chain_oracle(chain: Chain, xs) -> list[tuple[np.ndarray, np.ndarray]]:
    """Straight-line evaluation of a chain with explicit loops, no autodiff.

    Returns ``(delta, h_next)`` per position. Dropout is not applied.
    """
    if len(xs) != len(chain):
        raise ContractError(f"need {len(chain)} inputs, got {len(xs)}")
    cfg = chain.cfg
    r = chain.r
    scale = cfg.alpha / r
    h = None
    results = []
    for m, x in zip(chain.modules, xs):
        x = np.asarray(x, dtype=np.float64)
        batch, seq, d = x.shape
        Wa, Wb, Wc, Wd = (m.W_a.data, m.W_b.data, m.W_c.data, m.W_d.data)
        d_out = Wb.shape[1]
        if h is None:
            h = np.zeros((batch, seq, r))
        h_new = np.zeros((batch, seq, r))
        delta = np.zeros((batch, seq, d_out))
        for b in range(batch):
            for s in range(seq):
                xn = [0.0] * r
                for j in range(r):
                    acc = 0.0
                    for i in range(d):
                        acc += x[b, s, i] * Wa[i, j]
                    xn[j] = acc
                hn = [0.0] * r
                for j in range(r):
                    acc = h[b, s, j]
                    for i in range(r):
                        acc += h[b, s, i] * Wc[i, j] + xn[i] * Wd[i, j]
                    hn[j] = acc
                lo, hi = min(hn), max(hn)
                z = [xn[j] + (hn[j] - lo) / (hi - lo + cfg.epsilon) for j in range(r)]
                for k in range(d_out):
                    acc = 0.0
                    for j in range(r):
                        acc += z[j] * Wb[j, k]
                    delta[b, s, k] = scale * acc
                h_new[b, s, :] = hn
        results.append((delta, h_new.copy()))
        h = h_new
    return results
