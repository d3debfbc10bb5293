"""Desk-scale cost comparison of adapter plans: time and memory per sequence length."""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .adapter import AdapterConfig
from .encoder import FrozenEncoder, attach_adapters, encoder_forward
from .planner import InsertionPlan
from .training import cross_entropy

BYTES_PER_FLOAT = 8


@dataclass
class BenchRow:
    pattern: str
    seq_len: int
    batch: int
    adapter_params: int
    param_bytes: int
    graph_nodes: int
    activation_bytes: int  # sum of all differentiable intermediate buffers, one pass
    forward_s: float = 0.0
    backward_s: float = 0.0
    traced_peak_bytes: int = 0

    def deterministic(self) -> dict:
        return {
            "pattern": self.pattern,
            "seq_len": self.seq_len,
            "batch": self.batch,
            "adapter_params": self.adapter_params,
            "param_bytes": self.param_bytes,
            "graph_nodes": self.graph_nodes,
            "activation_bytes": self.activation_bytes,
        }

    def timing(self) -> dict:
        return {
            "pattern": self.pattern,
            "seq_len": self.seq_len,
            "batch": self.batch,
            "forward_s": self.forward_s,
            "backward_s": self.backward_s,
            "traced_peak_bytes": self.traced_peak_bytes,
        }


def bench_plan(base: FrozenEncoder, plan: InsertionPlan, cfg: AdapterConfig, seq_len: int,
               batch: int = 8, repeats: int = 3, seed: int = 0) -> BenchRow:
    model = attach_adapters(base, plan, cfg, seed)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, base.cfg.vocab, size=(batch, seq_len))
    labels = rng.integers(0, base.cfg.n_classes, size=batch)
    params = [p for _, p in model.trainable()]

    loss = cross_entropy(encoder_forward(model, tokens), labels)
    tape = T.GradTape(loss)
    row = BenchRow(
        pattern=plan.name,
        seq_len=seq_len,
        batch=batch,
        adapter_params=model.adapter_param_count(),
        param_bytes=model.adapter_param_count() * BYTES_PER_FLOAT,
        graph_nodes=len(tape),
        activation_bytes=sum(n.size for n in tape.nodes) * BYTES_PER_FLOAT,
    )
    fwd, bwd = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        loss = cross_entropy(encoder_forward(model, tokens), labels)
        t1 = time.perf_counter()
        T.backward(loss, wrt=params)
        t2 = time.perf_counter()
        fwd.append(t1 - t0)
        bwd.append(t2 - t1)
    row.forward_s = min(fwd)
    row.backward_s = min(bwd)
    tracemalloc.start()
    try:
        T.backward(cross_entropy(encoder_forward(model, tokens), labels), wrt=params)
        row.traced_peak_bytes = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    return row
