"""A small frozen transformer encoder that hosts adapters.

Base weights are random (seeded) and never trainable. Adapters attach to the
query/key/value projections (or the fused ``qkv`` projection when
``fused_qkv`` is set) and to the first feed-forward projection. A trainable
pooling + affine classification head sits on top.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .adapter import AdapterConfig, LoraModule, TimeModule, init_lora_module, init_time_module, lora_forward
from .errors import ConfigError, InputError, PlanError
from .planner import FFN, KEY, QKV, QUERY, VALUE, InsertionPlan, ModelDims
from .tensor import Tensor
from .time_axis import Chain, PassState, begin_pass, chain_step

KIND_CODES = {QUERY: 0, KEY: 1, VALUE: 2, QKV: 3, FFN: 4}
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    L: int = 4
    d: int = 64
    heads: int = 4
    d_ff: int = 128
    vocab: int = 16
    max_seq: int = 128
    n_classes: int = 2
    fused_qkv: bool = False
    pooling: str = "first"

    def __post_init__(self):
        for key in ("L", "d", "heads", "d_ff", "vocab", "max_seq", "n_classes"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}", key)
        if self.d % self.heads:
            raise ConfigError(f"width {self.d} is not divisible by {self.heads} heads", "heads")
        if self.pooling not in ("mean", "first"):
            raise ConfigError(f"unknown pooling {self.pooling!r}", "pooling")

    def dims(self) -> ModelDims:
        return ModelDims(
            L=self.L, d=self.d, fused_qkv_out=3 * self.d if self.fused_qkv else None, d_ff=self.d_ff
        )

    def attachable_kinds(self) -> tuple[str, ...]:
        return (QKV, FFN) if self.fused_qkv else (QUERY, KEY, VALUE, FFN)


Adapter = TimeModule | LoraModule


@dataclass
class FrozenEncoder:
    cfg: EncoderConfig
    base: dict[str, Tensor]
    head: dict[str, Tensor]
    seed: int = 0
    adapters: dict[tuple[int, str], Adapter] = field(default_factory=dict)
    chains: dict[str, Chain] = field(default_factory=dict)
    adapter_cfg: AdapterConfig | None = None
    plan: InsertionPlan = field(default_factory=InsertionPlan)
    adapter_seed: int | None = None

    def trainable(self) -> list[tuple[str, Tensor]]:
        """Named trainable tensors in a fixed order: adapters by slot, then head."""
        out = []
        for (layer, kind) in sorted(self.adapters, key=lambda s: (s[0], KIND_CODES[s[1]])):
            for pname, p in self.adapters[(layer, kind)].parameters().items():
                out.append((f"layer{layer}.{kind}.{pname}", p))
        for name, p in self.head.items():
            if p.requires_grad:
                out.append((f"head.{name}", p))
        return out

    def adapter_param_count(self) -> int:
        return sum(a.num_params() for a in self.adapters.values())

    def head_param_count(self) -> int:
        return sum(p.size for p in self.head.values() if p.requires_grad)

    def base_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.base):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.base[name].data, dtype="<f8").tobytes())
        return h.hexdigest()

    def adapter_state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.trainable()}

    def load_adapter_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.trainable())
        missing = set(params) - set(state)
        if missing:
            raise InputError(f"checkpoint lacks tensors: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise InputError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data[...] = value

    def clone(self) -> "FrozenEncoder":
        """Independent adapters and head; the frozen base is shared read-only."""
        twin = copy.copy(self)
        twin.head = {k: _copy_param(v) for k, v in self.head.items()}
        twin.adapters = {
            slot: dataclasses.replace(a, **{n: _copy_param(p) for n, p in a.parameters().items()})
            for slot, a in self.adapters.items()
        }
        layers = self.plan.chains()
        twin.chains = {
            kind: Chain(kind, [twin.adapters[(l, kind)] for l in layers[kind]], chain.cfg)
            for kind, chain in self.chains.items()
        }
        return twin


def _copy_param(p: Tensor) -> Tensor:
    return Tensor(p.data.copy(), requires_grad=p.requires_grad, name=p.name)


def build_encoder(cfg: EncoderConfig, seed: int = 0) -> FrozenEncoder:
    """Seeded random base weights, all frozen, plus an untrained head."""
    rng = np.random.default_rng(seed)
    d, f = cfg.d, cfg.d_ff

    def w(*shape, std):
        return Tensor(rng.normal(0.0, std, size=shape))

    base: dict[str, Tensor] = {
        "tok_emb": w(cfg.vocab, d, std=1.0),
        "pos_emb": w(cfg.max_seq, d, std=1.0),
        "emb_ln.g": Tensor(np.ones(d)),
        "emb_ln.b": Tensor(np.zeros(d)),
    }
    s_d, s_f = 1.0 / math.sqrt(d), 1.0 / math.sqrt(f)
    for l in range(cfg.L):
        p = f"layer{l}."
        if cfg.fused_qkv:
            base[p + "W_qkv"] = w(d, 3 * d, std=s_d)
            base[p + "b_qkv"] = w(3 * d, std=0.02)
        else:
            for kind in (QUERY, KEY, VALUE):
                base[p + f"W_{kind}"] = w(d, d, std=s_d)
                base[p + f"b_{kind}"] = w(d, std=0.02)
        base[p + "W_o"] = w(d, d, std=s_d)
        base[p + "b_o"] = w(d, std=0.02)
        base[p + "ln1.g"] = Tensor(np.ones(d))
        base[p + "ln1.b"] = Tensor(np.zeros(d))
        base[p + "W_ff1"] = w(d, f, std=s_d)
        base[p + "b_ff1"] = w(f, std=0.02)
        base[p + "W_ff2"] = w(f, d, std=s_f)
        base[p + "b_ff2"] = w(d, std=0.02)
        base[p + "ln2.g"] = Tensor(np.ones(d))
        base[p + "ln2.b"] = Tensor(np.zeros(d))
    head = {
        "W": Tensor(rng.normal(0.0, s_d, size=(d, cfg.n_classes)), name="head.W"),
        "b": Tensor(np.zeros(cfg.n_classes), name="head.b"),
    }
    return FrozenEncoder(cfg=cfg, base=base, head=head, seed=seed)


def attach_adapters(model: FrozenEncoder, plan: InsertionPlan, cfg: AdapterConfig,
                    seed: int = 0, train_head: bool = True) -> FrozenEncoder:
    """Return a copy of ``model`` with the plan's adapters attached.

    Time modules are created in chain order and registered per kind. The
    returned model's trainable set is the adapters, plus the head when
    ``train_head`` is set.
    """
    if model.adapters:
        raise PlanError("model already carries adapters")
    dims = model.cfg.dims()
    kinds = model.cfg.attachable_kinds()
    for e in plan.entries:
        if not 0 <= e.layer < dims.L:
            raise PlanError(f"plan entry layer {e.layer} outside 0..{dims.L - 1}")
        if e.kind not in kinds:
            raise PlanError(f"host has no {e.kind!r} projection (attachable: {', '.join(kinds)})")
    adapted = copy.copy(model)
    adapted.head = {
        k: Tensor(v.data.copy(), requires_grad=train_head, name=v.name) for k, v in model.head.items()
    }
    adapted.adapters = {}
    adapted.adapter_cfg = cfg
    adapted.plan = plan
    adapted.adapter_seed = seed
    chains: dict[str, list[TimeModule]] = {}
    for e in sorted(plan.entries, key=lambda e: (e.layer, KIND_CODES[e.kind])):
        d_in, d_out = dims.io(e.kind)
        ss = np.random.SeedSequence([seed, e.layer, KIND_CODES[e.kind]])
        if e.method == "ssmlora":
            t = len(chains.setdefault(e.kind, []))
            m = init_time_module(d_in, cfg, t, ss, d_out=d_out, kind=e.kind)
            chains[e.kind].append(m)
        else:
            m = init_lora_module(d_in, cfg, ss, d_out=d_out, kind=e.kind)
        adapted.adapters[(e.layer, e.kind)] = m
    adapted.chains = {kind: Chain(kind, mods, cfg) for kind, mods in chains.items()}
    return adapted


# forward ---------------------------------------------------------------------

def layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return T.layer_norm(x, g, b, LN_EPS)


class _Pass:
    """One forward pass: the model, its chain state and the dropout source."""

    def __init__(self, model: FrozenEncoder, state: PassState, rng):
        self.model = model
        self.state = state
        self.rng = rng

    def project(self, layer: int, kind: str, x: Tensor, W: Tensor, b: Tensor) -> Tensor:
        y = x @ W + b
        adapter = self.model.adapters.get((layer, kind))
        if isinstance(adapter, TimeModule):
            y = y + chain_step(self.state, self.model.chains[kind], x, adapter.t)
        elif isinstance(adapter, LoraModule):
            y = y + lora_forward(x, adapter, self.model.adapter_cfg, self.rng)
        return y


def _attention(run: _Pass, l: int, x: Tensor, return_probs: bool = False):
    m = run.model
    cfg, base = m.cfg, m.base
    p = f"layer{l}."
    batch, seq, d = x.shape
    h, dh = cfg.heads, d // cfg.heads
    if cfg.fused_qkv:
        qkv = run.project(l, QKV, x, base[p + "W_qkv"], base[p + "b_qkv"])
        q, k, v = qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]
    else:
        q = run.project(l, QUERY, x, base[p + "W_query"], base[p + "b_query"])
        k = run.project(l, KEY, x, base[p + "W_key"], base[p + "b_key"])
        v = run.project(l, VALUE, x, base[p + "W_value"], base[p + "b_value"])

    def heads(t):
        return t.reshape(batch, seq, h, dh).transpose(0, 2, 1, 3)

    q, k, v = heads(q), heads(k), heads(v)
    scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    probs = T.softmax(scores, axis=-1)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, seq, d)
    out = ctx @ base[p + "W_o"] + base[p + "b_o"]
    return (out, probs) if return_probs else out


def _ffn(run: _Pass, l: int, x: Tensor) -> Tensor:
    base = run.model.base
    p = f"layer{l}."
    hidden = T.relu(run.project(l, FFN, x, base[p + "W_ff1"], base[p + "b_ff1"]))
    return hidden @ base[p + "W_ff2"] + base[p + "b_ff2"]


def check_tokens(model: FrozenEncoder, tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise InputError(f"tokens must be batch x seq, got shape {tokens.shape}")
    if tokens.shape[1] > model.cfg.max_seq:
        raise InputError(f"sequence length {tokens.shape[1]} exceeds max_seq {model.cfg.max_seq}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= model.cfg.vocab):
        raise InputError(f"token ids must lie in [0, {model.cfg.vocab})")
    return tokens.astype(np.int64)


@dataclass
class ForwardResult:
    logits: Tensor
    state: PassState
    attention: list[np.ndarray] = field(default_factory=list)


def encoder_forward(model: FrozenEncoder, tokens, training: bool = False,
                    rng: np.random.Generator | None = None,
                    pinned: dict[tuple[str, int], np.ndarray] | None = None,
                    return_state: bool = False, keep_attention: bool = False):
    """Class logits (batch x n_classes).

    ``rng`` drives adapter dropout and is used only when ``training``.
    ``pinned`` replaces chain inputs by recorded values (see ``gradcheck``).
    """
    tokens = check_tokens(model, tokens)
    batch, seq = tokens.shape
    base = model.base
    drop_rng = rng if training else None
    state = begin_pass(model.chains, batch, seq, drop_rng, pinned)
    run = _Pass(model, state, drop_rng)
    x = T.embedding(base["tok_emb"], tokens) + base["pos_emb"].data[:seq]
    x = layer_norm(x, base["emb_ln.g"], base["emb_ln.b"])
    attn_maps = []
    for l in range(model.cfg.L):
        p = f"layer{l}."
        if keep_attention:
            a, probs = _attention(run, l, x, return_probs=True)
            attn_maps.append(probs.data)
        else:
            a = _attention(run, l, x)
        x = layer_norm(x + a, base[p + "ln1.g"], base[p + "ln1.b"])
        x = layer_norm(x + _ffn(run, l, x), base[p + "ln2.g"], base[p + "ln2.b"])
    pooled = x.mean(axis=1) if model.cfg.pooling == "mean" else x[:, 0, :]
    logits = pooled @ model.head["W"] + model.head["b"]
    if return_state or keep_attention:
        return ForwardResult(logits, state, attn_maps)
    return logits
