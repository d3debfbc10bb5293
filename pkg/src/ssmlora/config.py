"""Run configuration: one TOML file with flat sections fully determines a run.

Sections and keys (all optional, defaults in brackets)::

    [run]       seed [0]
    [encoder]   L, d, heads, d_ff, vocab, max_seq, fused_qkv, pooling
    [adapter]   r, alpha, epsilon, init_sigma, dropout, train_head
    [plan]      pattern, kinds, compare, ranks
    [dims]      L, d, fused_qkv_out, d_ff   (accounting-only dims for ``plan``)
    [task]      kind, seq_len, n_train, n_eval, vocab, n_classes, parity_span, min_len
    [train]     lr, batch_size, max_epochs, patience
    [eval]      bins, checkpoint
    [gradcheck] delta, tolerance, n_coords, samples, seq_len, init, init_scale, include_head
    [bench]     seq_lens, batch, repeats, patterns
    [output]    dir

Every component seed is derived from ``[run] seed``.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .adapter import AdapterConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .planner import KEY, QKV, QUERY, VALUE, FFN, ModelDims
from .tasks import TaskSpec
from .training import TrainOptions

PATTERNS = ("alternating", "skip-one", "dense-lora", "dense-ssmlora", "none")


@dataclass(frozen=True)
class PlanConfig:
    pattern: str = "alternating"
    kinds: tuple[str, ...] = (QUERY, VALUE)
    compare: tuple[str, ...] = ("dense-lora", "alternating")
    ranks: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvalConfig:
    bins: int = 1
    checkpoint: str | None = None


@dataclass(frozen=True)
class GradcheckConfig:
    delta: float = 1e-5
    tolerance: float = 1e-5
    n_coords: int = 64
    samples: int = 2
    seq_len: int = 8
    init: str = "random"
    init_scale: float = 0.1
    include_head: bool = False


@dataclass(frozen=True)
class BenchConfig:
    seq_lens: tuple[int, ...] = (16, 32, 64)
    batch: int = 8
    repeats: int = 3
    patterns: tuple[str, ...] = ("none", "dense-lora", "alternating")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    train_head: bool = True
    plan: PlanConfig = field(default_factory=PlanConfig)
    dims: ModelDims | None = None
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainOptions = field(default_factory=TrainOptions)
    eval: EvalConfig = field(default_factory=EvalConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    out_dir: str = "runs/default"

    # derived seeds
    @property
    def encoder_seed(self) -> int:
        return self.seed

    @property
    def adapter_seed(self) -> int:
        return self.seed + 1

    @property
    def task_seed(self) -> int:
        return self.seed + 2

    @property
    def train_seed(self) -> int:
        return self.seed + 3

    def accounting_dims(self) -> ModelDims:
        return self.dims if self.dims is not None else self.encoder.dims()

    def with_seed(self, seed: int) -> "RunConfig":
        return load_config_dict(self._raw, seed_override=seed, source=self._source)

    _raw: dict = field(default_factory=dict, repr=False, compare=False)
    _source: str = field(default="<dict>", repr=False, compare=False)


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls) if not f.name.startswith("_")}


def _coerce(section: str, key: str, value: Any, annotation: str) -> Any:
    where = f"{section}.{key}"
    ann = str(annotation)
    if ann.startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}", where)
        inner = "int" if "int" in ann else "str"
        return tuple(_coerce(section, key, v, inner) for v in value)
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}", where)
        return value
    if ann.startswith("int"):
        if value is None and "None" in ann:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}", where)
        return value
    if ann.startswith("float"):
        if value is None and "None" in ann:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}", where)
        return float(value)
    if ann.startswith("str"):
        if value is None and "None" in ann:
            return None
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}", where)
        return value
    return value


def _section(raw: dict, name: str, cls, skip=(), extra=()) -> tuple[dict, dict]:
    data = raw.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table", name)
    allowed = {k: f for k, f in _fields(cls).items() if k not in skip}
    kwargs, leftovers = {}, {}
    for key, value in data.items():
        if key in extra:
            leftovers[key] = value
        elif key not in allowed:
            raise ConfigError(f"unknown key {name}.{key}", f"{name}.{key}")
        else:
            kwargs[key] = _coerce(name, key, value, allowed[key].type)
    return kwargs, leftovers


def _build(name: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except ConfigError as e:
        key = f"{name}.{e.key}" if e.key else name
        raise ConfigError(f"{key}: {e}", key) from None


SECTIONS = ("run", "encoder", "adapter", "plan", "dims", "task", "train", "eval", "gradcheck", "bench", "output")


def load_config_dict(raw: dict, seed_override: int | None = None, source: str = "<dict>") -> RunConfig:
    for name in raw:
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]", name)
    run = raw.get("run", {})
    for key in run:
        if key != "seed":
            raise ConfigError(f"unknown key run.{key}", f"run.{key}")
    seed = _coerce("run", "seed", run.get("seed", 0), "int")
    if seed_override is not None:
        seed = seed_override

    task_kw, _ = _section(raw, "task", TaskSpec, skip=("seed",))
    task_kind = task_kw.get("kind", TaskSpec.kind)
    n_classes = 2 if task_kind == "parity" else task_kw.get("n_classes", TaskSpec.n_classes)
    task_kw["seed"] = seed + 2

    enc_kw, _ = _section(raw, "encoder", EncoderConfig)
    enc_kw.setdefault("n_classes", n_classes)
    enc_kw.setdefault("vocab", task_kw.get("vocab", TaskSpec.vocab))
    enc_kw.setdefault("max_seq", max(task_kw.get("seq_len", TaskSpec.seq_len), EncoderConfig.max_seq))
    encoder = _build("encoder", EncoderConfig, enc_kw)

    ad_kw, ad_extra = _section(raw, "adapter", AdapterConfig, extra=("train_head",))
    adapter = _build("adapter", AdapterConfig, ad_kw)
    train_head = _coerce("adapter", "train_head", ad_extra.get("train_head", True), "bool")

    plan_kw, _ = _section(raw, "plan", PlanConfig)
    plan = PlanConfig(**plan_kw)
    for key, names in (("pattern", (plan.pattern,)), ("compare", plan.compare)):
        for n in names:
            if n not in PATTERNS:
                raise ConfigError(f"plan.{key}: unknown pattern {n!r}", f"plan.{key}")
    for k in plan.kinds:
        if k not in (QUERY, KEY, VALUE, QKV, FFN):
            raise ConfigError(f"plan.kinds: unknown matrix kind {k!r}", "plan.kinds")

    dims = None
    if "dims" in raw:
        dims_kw, _ = _section(raw, "dims", ModelDims)
        try:
            dims = ModelDims(**dims_kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"dims: {e}", "dims") from None

    task = _build("task", TaskSpec, task_kw)
    tr_kw, _ = _section(raw, "train", TrainOptions, skip=("seed",))
    tr_kw["seed"] = seed + 3
    train = _build("train", TrainOptions, tr_kw)
    ev_kw, _ = _section(raw, "eval", EvalConfig)
    gc_kw, _ = _section(raw, "gradcheck", GradcheckConfig)
    gc = GradcheckConfig(**gc_kw)
    if gc.init not in ("random", "fresh"):
        raise ConfigError("gradcheck.init must be 'random' or 'fresh'", "gradcheck.init")
    if not gc.delta > 0:
        raise ConfigError("gradcheck.delta must be positive", "gradcheck.delta")
    bench_kw, _ = _section(raw, "bench", BenchConfig)
    bench = BenchConfig(**bench_kw)
    out = raw.get("output", {})
    for key in out:
        if key != "dir":
            raise ConfigError(f"unknown key output.{key}", f"output.{key}")
    out_dir = _coerce("output", "dir", out.get("dir", "runs/default"), "str")

    if adapter.r > encoder.d:
        raise ConfigError(f"adapter.r ({adapter.r}) exceeds encoder.d ({encoder.d})", "adapter.r")
    if task.seq_len > encoder.max_seq:
        raise ConfigError(f"task.seq_len ({task.seq_len}) exceeds encoder.max_seq ({encoder.max_seq})", "task.seq_len")
    if encoder.vocab < task.vocab:
        raise ConfigError(f"encoder.vocab ({encoder.vocab}) is smaller than task.vocab", "encoder.vocab")
    if encoder.n_classes < task.classes:
        raise ConfigError("encoder.n_classes is smaller than the task's class count", "encoder.n_classes")

    return RunConfig(
        seed=seed, encoder=encoder, adapter=adapter, train_head=train_head, plan=plan, dims=dims,
        task=task, train=train, eval=EvalConfig(**ev_kw), gradcheck=gc, bench=bench,
        out_dir=out_dir, _raw=raw, _source=source,
    )


def load_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "config") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}", "config") from None
    return load_config_dict(raw, seed_override, str(path))
