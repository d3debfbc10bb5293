"""Adapter checkpoints.

An ``.npz`` container of named little-endian float64 matrices (each stored
with its ``.npy`` shape header) plus a JSON manifest under ``__manifest__``.
Only adapter and head tensors are stored; the frozen base is rebuilt from
its seed.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .adapter import AdapterConfig
from .encoder import EncoderConfig, FrozenEncoder, attach_adapters, build_encoder
from .errors import InputError
from .planner import InsertionPlan
from .reports import SCHEMA_VERSION

MANIFEST_KEY = "__manifest__"


def manifest(model: FrozenEncoder) -> dict:
    cfg = model.adapter_cfg
    return {
        "schema_version": SCHEMA_VERSION,
        "encoder": dataclasses.asdict(model.cfg),
        "encoder_seed": model.seed,
        "adapter": dataclasses.asdict(cfg) if cfg is not None else None,
        "adapter_seed": model.adapter_seed,
        "train_head": any(p.requires_grad for p in model.head.values()),
        "plan": {"name": model.plan.name, "entries": model.plan.to_records()},
        "dims": dataclasses.asdict(model.cfg.dims()),
        "base_sha256": model.base_hash(),
    }


def save_checkpoint(model: FrozenEncoder, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.ascontiguousarray(p.data, dtype="<f8") for name, p in model.trainable()}
    if not any(p.requires_grad for p in model.head.values()):
        # frozen head: still stored so evaluation does not depend on build order
        arrays.update({f"head.{k}": np.ascontiguousarray(v.data, dtype="<f8") for k, v in model.head.items()})
    text = json.dumps(manifest(model), sort_keys=True)
    arrays[MANIFEST_KEY] = np.frombuffer(text.encode(), dtype=np.uint8)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | Path) -> FrozenEncoder:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as npz:
        if MANIFEST_KEY not in npz:
            raise InputError(f"{path}: missing manifest")
        man = json.loads(npz[MANIFEST_KEY].tobytes().decode())
        state = {k: npz[k] for k in npz.files if k != MANIFEST_KEY}
    if man.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: schema version {man.get('schema_version')!r} != {SCHEMA_VERSION!r}")
    base = build_encoder(EncoderConfig(**man["encoder"]), man["encoder_seed"])
    if base.base_hash() != man["base_sha256"]:
        raise InputError(f"{path}: rebuilt base weights do not match the checkpoint's hash")
    plan = InsertionPlan.from_records(man["plan"]["entries"], man["plan"]["name"])
    adapter_cfg = AdapterConfig(**man["adapter"]) if man["adapter"] else AdapterConfig()
    model = attach_adapters(base, plan, adapter_cfg, man["adapter_seed"] or 0, man["train_head"])
    model.load_adapter_state(state)
    if not man["train_head"]:
        for k, v in model.head.items():
            v.data[...] = state[f"head.{k}"]
    return model
