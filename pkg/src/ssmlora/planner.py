"""Which (layer, matrix-kind) slots get an adapter, and what that costs.

Patterns:

* ``alternating`` -- one time module per layer, query on even layers and value
  on odd ones, giving two chains.
* ``skip-one`` -- a time module on the fused attention projection of every
  even layer (GPT-2 style hosts).
* ``dense`` -- the LoRA baseline: every requested kind in every layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import ContractError, PlanError

QUERY, KEY, VALUE, QKV, FFN = "query", "key", "value", "qkv", "ffn"
METHODS = ("lora", "ssmlora")


@dataclass(frozen=True)
class ModelDims:
    L: int
    d: int
    fused_qkv_out: int | None = None
    d_ff: int | None = None

    def __post_init__(self):
        if self.L < 1 or self.d < 1:
            raise ContractError(f"model dims must be positive, got L={self.L}, d={self.d}")

    def io(self, kind: str) -> tuple[int, int]:
        """(d_in, d_out) of the host projection for ``kind``."""
        if kind in (QUERY, KEY, VALUE):
            return self.d, self.d
        if kind == QKV:
            return self.d, self.fused_qkv_out or 3 * self.d
        if kind == FFN:
            return self.d, self.d_ff or 4 * self.d
        raise PlanError(f"unknown matrix kind {kind!r}")


@dataclass(frozen=True)
class PlanEntry:
    layer: int
    kind: str
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise PlanError(f"unknown adapter method {self.method!r}")


@dataclass(frozen=True)
class InsertionPlan:
    entries: tuple[PlanEntry, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        slots = [(e.layer, e.kind) for e in self.entries]
        if len(set(slots)) != len(slots):
            dup = next(s for s in slots if slots.count(s) > 1)
            raise PlanError(f"duplicate adapter slot {dup}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __or__(self, other: "InsertionPlan") -> "InsertionPlan":
        entries = tuple(sorted(self.entries + other.entries, key=lambda e: (e.layer, e.kind)))
        return InsertionPlan(entries, f"{self.name}+{other.name}")

    def chains(self) -> dict[str, list[int]]:
        """Layers of each state-carrying chain, grouped by kind in layer order."""
        out: dict[str, list[int]] = {}
        for e in sorted(self.entries, key=lambda e: e.layer):
            if e.method == "ssmlora":
                out.setdefault(e.kind, []).append(e.layer)
        return out

    def layers(self) -> list[int]:
        return sorted({e.layer for e in self.entries})

    def methods(self) -> list[str]:
        return sorted({e.method for e in self.entries})

    def to_records(self) -> list[dict]:
        return [{"layer": e.layer, "kind": e.kind, "method": e.method} for e in self.entries]

    @classmethod
    def from_records(cls, records: Iterable[dict], name: str = "custom") -> "InsertionPlan":
        return cls(tuple(PlanEntry(int(r["layer"]), r["kind"], r["method"]) for r in records), name)


def plan_alternating(L: int, method: str = "ssmlora") -> InsertionPlan:
    if L < 1:
        raise ContractError("L must be >= 1")
    return InsertionPlan(
        tuple(PlanEntry(l, QUERY if l % 2 == 0 else VALUE, method) for l in range(L)),
        "alternating",
    )


def plan_skip_one(L: int, method: str = "ssmlora", kind: str = QKV) -> InsertionPlan:
    if L < 1:
        raise ContractError("L must be >= 1")
    return InsertionPlan(tuple(PlanEntry(l, kind, method) for l in range(0, L, 2)), "skip-one")


def plan_dense(L: int, kinds: Sequence[str] = (QUERY, VALUE), method: str = "lora") -> InsertionPlan:
    if L < 1:
        raise ContractError("L must be >= 1")
    return InsertionPlan(
        tuple(PlanEntry(l, k, method) for l in range(L) for k in kinds), "dense"
    )


def plan_by_name(pattern: str, L: int, kinds: Sequence[str] = (QUERY, VALUE)) -> InsertionPlan:
    """Resolve a config-level pattern name."""
    if pattern == "alternating":
        return plan_alternating(L)
    if pattern == "skip-one":
        return plan_skip_one(L)
    if pattern == "dense-lora":
        return InsertionPlan(plan_dense(L, kinds, "lora").entries, "dense-lora")
    if pattern == "dense-ssmlora":
        return InsertionPlan(plan_dense(L, kinds, "ssmlora").entries, "dense-ssmlora")
    if pattern in ("none", "empty"):
        return InsertionPlan((), "none")
    raise PlanError(f"unknown plan pattern {pattern!r}")


def entry_params(entry: PlanEntry, dims: ModelDims, r: int, method: str | None = None) -> int:
    d_in, d_out = dims.io(entry.kind)
    n = d_in * r + r * d_out
    if (method or entry.method) == "ssmlora":
        n += 2 * r * r
    return n


def count_params(plan: InsertionPlan, dims: ModelDims, r: int, method: str | None = None) -> int:
    """Trainable adapter parameters. ``method`` overrides every entry's own method."""
    if r < 1:
        raise ContractError(f"rank must be >= 1, got {r}")
    if method is not None and method not in METHODS:
        raise PlanError(f"unknown adapter method {method!r}")
    return sum(entry_params(e, dims, r, method) for e in plan.entries)


def alternating_ratio(d: int, r: int) -> Fraction:
    """Closed form of SSMLoRA-alternating over LoRA-dense-QV: 1/2 + r/(2d)."""
    return Fraction(1, 2) + Fraction(r, 2 * d)


@dataclass
class BudgetRow:
    pattern: str
    method: str
    r: int
    params: int
    baseline_params: int

    @property
    def ratio(self) -> Fraction | None:
        return Fraction(self.params, self.baseline_params) if self.baseline_params else None


@dataclass
class BudgetReport:
    dims: ModelDims
    rows: list[BudgetRow] = field(default_factory=list)

    def get(self, pattern: str, r: int) -> BudgetRow:
        for row in self.rows:
            if row.pattern == pattern and row.r == r:
                return row
        raise KeyError((pattern, r))


def budget_report(plans: Sequence[InsertionPlan], dims: ModelDims, r_values: Sequence[int]) -> BudgetReport:
    """Counts for every (plan, r); ratios are taken against the first plan."""
    if not plans or not r_values:
        raise ContractError("budget_report needs at least one plan and one rank")
    report = BudgetReport(dims)
    for r in r_values:
        base = count_params(plans[0], dims, r)
        for plan in plans:
            report.rows.append(BudgetRow(
                pattern=plan.name,
                method="+".join(plan.methods()) or "none",
                r=int(r),
                params=count_params(plan, dims, r),
                baseline_params=base,
            ))
    return report
