"""Command-line entry point: ``ssmlora {plan,train,eval,gradcheck,bench}``.

Exit codes: 0 success, 2 configuration error, 3 numeric error (non-finite
values, training divergence), 4 check failed (gradcheck above tolerance).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import reports
from .bench import bench_plan
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .encoder import attach_adapters, build_encoder
from .errors import ConfigError, InputError, NumericError, PlanError
from .planner import budget_report, plan_by_name
from .tasks import gen_task
from .training import evaluate, gradcheck, randomize_adapters, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("ssmlora")


def _formats(args) -> tuple[str, ...]:
    return (args.format,) if args.format else reports.FORMATS


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.out_dir)


def _plan(cfg: RunConfig, pattern: str | None = None, L: int | None = None):
    return plan_by_name(pattern or cfg.plan.pattern, L or cfg.encoder.L, cfg.plan.kinds)


def _model(cfg: RunConfig):
    base = build_encoder(cfg.encoder, cfg.encoder_seed)
    return attach_adapters(base, _plan(cfg), cfg.adapter, cfg.adapter_seed, cfg.train_head)


def cmd_plan(cfg: RunConfig, args) -> int:
    dims = cfg.accounting_dims()
    ranks = cfg.plan.ranks or (cfg.adapter.r,)
    plans = [_plan(cfg, name, dims.L) for name in cfg.plan.compare]
    report = budget_report(plans, dims, ranks)
    meta = {"dims": dataclasses.asdict(dims), "baseline": plans[0].name}
    paths = reports.write_report(_out_dir(args, cfg), "budget", "budget", reports.budget_rows(report),
                                 meta, _formats(args), reports.BUDGET_COLUMNS)
    for row in report.rows:
        print(f"{row.pattern:>14} r={row.r:<3} params={row.params:>10,}"
              + (f"  ratio={float(row.ratio):.6f}" if row.ratio is not None else ""))
    log.info("wrote %s", ", ".join(map(str, paths)))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg)
    model = _model(cfg)
    base_hash = model.base_hash()
    data = gen_task(cfg.task)
    records = []

    def on_epoch(rec):
        records.append(rec.to_dict())
        log.info("epoch %d  train_loss %.4f  train_acc %.4f  eval_acc %.4f",
                 rec.epoch, rec.train_loss, rec.train_acc, rec.eval_acc)

    metrics = train(model, data, cfg.train, on_epoch)
    assert model.base_hash() == base_hash, "frozen base weights changed during training"
    save_checkpoint(model, out / "checkpoint.npz")
    reports.write_jsonl(out / "metrics.jsonl", records)
    reports.write_report(out, "epoch_timing", "epoch-timing",
                         [{"epoch": e.epoch, "seconds": e.seconds} for e in metrics.epochs], {}, ("csv",))
    summary = [{
        "pattern": model.plan.name,
        "r": cfg.adapter.r,
        "task": cfg.task.kind,
        "epochs": len(metrics.epochs),
        "best_epoch": metrics.best_epoch,
        "best_eval_acc": metrics.best_eval_acc,
        "final_train_acc": metrics.final.train_acc,
        "stopped_early": metrics.stopped_early,
        "adapter_params": metrics.adapter_params,
        "head_params": metrics.head_params,
        "trainable_params": metrics.trainable_params,
    }]
    reports.write_report(out, "summary", "train-summary", summary, {"base_sha256": base_hash}, _formats(args))
    print(f"best eval accuracy {metrics.best_eval_acc:.4f} at epoch {metrics.best_epoch} "
          f"({metrics.adapter_params} adapter params)")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(args, cfg)
    ckpt = Path(cfg.eval.checkpoint) if cfg.eval.checkpoint else out / "checkpoint.npz"
    model = load_checkpoint(ckpt)
    _, eval_set = gen_task(cfg.task)
    res = evaluate(model, eval_set, bins=cfg.eval.bins)
    rows = [{"bin_lo": b.lo, "bin_hi": b.hi, "n": b.n, "accuracy": b.accuracy} for b in res.bins]
    meta = {"accuracy": res.accuracy, "loss": res.loss, "n": res.n, "checkpoint": ckpt.name}
    reports.write_report(out, "eval", "eval", rows, meta, _formats(args))
    print(f"accuracy {res.accuracy:.4f} over {res.n} samples")
    for b in res.bins:
        acc = "n/a" if b.accuracy is None else f"{b.accuracy:.4f}"
        print(f"  len {b.lo}-{b.hi}: n={b.n} acc={acc}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    gc = cfg.gradcheck
    model = _model(cfg)
    if gc.init == "random":
        randomize_adapters(model, cfg.seed + 4, gc.init_scale)
    rng = np.random.default_rng(cfg.seed + 5)
    seq = min(gc.seq_len, cfg.encoder.max_seq)
    tokens = rng.integers(0, cfg.encoder.vocab, size=(gc.samples, seq))
    labels = rng.integers(0, cfg.encoder.n_classes, size=gc.samples)
    res = gradcheck(model, (tokens, labels), gc.delta, gc.tolerance, gc.n_coords,
                    seed=cfg.seed + 6, include_head=gc.include_head)
    rows = [{"param": name, "max_rel_err": err} for name, err in res.per_param.items()]
    meta = {
        "passed": res.passed,
        "max_rel_err": res.max_rel_err,
        "tolerance": gc.tolerance,
        "delta": gc.delta,
        "n_coords": res.n_coords,
        "worst": dataclasses.asdict(res.worst) if res.worst else None,
    }
    reports.write_report(_out_dir(args, cfg), "gradcheck", "gradcheck", rows, meta, _formats(args))
    status = "PASS" if res.passed else "FAIL"
    print(f"gradcheck {status}: max relative error {res.max_rel_err:.3e} "
          f"(tolerance {gc.tolerance:.1e}, {res.n_coords} coordinates)")
    if not res.passed and res.worst:
        w = res.worst
        print(f"  worst coordinate {w.param}[{w.index}]: analytic {w.analytic!r} numeric {w.numeric!r}")
    return EXIT_OK if res.passed else EXIT_CHECK


def cmd_bench(cfg: RunConfig, args) -> int:
    b = cfg.bench
    if max(b.seq_lens) > cfg.encoder.max_seq:
        raise ConfigError("bench.seq_lens exceed encoder.max_seq", "bench.seq_lens")
    base = build_encoder(cfg.encoder, cfg.encoder_seed)
    rows = []
    for pattern in b.patterns:
        plan = _plan(cfg, pattern)
        for seq in b.seq_lens:
            rows.append(bench_plan(base, plan, cfg.adapter, seq, b.batch, b.repeats, cfg.adapter_seed))
    out = _out_dir(args, cfg)
    reports.write_report(out, "bench", "bench", [r.deterministic() for r in rows],
                         {"encoder": dataclasses.asdict(cfg.encoder)}, _formats(args))
    # wallclock is a measurement, not a reproducible report: kept in its own file
    reports.write_report(out, "bench_timing", "bench-timing", [r.timing() for r in rows], {}, ("csv",))
    for r in rows:
        print(f"{r.pattern:>12} seq={r.seq_len:<4} fwd={r.forward_s * 1e3:8.2f}ms "
              f"bwd={r.backward_s * 1e3:8.2f}ms params={r.param_bytes:>8}B act={r.activation_bytes:>10}B")
    return EXIT_OK


COMMANDS = {
    "plan": cmd_plan,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmlora", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config (TOML)")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, help="run seed (overrides [run] seed)")
        p.add_argument("--format", choices=reports.FORMATS, help="write only this report format")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, PlanError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
