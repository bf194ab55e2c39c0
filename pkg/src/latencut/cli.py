"""Command-line entry point: ``latencut {gen,flops,acc,schedule,run,sweep}``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import tensor
from .acc import AccProfile, profile_model
from .cost import VARIANTS, analytic_flops, estimate_speedup
from .model_io import BERT_BASE, ConfigError, Model, ModelConfig, ModelFormatError, load_config, save_model
from .runner import forward_baseline, forward_pruned, load_inputs, measure_speedup
from .schedule import PINNED_POLICIES, PruneSchedule, make_schedule, schedule_from_profile

log = logging.getLogger("latencut")

POLICY_FLAGS = {"sv": "sv_sort", "random": "random_sort", "tail": "tail_truncate"}
PLACEMENT_FLAGS = {"post": "post_concat", "mid": "mid_attention"}

SWEEP_COLUMNS = ("alpha_sc", "predicted_speedup", "measured_speedup", "pw_total", "latency_ns")


class UsageError(Exception):
    pass


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` with the stop value included when hit within 1e-9."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"range must be start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise UsageError(f"range needs step > 0 and stop >= start, got {text!r}")
    n = math.floor((stop - start) / step + 1e-9) + 1
    return [round(start + i * step, 12) for i in range(n)]


def _require_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return p


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_gen(args) -> int:
    if args.config:
        config = load_config(_require_file(args.config, "--config"))
    else:
        config = ModelConfig(**BERT_BASE)
    store = Model.random(config, args.seed).weights
    save_model(config, store, args.out)
    print(f"wrote {args.out}: {store.num_parameters():,} parameters, seed {args.seed}")
    return 0


def cmd_flops(args) -> int:
    config = load_config(_require_file(args.config, "--config"))
    if args.seq_len < 0:
        raise UsageError("--seq-len must be non-negative")
    report = analytic_flops(config, args.seq_len, args.variant)
    if args.instrument:
        if args.seq_len < 1:
            raise UsageError("--instrument needs --seq-len >= 1")
        model = Model.random(config, args.seed)
        ids = np.random.default_rng(args.seed).integers(0, config.vocab_size, args.seq_len)
        run = forward_baseline(model, ids, count_flops=True)
        report.instrumented_total = run.flops
        encoder = sum(v for k, v in run.flops_by_scope.items() if k.startswith("encoder."))
        report.notes.append(f"instrumented encoder share {encoder / run.flops:.4%}")

    print(f"{'layer':<11} {'sublayer':<18} {'flops':>18} {'share':>10}")
    for group, sub, flops, share in report.rows():
        print(f"{group:<11} {sub:<18} {flops:>18.0f} {share:>10.4%}")
    print(f"total ({report.variant}) {report.total:.0f}")
    for name, share in report.shares.items():
        print(f"share {name:<15} {share * 100:.4f}%")
    print(f"attention_self paper={report.attention_self_paper:.0f} "
          f"corrected={report.attention_self_corrected:.0f}")
    if report.instrumented_total is not None:
        print(f"instrumented total {report.instrumented_total:.0f}")
    for note in report.notes:
        print(note)
    if args.out:
        report.save_json(args.out)
    if args.csv:
        report.save_csv(args.csv)
    return 0


def cmd_acc(args) -> int:
    model = Model.load(_require_file(args.model, "--model"))
    inputs = load_inputs(_require_file(args.inputs, "--inputs"))
    mode = "decoder" if args.causal else model.config.mode
    profile = profile_model(model, inputs, mode=mode)
    profile.save_json(args.out)
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    profile.save_csv(csv_path)
    print(f"profiled {len(inputs)} input(s) over {profile.num_layers} layers -> {args.out}, {csv_path}")
    if profile.degenerate:
        print("warning: fewer than 3 layers, constant fit used", file=sys.stderr)
    return 0


def cmd_schedule(args) -> int:
    if not args.alpha_sc > 0:
        raise UsageError("--alpha-sc must be positive")
    profile = AccProfile.load_json(_require_file(args.profile, "--profile"))
    sched = schedule_from_profile(profile, args.alpha_sc, args.pinned)
    sched.save_json(args.out)
    print(f"alpha_er = {[round(x, 6) for x in sched.alpha_er]}")
    if sched.halted_at is not None:
        print(f"elimination halted at layer {sched.halted_at}")
    outside = sched.out_of_band_layers()
    if outside:
        print(f"note: alpha_er outside the 0.77-0.97 fine-tuning band at layers {outside}",
              file=sys.stderr)
    return 0


def _run_batch(model, inputs, sched, args, measure: bool):
    reports = []
    base_ns = pruned_ns = 0.0
    for ids in inputs:
        rep = forward_pruned(model, ids, sched, args.policy, args.placement, args.seed)
        if measure:
            b, p, _ = measure_speedup(model, ids, sched, args.repeats, args.warmup,
                                      args.policy, args.placement, args.seed)
            rep.latency_ns = p.median_ns
            base_ns += b.median_ns
            pruned_ns += p.median_ns
        reports.append(rep)
    pw_total = sum(r.pw_total for r in reports)
    pw_baseline = sum(r.pw_baseline for r in reports)
    row = {
        "alpha_sc": sched.alpha_sc,
        "predicted_speedup": pw_baseline / pw_total,
        "measured_speedup": base_ns / pruned_ns if measure else None,
        "pw_total": pw_total,
        "latency_ns": pruned_ns if measure else None,
    }
    return reports, row, base_ns


def cmd_run(args) -> int:
    _check_measure_flags(args)
    model = Model.load(_require_file(args.model, "--model"))
    inputs = load_inputs(_require_file(args.inputs, "--inputs"))
    sched = PruneSchedule.load_json(_require_file(args.schedule, "--schedule"))
    reports, row, _ = _run_batch(model, inputs, sched, args, args.measure)
    out = {
        "schedule": sched.to_dict(),
        "policy": args.policy,
        "placement": args.placement,
        "formula_speedup": estimate_speedup(sched.alpha_er),
        "summary": row,
        "runs": [r.to_dict() for r in reports],
    }
    _write_json(out, args.out)
    if args.csv:
        _write_csv(args.csv, [row])
    return 0


def cmd_sweep(args) -> int:
    _check_measure_flags(args)
    grid = parse_range(args.alpha_sc_range)
    model = Model.load(_require_file(args.model, "--model"))
    inputs = load_inputs(_require_file(args.inputs, "--inputs"))
    profile = AccProfile.load_json(_require_file(args.profile, "--profile"))
    # profiled once; each grid point only rescales alpha_er
    base = schedule_from_profile(profile, 1.0, args.pinned)

    rows = []
    for alpha_sc in grid:
        sched = make_schedule(base.alpha_ep, alpha_sc, base.pinned_policy, base.halted_at)
        _, row, _ = _run_batch(model, inputs, sched, args, measure=True)
        rows.append(row)
        print(f"alpha_sc={alpha_sc:.4g} predicted={row['predicted_speedup']:.4f} "
              f"measured={row['measured_speedup']:.4f}")
    _write_csv(args.out, rows)
    return 0


def _check_measure_flags(args) -> None:
    if args.repeats < 3:
        raise UsageError("--repeats must be at least 3")
    if args.warmup < 1:
        raise UsageError("--warmup must be at least 1")


def _write_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row[k] is None else repr(float(row[k]))) for k in SWEEP_COLUMNS})


def _add_exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=sorted(POLICY_FLAGS), default="sv")
    p.add_argument("--placement", choices=sorted(PLACEMENT_FLAGS), default="post")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warmup", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latencut", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="seed for model generation and random_sort")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a random LATX model")
    p.add_argument("--config", help="JSON config (default: 12x768x12 encoder)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("flops", help="analytic FLOP table")
    p.add_argument("--config", required=True, help="JSON config or LATX model")
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--variant", choices=VARIANTS, default="paper")
    p.add_argument("--instrument", action="store_true",
                   help="also count FLOPs of a real forward pass on a random model")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", help="write the CostReport as JSON")
    p.add_argument("--csv", help="write the sublayer table as CSV")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("acc", help="profile per-layer attention context contribution")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--causal", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="CSV path (default: --out with .csv suffix)")
    p.set_defaults(func=cmd_acc)

    p = sub.add_parser("schedule", help="build an elimination schedule from a profile")
    p.add_argument("--profile", required=True)
    p.add_argument("--alpha-sc", type=float, required=True)
    p.add_argument("--pinned", choices=PINNED_POLICIES, default="first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("run", help="pruned inference, optionally timed against baseline")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--schedule", required=True)
    _add_exec_flags(p)
    p.add_argument("--measure", action="store_true")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out")
    p.add_argument("--csv", help="append-style speedup row CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="offline-tuning sweep over alpha_sc")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--alpha-sc-range", default="0.85:1.2:0.05")
    p.add_argument("--pinned", choices=PINNED_POLICIES, default="first")
    _add_exec_flags(p)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "policy"):
        args.policy = POLICY_FLAGS[args.policy]
        args.placement = PLACEMENT_FLAGS[args.placement]
    try:
        with tensor.configure_threads() or contextlib.nullcontext():
            return args.func(args)
    except (UsageError, ConfigError, ModelFormatError, ValueError, OSError, KeyError) as e:
        print(f"latencut {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
