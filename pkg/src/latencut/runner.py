"""Encoder/decoder stack forward passes, pruned execution and latency timing."""

from __future__ import annotations

import contextlib
import gc
import json
import os
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as tk
from .attention import proposed_attention_forward, self_attention
from .cost import instrumented_count, processed_words
from .model_io import Model
from .schedule import PruneSchedule, RetentionPlan, retention_plan


@dataclass
class RunReport:
    mode: str
    input_length: int
    plan: list[int]
    kept_indices: list[list[int]]
    logits: np.ndarray
    pw_total: float
    latency_ns: float | None = None
    flops: float | None = None
    flops_by_scope: dict[str, int] | None = None
    hidden: np.ndarray | None = field(default=None, repr=False)

    @property
    def pw_baseline(self) -> float:
        return float(self.input_length * (len(self.plan) - 1))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "input_length": self.input_length,
            "plan": list(self.plan),
            "kept_indices": [list(map(int, k)) for k in self.kept_indices],
            "logits": np.asarray(self.logits, dtype=np.float64).tolist(),
            "pw_total": self.pw_total,
            "pw_baseline": self.pw_baseline,
            "latency_ns": self.latency_ns,
            "flops": self.flops,
        }


def _check_ids(model: Model, ids: Sequence[int]) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    cfg = model.config
    if ids.ndim != 1 or ids.size < 1:
        raise ValueError("token_ids must be a non-empty 1-D sequence")
    if ids.size > cfg.max_seq:
        raise ValueError(f"sequence length {ids.size} exceeds max_seq {cfg.max_seq}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
    return ids


def embed(model: Model, ids: np.ndarray) -> np.ndarray:
    w = model.weights
    h = w["embed.word"][ids] + w["embed.pos"][: ids.size]
    return tk.layer_norm(h, w["embed.ln.g"], w["embed.ln.b"], model.config.layer_norm_eps)


def _feed_forward(x: np.ndarray, lw, eps: float) -> np.ndarray:
    y = tk.linear(tk.gelu(tk.linear(x, lw.w1, lw.b1)), lw.w2, lw.b2)
    return tk.layer_norm(x + y, lw.ln2_g, lw.ln2_b, eps)


def run_stack(
    model: Model,
    ids: Sequence[int],
    schedule: PruneSchedule | None = None,
    policy: str = "sv_sort",
    placement: str = "post_concat",
    seed: int | None = None,
    mode: str | None = None,
    on_probs: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, list[int], list[np.ndarray]]:
    """Embedding plus every layer. Returns (final hidden, realised counts, kept positions).

    Without a schedule the plain attention path runs and no scores are
    computed. Kept positions are reported as original token positions.
    """
    cfg = model.config
    mode = mode or cfg.mode
    ids = _check_ids(model, ids)
    if schedule is not None and schedule.num_layers != cfg.num_layers:
        raise ValueError(f"schedule has {schedule.num_layers} layers, model has {cfg.num_layers}")
    plan = retention_plan(schedule, ids.size).t if schedule is not None else None

    with tk.scope("embedding"):
        h = embed(model, ids)
    positions = np.arange(ids.size)
    counts = [int(ids.size)]
    kept_log: list[np.ndarray] = []

    for l in range(cfg.num_layers):
        lw = model.weights.layer(l)
        with tk.scope(f"encoder.{l}"):
            if schedule is None:
                att, probs = self_attention(h, lw, cfg, mode)
                residual = h
            else:
                rng_seed = None if seed is None else seed * 1_000_003 + l
                res = proposed_attention_forward(
                    h, h, lw, cfg, mode, keep=plan[l + 1],
                    pinned=schedule.pinned_positions(h.shape[0]), policy=policy,
                    placement=placement, seed=rng_seed,
                )
                att, residual, probs = res.output, res.residual, res.probs
                positions = positions[res.outcome.kept_indices]
            if on_probs is not None:
                on_probs(l, probs)
            x = tk.layer_norm(residual + att, lw.ln1_g, lw.ln1_b, cfg.layer_norm_eps)
            h = _feed_forward(x, lw, cfg.layer_norm_eps)
        counts.append(int(h.shape[0]))
        kept_log.append(positions.copy())
    return h, counts, kept_log


def output_head(model: Model, h: np.ndarray) -> np.ndarray:
    """Classifier logits from the first row (encoder) or LM logits from the last row (decoder)."""
    w = model.weights
    if model.config.mode == "encoder":
        with tk.scope("classifier"):
            pooled = tk.tanh_map(tk.linear(h[:1], w["pooler.w"], w["pooler.b"]))
            return tk.linear(pooled, w["cls.w"], w["cls.b"])[0]
    with tk.scope("lm_head"):
        return tk.linear(h[-1:], w.lm_head())[0]


def _forward(model: Model, ids, schedule, policy, placement, seed, count_flops) -> RunReport:
    with tk.counting() if count_flops else contextlib.nullcontext() as trace:
        h, counts, kept = run_stack(model, ids, schedule, policy, placement, seed)
        logits = output_head(model, h)
    _, pw_total = processed_words(RetentionPlan(tuple(counts)))
    return RunReport(
        mode=model.config.mode,
        input_length=counts[0],
        plan=counts,
        kept_indices=[k.tolist() for k in kept],
        logits=logits,
        pw_total=pw_total,
        flops=instrumented_count(trace),
        flops_by_scope=dict(trace.by_scope) if trace else None,
        hidden=h,
    )


def forward_baseline(model: Model, token_ids: Sequence[int], count_flops: bool = False) -> RunReport:
    return _forward(model, token_ids, None, "sv_sort", "post_concat", None, count_flops)


def forward_pruned(model: Model, token_ids: Sequence[int], schedule: PruneSchedule,
                   policy: str = "sv_sort", placement: str = "post_concat",
                   seed: int | None = None, count_flops: bool = False) -> RunReport:
    report = _forward(model, token_ids, schedule, policy, placement, seed, count_flops)
    expected = list(retention_plan(schedule, report.input_length).t)
    if report.plan != expected:
        raise RuntimeError(f"realised counts {report.plan} drifted from plan {expected}")
    return report


@dataclass(frozen=True)
class LatencyStats:
    min_ns: float
    median_ns: float
    mean_ns: float
    samples: tuple[int, ...]

    @classmethod
    def from_samples(cls, samples: Sequence[int]) -> "LatencyStats":
        return cls(float(min(samples)), float(statistics.median(samples)),
                   float(statistics.fmean(samples)), tuple(samples))


def _timed(fn: Callable[[], object]) -> int:
    start = time.perf_counter_ns()
    fn()
    return max(1, time.perf_counter_ns() - start)


def _runner(model, ids, schedule, policy, placement, seed):
    if schedule is None:
        return lambda: forward_baseline(model, ids)
    return lambda: forward_pruned(model, ids, schedule, policy, placement, seed)


def measure_latency(model: Model, token_ids: Sequence[int], schedule: PruneSchedule | None = None,
                    repeats: int = 10, warmup: int = 1, policy: str = "sv_sort",
                    placement: str = "post_concat", seed: int | None = None) -> LatencyStats:
    """Wall-clock statistics over ``repeats`` timed passes after ``warmup`` discarded ones."""
    if repeats < 3 or warmup < 1:
        raise ValueError("need repeats >= 3 and warmup >= 1")
    run = _runner(model, token_ids, schedule, policy, placement, seed)
    for _ in range(warmup):
        run()
    gc.collect()
    return LatencyStats.from_samples([_timed(run) for _ in range(repeats)])


def measure_speedup(model: Model, token_ids: Sequence[int], schedule: PruneSchedule,
                    repeats: int = 10, warmup: int = 1, policy: str = "sv_sort",
                    placement: str = "post_concat",
                    seed: int | None = None) -> tuple[LatencyStats, LatencyStats, float]:
    """Baseline and pruned timings, interleaved pass by pass to share any drift.

    Returns ``(baseline, pruned, baseline_median / pruned_median)``.
    """
    if repeats < 3 or warmup < 1:
        raise ValueError("need repeats >= 3 and warmup >= 1")
    base = _runner(model, token_ids, None, policy, placement, seed)
    pruned = _runner(model, token_ids, schedule, policy, placement, seed)
    for _ in range(warmup):
        base()
        pruned()
    gc.collect()
    b, p = [], []
    for _ in range(repeats):
        b.append(_timed(base))
        p.append(_timed(pruned))
    bs, ps = LatencyStats.from_samples(b), LatencyStats.from_samples(p)
    return bs, ps, bs.median_ns / ps.median_ns


def load_inputs(path: str | os.PathLike) -> list[list[int]]:
    """Token-id sequences from JSON ``{"ids": [...]}`` or one sequence per line.

    Lines may be whitespace-separated integers or JSON objects with an ``ids``
    key; a whole-file JSON object may hold one sequence or a list of them.
    """
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict):
        ids = data["ids"]
        return [list(map(int, s)) for s in ids] if ids and isinstance(ids[0], list) else [list(map(int, ids))]

    seqs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            seqs.append([int(x) for x in json.loads(line)["ids"]])
        else:
            try:
                seqs.append([int(x) for x in line.split()])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected integers, got {line[:40]!r}") from None
    if not seqs:
        raise ValueError(f"{path}: no input sequences")
    return seqs
