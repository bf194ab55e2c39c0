"""Analytic FLOP table, processed word-vector arithmetic and speedup estimates.

Two attention-score variants are carried side by side. ``paper`` uses the
printed table term ``6LTH^2 + 2HTL^2``, which reproduces the published
shares. ``corrected`` replaces ``2HTL^2`` with ``4LT^2H`` (``QK^T`` plus
``probs @ V``) and is what the instrumented counter measures.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .model_io import ModelConfig
from .schedule import RetentionPlan, retention_plan
from .tensor import FlopTrace

VARIANTS = ("paper", "corrected")

# (layer group, sublayer) in table order
SUBLAYERS = (
    ("embedding", "embedding"),
    ("encoder", "attention_self"),
    ("encoder", "attention_output"),
    ("encoder", "intermediate"),
    ("encoder", "output"),
    ("classifier", "pooler"),
    ("classifier", "classifier_output"),
)

SHARE_GROUPS = {
    "embedding": ("embedding",),
    "attention_self": ("attention_self",),
    "feed_forward": ("attention_output", "intermediate", "output"),
    "classifier": ("pooler", "classifier_output"),
}


@dataclass
class CostReport:
    variant: str
    seq_len: int
    flops: dict[str, float]
    attention_self_paper: float
    attention_self_corrected: float
    total: float
    shares: dict[str, float]
    pw_per_layer: list[float] | None = None
    pw_total: float | None = None
    pw_baseline: float | None = None
    k_speedup: float | None = None
    instrumented_total: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def encoder_total(self) -> float:
        return sum(self.flops[s] for g, s in SUBLAYERS if g == "encoder")

    def with_plan(self, plan: RetentionPlan) -> "CostReport":
        per_layer, total = processed_words(plan)
        self.pw_per_layer = per_layer
        self.pw_total = total
        self.pw_baseline = float(plan.input_length * plan.num_layers)
        self.k_speedup = self.pw_baseline / total
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple[str, str, float, float]]:
        return [(g, s, self.flops[s], self.flops[s] / self.total) for g, s in SUBLAYERS]

    def save_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def save_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["layer", "sublayer", "analytic_flops", "share"])
            for row in self.rows():
                w.writerow([row[0], row[1], f"{row[2]:.0f}", repr(row[3])])


def analytic_flops(config: ModelConfig, seq_len: int, variant: str = "paper") -> CostReport:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    T, L, H = float(seq_len), float(config.num_layers), float(config.hidden_size)
    I, N = float(config.intermediate_size), float(config.num_labels)

    att_paper = 6 * L * T * H**2 + 2 * H * T * L**2
    att_corrected = 6 * L * T * H**2 + 4 * L * T**2 * H
    flops = {
        "embedding": 7 * T * H,
        "attention_self": att_paper if variant == "paper" else att_corrected,
        "attention_output": 2 * L * T * H**2,
        "intermediate": 2 * L * T * H * I,
        "output": 2 * L * T * I * H,
        "pooler": 2 * H**2,
        "classifier_output": 2 * H * N,
    }
    total = sum(flops.values())
    shares = {g: sum(flops[s] for s in members) / total for g, members in SHARE_GROUPS.items()}
    return CostReport(variant, int(seq_len), flops, att_paper, att_corrected, total, shares)


def processed_words(plan: RetentionPlan) -> tuple[list[float], float]:
    """Per-layer effective workload ``(t[l-1] + 3*t[l]) / 4`` and its sum."""
    t = plan.t
    per_layer = [(t[l - 1] + 3 * t[l]) / 4 for l in range(1, len(t))]
    return per_layer, float(sum(per_layer))


def _bracket(alpha_ep) -> float:
    a = np.asarray(alpha_ep, dtype=np.float64)
    prods = np.cumprod(a)
    return 0.25 + float(prods[:-1].sum()) + 0.75 * float(prods[-1])


def closed_form_pw(alpha_ep, seq_len: float, num_layers: int | None = None) -> float:
    """Continuous (floor-free) processed word-vector total."""
    if num_layers is not None and len(alpha_ep) != num_layers:
        raise ValueError(f"alpha_ep has {len(alpha_ep)} entries, expected {num_layers}")
    return float(seq_len) * _bracket(alpha_ep)


def estimate_speedup(alpha_ep, num_layers: int | None = None) -> float:
    L = len(alpha_ep)
    if num_layers is not None and L != num_layers:
        raise ValueError(f"alpha_ep has {L} entries, expected {num_layers}")
    prods = np.cumprod(np.asarray(alpha_ep, dtype=np.float64))
    return 4.0 * L / (1.0 + 4.0 * float(prods[:-1].sum()) + 3.0 * float(prods[-1]))


def discrete_speedup(alpha_er, seq_len: int) -> float:
    """``T*L / PW`` from the floored retention plan."""
    plan = retention_plan(list(alpha_er), seq_len)
    return plan.input_length * plan.num_layers / processed_words(plan)[1]


def speedup_report(alpha_ep, seq_len: int) -> dict:
    """Closed-form speedup next to the floored-plan value, with their gap."""
    formula = estimate_speedup(alpha_ep)
    discrete = discrete_speedup(alpha_ep, seq_len)
    return {
        "layers": len(alpha_ep),
        "seq_len": seq_len,
        "formula_speedup": formula,
        "discrete_speedup": discrete,
        "difference": discrete - formula,
        "relative_difference": (discrete - formula) / formula,
    }


def instrumented_count(trace: FlopTrace | None, prefix: str | None = None) -> float | None:
    """Total counted FLOPs, optionally restricted to scopes under ``prefix``."""
    if trace is None:
        return None
    return float(trace.total if prefix is None else trace.total_for(prefix))
