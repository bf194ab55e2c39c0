"""Per-layer elimination rates and retained word-vector counts.

The elimination profile is the ratio of successive fitted layer metrics,
clamped to at most one; the first non-decreasing step halts elimination for
the rest of the stack. A scalar speedup coefficient scales the profile into
realised rates, which can be changed after the fact without re-profiling.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .acc import AccProfile

PINNED_POLICIES = ("first", "last", "none")

# fine-tuning band for realised rates; only reported, never enforced
RATE_BAND = (0.77, 0.97)

# absorbs float error in alpha*t before flooring (0.29 * 100 -> 28.999999999999996)
_FLOOR_EPS = 1e-9


class NonPositiveAccError(ValueError):
    pass


def elimination_profile(acc: AccProfile | Sequence[float]) -> tuple[np.ndarray, int | None]:
    """Return ``(alpha_ep, halted_at)`` from a fitted profile or raw fitted values.

    ``halted_at`` is the 1-based layer number where elimination stopped, or None.
    """
    p = acc.p_acc if isinstance(acc, AccProfile) else np.asarray(acc, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("need at least one fitted layer value")
    bad = np.flatnonzero(p <= 0)
    if bad.size:
        raise NonPositiveAccError(
            f"non-positive fitted ACC at layer(s) {(bad + 1).tolist()}: {p[bad].tolist()}"
        )
    alpha = np.ones_like(p)
    halted_at = None
    for l in range(1, p.size):
        ratio = p[l] / p[l - 1]
        if ratio >= 1.0:
            halted_at = l + 1
            break
        alpha[l] = ratio
    return alpha, halted_at


@dataclass(frozen=True)
class PruneSchedule:
    alpha_ep: tuple[float, ...]
    alpha_sc: float
    alpha_er: tuple[float, ...]
    halted_at: int | None = None
    pinned_policy: str = "first"

    @property
    def num_layers(self) -> int:
        return len(self.alpha_ep)

    def out_of_band_layers(self, band: tuple[float, float] = RATE_BAND) -> list[int]:
        lo, hi = band
        return [l for l, r in enumerate(self.alpha_er, start=1) if not lo <= r <= hi]

    def pinned_positions(self, t: int) -> tuple[int, ...]:
        if self.pinned_policy == "first":
            return (0,)
        if self.pinned_policy == "last":
            return (t - 1,)
        return ()

    def to_dict(self) -> dict:
        return {
            "alpha_ep": list(self.alpha_ep),
            "alpha_sc": self.alpha_sc,
            "alpha_er": list(self.alpha_er),
            "halted_at": self.halted_at,
            "pinned_policy": self.pinned_policy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PruneSchedule":
        sched = make_schedule(d["alpha_ep"], d["alpha_sc"], d.get("pinned_policy", "first"),
                              halted_at=d.get("halted_at"))
        if "alpha_er" in d and not np.allclose(sched.alpha_er, d["alpha_er"], rtol=0, atol=1e-12):
            raise ValueError("alpha_er in file disagrees with min(1, alpha_ep * alpha_sc)")
        return sched

    def save_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load_json(cls, path: str | os.PathLike) -> "PruneSchedule":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def make_schedule(alpha_ep: Sequence[float], alpha_sc: float, pinned_policy: str = "first",
                  halted_at: int | None = None) -> PruneSchedule:
    if not alpha_sc > 0:
        raise ValueError(f"alpha_sc must be positive, got {alpha_sc}")
    if pinned_policy not in PINNED_POLICIES:
        raise ValueError(f"pinned_policy must be one of {PINNED_POLICIES}, got {pinned_policy!r}")
    ep = tuple(float(x) for x in alpha_ep)
    if not ep or any(not 0 < x <= 1 for x in ep):
        raise ValueError(f"alpha_ep entries must lie in (0, 1]: {ep}")
    er = tuple(min(1.0, x * float(alpha_sc)) for x in ep)
    return PruneSchedule(ep, float(alpha_sc), er, halted_at, pinned_policy)


def schedule_from_profile(profile: AccProfile, alpha_sc: float,
                          pinned_policy: str = "first") -> PruneSchedule:
    alpha_ep, halted_at = elimination_profile(profile)
    return make_schedule(alpha_ep, alpha_sc, pinned_policy, halted_at)


def identity_schedule(num_layers: int, pinned_policy: str = "first") -> PruneSchedule:
    return make_schedule([1.0] * num_layers, 1.0, pinned_policy)


@dataclass(frozen=True)
class RetentionPlan:
    t: tuple[int, ...]

    @property
    def input_length(self) -> int:
        return self.t[0]

    @property
    def num_layers(self) -> int:
        return len(self.t) - 1


def retention_plan(schedule: PruneSchedule | Sequence[float], input_length: int) -> RetentionPlan:
    """Counts ``t[l] = max(1, floor(alpha_er[l] * t[l-1]))`` with ``t[0] = T``."""
    if input_length < 1:
        raise ValueError("input length must be at least 1")
    rates = schedule.alpha_er if isinstance(schedule, PruneSchedule) else schedule
    t = [int(input_length)]
    for r in rates:
        t.append(max(1, math.floor(r * t[-1] + _FLOOR_EPS)))
    return RetentionPlan(tuple(t))
