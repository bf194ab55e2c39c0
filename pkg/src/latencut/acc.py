"""Score vectors, the per-layer contribution metric, and its quadratic fit.

A score vector is the column sum of the head-averaged attention probability
matrix: entry ``i`` says how much position ``i`` feeds the attention output of
the layer. The layer metric is the median of that vector. Because every
attention row sums to one, an encoder score vector always averages to one, so
a median well below one means a handful of positions carry most of the layer.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


def causal_column_counts(t: int) -> np.ndarray:
    """Structural non-zero count of each column of a full lower-triangular mask."""
    return np.arange(t, 0, -1, dtype=np.float64)


def score_vector(probs: np.ndarray, mode: str = "encoder") -> np.ndarray:
    """Column sums of the head-averaged attention matrix, length T, float64.

    ``probs`` is (heads, T, T) or a single (T, T) matrix. In decoder mode each
    entry is divided by the number of rows allowed to attend to that column
    under the causal mask (``T - i``), regardless of the numeric values.
    """
    p = np.asarray(probs)
    if p.ndim == 2:
        p = p[None]
    if p.ndim != 3 or p.shape[1] != p.shape[2]:
        raise ValueError(f"expected square attention matrices, got {np.shape(probs)}")
    # head sum in float32 (few terms), column sums accumulated in float64
    sv = p.sum(axis=0).sum(axis=0, dtype=np.float64) / p.shape[0]
    if mode == "decoder":
        sv = sv / causal_column_counts(p.shape[-1])
    elif mode != "encoder":
        raise ValueError(f"unknown mode {mode!r}")
    return sv


def acc_of_layer(sv: Sequence[float]) -> float:
    sv = np.asarray(sv, dtype=np.float64)
    if sv.size == 0:
        raise ValueError("empty score vector")
    return float(np.median(sv))


@dataclass(frozen=True)
class AccProfile:
    e_acc: tuple[float, ...]
    a: float
    b: float
    c: float
    degenerate: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.e_acc)

    @property
    def p_acc(self) -> np.ndarray:
        l = np.arange(1, self.num_layers + 1, dtype=np.float64)
        return self.a * l * l + self.b * l + self.c

    def to_dict(self) -> dict:
        return {
            "layers": self.num_layers,
            "e_acc": list(self.e_acc),
            "fit": {"a": self.a, "b": self.b, "c": self.c},
            "p_acc": self.p_acc.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AccProfile":
        e_acc = tuple(float(x) for x in d["e_acc"])
        if "layers" in d and int(d["layers"]) != len(e_acc):
            raise ValueError(f"profile declares {d['layers']} layers but has {len(e_acc)} values")
        fit = d.get("fit")
        if fit is None:
            return fit_quadratic(e_acc)
        return cls(e_acc, float(fit["a"]), float(fit["b"]), float(fit["c"]),
                   degenerate=len(e_acc) < 3)

    def save_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def save_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["layer", "e_acc", "p_acc"])
            for l, (e, p) in enumerate(zip(self.e_acc, self.p_acc), start=1):
                w.writerow([l, repr(e), repr(float(p))])

    @classmethod
    def load_json(cls, path: str | os.PathLike) -> "AccProfile":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def fit_quadratic(e_acc: Sequence[float]) -> AccProfile:
    """Least-squares ``a*l**2 + b*l + c`` over layers ``l = 1..L``.

    With fewer than three layers the fit collapses to the mean and the profile
    is flagged ``degenerate``.
    """
    y = np.asarray(e_acc, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("need at least one per-layer value to fit")
    if y.size < 3:
        log.warning("only %d layers; falling back to a constant fit", y.size)
        return AccProfile(tuple(y.tolist()), 0.0, 0.0, float(y.mean()), degenerate=True)
    l = np.arange(1, y.size + 1, dtype=np.float64)
    vander = np.stack([l * l, l, np.ones_like(l)], axis=1)
    (a, b, c), *_ = np.linalg.lstsq(vander, y, rcond=None)
    return AccProfile(tuple(y.tolist()), float(a), float(b), float(c))


def profile_model(
    model,
    inputs: Sequence[Sequence[int]],
    mode: str | None = None,
    on_scores: Callable[[int, np.ndarray], None] | None = None,
) -> AccProfile:
    """Run unpruned passes and average each layer's median score across ``inputs``.

    ``on_scores(layer, sv)`` is called with every score vector as it is produced.
    """
    from .runner import run_stack

    if len(inputs) == 0:
        raise ValueError("profile_model needs at least one input sequence")
    mode = mode or model.config.mode
    totals = np.zeros(model.config.num_layers, dtype=np.float64)

    for ids in inputs:
        def observe(layer: int, probs: np.ndarray) -> None:
            sv = score_vector(probs, mode)
            if on_scores is not None:
                on_scores(layer, sv)
            totals[layer] += acc_of_layer(sv)

        run_stack(model, ids, mode=mode, on_probs=observe)
    return fit_quadratic(totals / len(inputs))
