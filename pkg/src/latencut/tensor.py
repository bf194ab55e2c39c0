"""Dense float32 kernels shared by the attention stack, plus an opt-in FLOP tracer.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float32 (stacks of
matrices are accepted where noted). Every kernel is pure: it never mutates its
inputs and returns a fresh array.

FLOP accounting follows the layer table conventions used by the cost model:
a matrix product costs ``2*m*n*k`` and a layer-normalisation costs 7 FLOPs per
element. Bias adds, activations, softmax and residual adds are free.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
import os
from collections import defaultdict
from typing import Iterator

import numpy as np

DTYPE = np.float32

# tanh-approximation GELU constants
GELU_COEF = 0.044715
GELU_SCALE = math.sqrt(2.0 / math.pi)

LAYER_NORM_FLOPS_PER_ELEMENT = 7

THREADS_ENV = "LATENCUT_THREADS"


class FlopTrace:
    """Per-run FLOP accumulator keyed by scope label."""

    def __init__(self) -> None:
        self.by_scope: dict[str, int] = defaultdict(int)
        self._stack: list[str] = []

    @property
    def current_scope(self) -> str:
        return ".".join(self._stack) if self._stack else "unscoped"

    def add(self, flops: int) -> None:
        self.by_scope[self.current_scope] += int(flops)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def total_for(self, prefix: str) -> int:
        return sum(
            v for k, v in self.by_scope.items() if k == prefix or k.startswith(prefix + ".")
        )


_active_trace: contextvars.ContextVar[FlopTrace | None] = contextvars.ContextVar(
    "latencut_flop_trace", default=None
)


@contextlib.contextmanager
def counting() -> Iterator[FlopTrace]:
    """Enable FLOP counting for kernels called inside the block."""
    trace = FlopTrace()
    token = _active_trace.set(trace)
    try:
        yield trace
    finally:
        _active_trace.reset(token)


@contextlib.contextmanager
def scope(name: str) -> Iterator[None]:
    trace = _active_trace.get()
    if trace is None:
        yield
        return
    trace._stack.append(name)
    try:
        yield
    finally:
        trace._stack.pop()


def _record(flops: int) -> None:
    trace = _active_trace.get()
    if trace is not None:
        trace.add(flops)


def configure_threads(n: int | None = None):
    """Cap BLAS threads (``LATENCUT_THREADS``, default 1). Returns the limiter or None."""
    if n is None:
        n = int(os.environ.get(THREADS_ENV, "1"))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


def as_matrix(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product; also accepts equally-batched stacks ``(..., m, k) @ (..., k, n)``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch mismatch: {a.shape} x {b.shape}")
    m, k = a.shape[-2:]
    n = b.shape[-1]
    batch = math.prod(a.shape[:-2])
    out = np.matmul(a.astype(DTYPE, copy=False), b.astype(DTYPE, copy=False))
    _record(2 * batch * m * n * k)
    return out


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Affine map ``x @ w.T + b`` with ``w`` stored as (out_features, in_features)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear dimension mismatch: input {x.shape}, weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"linear bias shape {b.shape} does not match weight {w.shape}")
    x2 = np.atleast_2d(x)
    out = matmul(x2, w.T)
    if b is not None:
        out = out + b
    return out.reshape(*x.shape[:-1], w.shape[0])


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction."""
    shifted = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / np.sum(e, axis=-1, keepdims=True)).astype(DTYPE, copy=False)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ValueError(f"layer_norm parameter shape mismatch for input {x.shape}")
    mean = np.mean(x, axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    out = centered / np.sqrt(var + DTYPE(eps)) * gain + bias
    _record(LAYER_NORM_FLOPS_PER_ELEMENT * x.size)
    return out.astype(DTYPE, copy=False)


def gelu(x: np.ndarray) -> np.ndarray:
    x = x.astype(DTYPE, copy=False)
    inner = DTYPE(GELU_SCALE) * (x + DTYPE(GELU_COEF) * x * x * x)
    return DTYPE(0.5) * x * (DTYPE(1.0) + np.tanh(inner))


def tanh_map(x: np.ndarray) -> np.ndarray:
    return np.tanh(x.astype(DTYPE, copy=False))
