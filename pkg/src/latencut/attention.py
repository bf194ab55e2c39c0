"""Multi-head self-attention, with optional Sort/Eliminate word-vector pruning.

The pruned variant scores every position from the attention probabilities,
keeps the ``keep`` best rows of the attention output (and of the residual
stream that will be added to it), and drops the rest before the output
projection. Kept rows always stay in their original relative order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .acc import score_vector
from .model_io import LayerWeights, ModelConfig
from .tensor import DTYPE, linear, matmul, softmax_rows

POLICIES = ("sv_sort", "random_sort", "tail_truncate")
PLACEMENTS = ("post_concat", "mid_attention")

_MASKED = DTYPE(-1e30)


@dataclass(frozen=True)
class EliminationOutcome:
    kept_indices: np.ndarray
    context: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class AttentionResult:
    output: np.ndarray
    residual: np.ndarray
    scores: np.ndarray
    outcome: EliminationOutcome
    probs: np.ndarray


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    t, h = x.shape
    return np.ascontiguousarray(x.reshape(t, num_heads, h // num_heads).transpose(1, 0, 2))


def concat_heads(x: np.ndarray) -> np.ndarray:
    a, t, d = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(t, a * d))


def _check_hidden(hidden: np.ndarray, config: ModelConfig) -> None:
    if hidden.ndim != 2 or hidden.shape[1] != config.hidden_size:
        raise ValueError(f"hidden state must be T x {config.hidden_size}, got {hidden.shape}")
    if hidden.shape[0] < 1:
        raise ValueError("attention needs at least one position")


def _probs_from_heads(q: np.ndarray, k: np.ndarray, causal: bool) -> np.ndarray:
    logits = matmul(q, k.transpose(0, 2, 1)) * DTYPE(1.0 / np.sqrt(q.shape[-1]))
    if causal:
        t = logits.shape[-1]
        upper = np.triu(np.ones((t, t), dtype=bool), k=1)
        logits = np.where(upper, _MASKED, logits)
        return np.where(upper, DTYPE(0.0), softmax_rows(logits))
    return softmax_rows(logits)


def project_heads(hidden: np.ndarray, lw: LayerWeights, config: ModelConfig):
    """Per-head query, key and value stacks, each (heads, T, head_dim)."""
    _check_hidden(hidden, config)
    a = config.num_heads
    q = _split_heads(linear(hidden, lw.q_w, lw.q_b), a)
    k = _split_heads(linear(hidden, lw.k_w, lw.k_b), a)
    v = _split_heads(linear(hidden, lw.v_w, lw.v_b), a)
    return q, k, v


def attention_probs(hidden: np.ndarray, lw: LayerWeights, config: ModelConfig,
                    mode: str = "encoder") -> np.ndarray:
    """Row-stochastic attention matrices, shape (heads, T, T)."""
    _check_hidden(hidden, config)
    a = config.num_heads
    q = _split_heads(linear(hidden, lw.q_w, lw.q_b), a)
    k = _split_heads(linear(hidden, lw.k_w, lw.k_b), a)
    return _probs_from_heads(q, k, mode == "decoder")


def attention_context(probs: np.ndarray, v_heads: np.ndarray, o_w: np.ndarray,
                      o_b: np.ndarray) -> np.ndarray:
    """Per-head ``probs @ V``, concatenated across heads, then output-projected."""
    if probs.ndim != 3 or v_heads.ndim != 3 or probs.shape[0] != v_heads.shape[0]:
        raise ValueError(f"head mismatch: probs {probs.shape}, values {v_heads.shape}")
    return linear(concat_heads(matmul(probs, v_heads)), o_w, o_b)


def self_attention(hidden: np.ndarray, lw: LayerWeights, config: ModelConfig,
                   mode: str = "encoder") -> tuple[np.ndarray, np.ndarray]:
    """Unpruned attention sublayer output (T x H) and its probabilities."""
    q, k, v = project_heads(hidden, lw, config)
    probs = _probs_from_heads(q, k, mode == "decoder")
    return attention_context(probs, v, lw.o_w, lw.o_b), probs


def select_positions(scores: np.ndarray, keep: int, pinned: Iterable[int] = (),
                     policy: str = "sv_sort", seed: int | None = None) -> np.ndarray:
    """Ascending indices of the ``keep`` surviving positions.

    ``sv_sort`` fills the non-pinned quota by descending score, ties going to
    the lower index. ``random_sort`` samples the quota uniformly (seed
    required). ``tail_truncate`` fills it with the earliest non-pinned
    positions, i.e. drops the tail.
    """
    scores = np.asarray(scores)
    t = scores.shape[0]
    pinned = sorted(set(int(p) for p in pinned))
    if any(p < 0 or p >= t for p in pinned):
        raise ValueError(f"pinned positions {pinned} out of range for T={t}")
    if not len(pinned) <= keep <= t or keep < 1:
        raise ValueError(f"keep={keep} must satisfy max(1, |pinned|={len(pinned)}) <= keep <= T={t}")

    quota = keep - len(pinned)
    pinned_mask = np.zeros(t, dtype=bool)
    pinned_mask[pinned] = True
    candidates = np.flatnonzero(~pinned_mask)

    if policy == "sv_sort":
        order = np.lexsort((candidates, -scores[candidates]))
        chosen = candidates[order[:quota]]
    elif policy == "random_sort":
        if seed is None:
            raise ValueError("random_sort needs an explicit seed")
        rng = np.random.default_rng(seed)
        chosen = rng.choice(candidates, size=quota, replace=False)
    elif policy == "tail_truncate":
        chosen = candidates[:quota]
    else:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")

    pinned_mask[chosen] = True
    return np.flatnonzero(pinned_mask)


def sort_eliminate(context: np.ndarray, residual_in: np.ndarray, scores: np.ndarray, keep: int,
                   pinned: Iterable[int] = (), policy: str = "sv_sort",
                   seed: int | None = None) -> tuple[EliminationOutcome, np.ndarray]:
    if context.shape[0] != residual_in.shape[0] or context.shape[0] != len(scores):
        raise ValueError(
            f"row mismatch: context {context.shape}, residual {residual_in.shape}, scores {len(scores)}"
        )
    kept = select_positions(scores, keep, pinned, policy, seed)
    outcome = EliminationOutcome(kept, context[kept], np.asarray(scores))
    return outcome, residual_in[kept]


def proposed_attention_forward(hidden: np.ndarray, residual_in: np.ndarray, lw: LayerWeights,
                               config: ModelConfig, mode: str = "encoder", keep: int | None = None,
                               pinned: Iterable[int] = (), policy: str = "sv_sort",
                               placement: str = "post_concat",
                               seed: int | None = None) -> AttentionResult:
    """Attention with Sort/Eliminate; returns the pruned output and matching residual rows.

    ``post_concat`` selects rows of the concatenated head outputs, so every
    head still computes ``probs @ V`` for all positions. ``mid_attention``
    selects first and only multiplies the kept probability rows. Both feed the
    same rows into the output projection.
    """
    t = hidden.shape[0]
    keep = t if keep is None else keep
    q, k, v = project_heads(hidden, lw, config)
    probs = _probs_from_heads(q, k, mode == "decoder")
    sv = score_vector(probs, mode)

    if placement == "post_concat":
        ctx = concat_heads(matmul(probs, v))
        outcome, residual = sort_eliminate(ctx, residual_in, sv, keep, pinned, policy, seed)
    elif placement == "mid_attention":
        kept = select_positions(sv, keep, pinned, policy, seed)
        if residual_in.shape[0] != t:
            raise ValueError(f"residual has {residual_in.shape[0]} rows, expected {t}")
        ctx = concat_heads(matmul(np.ascontiguousarray(probs[:, kept, :]), v))
        outcome, residual = EliminationOutcome(kept, ctx, sv), residual_in[kept]
    else:
        raise ValueError(f"unknown placement {placement!r}; expected one of {PLACEMENTS}")

    out = linear(outcome.context, lw.o_w, lw.o_b)
    return AttentionResult(out, residual, sv, outcome, probs)
