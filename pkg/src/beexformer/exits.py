"""Exit heads, logit entropy and the fractional-entropy-reduction exit rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .backbone import transformer_block
from .embedding import EmbeddedSequence
from .errors import ContractError

ENTROPY_FLOOR = 1e-12


def pool_mean(h: Tensor, pad_mask: np.ndarray) -> Tensor:
    """Mean over non-pad positions: ``(B, L, D) -> (B, D)``."""
    keep = ~np.asarray(pad_mask, dtype=bool)
    counts = keep.sum(axis=-1)
    if np.any(counts == 0):
        raise ContractError("exit head received a sequence with no real tokens")
    weights = keep / counts[:, None]
    return (h * Tensor(weights[:, :, None])).sum(axis=1)


def exit_head_forward(h: Tensor, ctx, index: int, pad_mask: np.ndarray) -> Tensor:
    """Class logits ``(B, m)`` from the exit head attached to block ``index``."""
    pooled = pool_mean(h, pad_mask)
    hidden = ag.tanh(ctx.bilinear(pooled, f"head{index}.w1"))
    return ctx.bilinear(hidden, f"head{index}.w2") + ctx.fp(f"head{index}.bias")


def entropy(logits) -> np.ndarray:
    """Shannon entropy (nats) of softmax(logits) along the last axis.

    Uses the log-sum-exp form, max-shifted, so any finite logits are safe.
    """
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    s = z - z.max(axis=-1, keepdims=True)
    e = np.exp(s)
    total = e.sum(axis=-1)
    return np.log(total) - (s * e).sum(axis=-1) / total


def entropy_direct(logits) -> np.ndarray:
    """-sum p ln p, evaluated literally (reference form, used as an oracle)."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def fractional_reduction(s_prev: float, s_curr: float) -> float:
    if s_prev <= ENTROPY_FLOOR:
        return -math.inf
    return (s_prev - s_curr) / s_prev


def exit_decision(s_prev: float, s_curr: float, delta: float) -> bool:
    """True when the relative entropy drop since the previous exit is below ``delta``."""
    return fractional_reduction(s_prev, s_curr) < delta


def select_exit(entropies, num_classes: int, delta: float) -> int:
    """Position (1-based) in ``entropies`` where the rule first fires; last if never."""
    prev = math.log(num_classes)
    for i, s in enumerate(entropies, 1):
        if exit_decision(prev, float(s), delta):
            return i
        prev = float(s)
    return len(entropies)


@dataclass
class ExitTrace:
    entropies: list[float]
    reductions: list[float]
    exit_index: int
    logits: list[float]
    flops: float = 0.0
    flops_adjusted: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "entropies": self.entropies,
            "reductions": [r if math.isfinite(r) else None for r in self.reductions],
            "exit_index": self.exit_index,
            "logits": self.logits,
            "flops": self.flops,
            "flops_adjusted": self.flops_adjusted,
            **self.extra,
        }


def infer_with_exit(x: EmbeddedSequence, model, delta: float, seq_len: int | None = None,
                    ctx=None) -> tuple[np.ndarray, ExitTrace]:
    """Run blocks one at a time and stop as soon as the exit rule fires.

    ``x`` holds a single sequence, either ``(L, D)`` or ``(1, L, D)``.
    Returns the class probabilities at the chosen exit and its trace.  A
    model without intermediate heads always runs to the last block.
    """
    from .accounting import count_flops

    cfg = model.config
    ctx = ctx if ctx is not None else model.context()
    values, pad = x.values, np.asarray(x.pad_mask)
    if values.ndim == 2:
        values, pad = values.reshape(1, *values.shape), pad[None]
    if values.shape[0] != 1:
        raise ContractError("infer_with_exit handles one sequence at a time")

    heads = set(cfg.exit_blocks)
    prev = math.log(cfg.num_classes)
    entropies, reductions = [], []
    h = values
    logits = None
    exit_index = cfg.num_blocks
    for c in range(1, cfg.num_blocks + 1):
        h = transformer_block(h, ctx, c, pad, cfg)
        if c not in heads:
            continue
        logits = exit_head_forward(h, ctx, c, pad).data[0]
        s = float(entropy(logits))
        entropies.append(s)
        reductions.append(fractional_reduction(prev, s))
        if len(heads) > 1 and exit_decision(prev, s, delta):
            exit_index = c
            break
        prev = s

    ledger = count_flops(cfg, exit_index if len(heads) > 1 else None, seq_len or values.shape[1])
    probs = ag.softmax(Tensor(logits)).data
    trace = ExitTrace(entropies, reductions, exit_index, logits.tolist(),
                      ledger.nominal, ledger.adjusted)
    return probs, trace


def exit_traces(model, ids: np.ndarray, ctx=None, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Full-depth batched pass: entropies ``(N, E)`` and logits ``(N, E, m)`` at every exit head.

    Blocks never mix samples, so applying :func:`select_exit` to these rows
    gives the same exits as running :func:`infer_with_exit` per sample.
    """
    from .model import forward_exits

    ctx = ctx if ctx is not None else model.context()
    ids = np.atleast_2d(ids)
    all_logits = []
    for start in range(0, len(ids), chunk):
        _, _, logits = forward_exits(model, ids[start:start + chunk], ctx)
        all_logits.append(np.stack([logits[c].data for c in model.config.exit_blocks], axis=1))
    stacked = np.concatenate(all_logits, axis=0)
    return entropy(stacked), stacked


def apply_exit_rule(entropies: np.ndarray, num_classes: int, delta: float) -> np.ndarray:
    """0-based exit-head position chosen for each row of ``entropies``."""
    if entropies.shape[1] == 1:
        return np.zeros(len(entropies), dtype=np.int64)
    return np.array([select_exit(row, num_classes, delta) - 1 for row in entropies], dtype=np.int64)
