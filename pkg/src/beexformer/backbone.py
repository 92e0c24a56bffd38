"""Binarized transformer blocks: attention, the learn-forget recurrence, and the cascade.

All functions take a forward context ``ctx`` that decides how weights and
activations are binarized (see :mod:`beexformer.model`):

* ``ctx.bilinear(x, name)`` -> ``b(x) @ b(W[name])``
* ``ctx.act(x)``            -> ``b(x)`` for activations used elementwise
* ``ctx.fp(name)``          -> a full-precision parameter
* ``ctx.dropout(x)``        -> inverted dropout (identity outside training)

Hidden states are batched as ``(B, L, D)`` and ``pad_mask`` is ``(B, L)``.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ModelConfig
from .embedding import EmbeddedSequence

MASK_VALUE = -1e30


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps) ** 0.5 * gain + bias


def _attention_bias(pad_mask: np.ndarray) -> Tensor:
    # (B, L) -> (B, 1, 1, L); finite so exp() underflows to exactly zero
    return Tensor(np.where(pad_mask, MASK_VALUE, 0.0)[:, None, None, :])


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    b, l, d = x.shape
    return ag.swapaxes(x.reshape(b, l, num_heads, d // num_heads), 1, 2)


def _attend(q: Tensor, k: Tensor, v: Tensor, bias: Tensor, scale: float, ctx) -> Tensor:
    scores = q @ k.T * scale + bias
    return ctx.dropout(ag.softmax(scores, axis=-1)) @ v


def self_attention_head(x: Tensor, ctx, prefix: str, pad_mask: np.ndarray,
                        head: int, num_heads: int) -> Tensor:
    """Real-valued output of one head, ``(B, L, D/H)``.

    Scores are scaled by sqrt(D), the full model width, not sqrt(D/H).
    """
    d = x.shape[-1]
    cols = slice(head * (d // num_heads), (head + 1) * (d // num_heads))
    q = ctx.bilinear(x, f"{prefix}.wq")[..., cols]
    k = ctx.bilinear(x, f"{prefix}.wk")[..., cols]
    v = ctx.bilinear(x, f"{prefix}.wv")[..., cols]
    bias = Tensor(_attention_bias(pad_mask).data[:, 0])
    return _attend(q, k, v, bias, 1.0 / math.sqrt(d), ctx)


def multi_head_attention(x: Tensor, ctx, prefix: str, pad_mask: np.ndarray, num_heads: int) -> Tensor:
    b, l, d = x.shape
    q = _split_heads(ctx.bilinear(x, f"{prefix}.wq"), num_heads)
    k = _split_heads(ctx.bilinear(x, f"{prefix}.wk"), num_heads)
    v = _split_heads(ctx.bilinear(x, f"{prefix}.wv"), num_heads)
    heads = _attend(q, k, v, _attention_bias(pad_mask), 1.0 / math.sqrt(d), ctx)
    merged = ag.swapaxes(heads, 1, 2).reshape(b, l, d)
    return ctx.bilinear(merged, f"{prefix}.wo")


def _slfn_update(sg_in: Tensor, tg_in: Tensor, h_prev: Tensor, ctx, prefix: str,
                 rule: str, share_sh: bool) -> Tensor:
    sg = ag.sigmoid(sg_in + ctx.bilinear(h_prev, f"{prefix}.u_sg"))
    tg = ag.tanh(tg_in + ctx.bilinear(h_prev, f"{prefix}.u_tg"))
    sg_b = ctx.act(sg)
    if rule == "literal":
        return sg_b + sg_b * ctx.act(tg)
    sh = ag.sigmoid(ctx.bilinear(h_prev, f"{prefix}.u_sg" if share_sh else f"{prefix}.u_sh"))
    return ctx.act(sh) * ctx.act(h_prev) + sg_b * ctx.act(tg)


def slfn_step(x_i: Tensor, h_prev: Tensor, ctx, prefix: str,
              rule: str = "literal", share_sh: bool = False) -> Tensor:
    """One step of the learn-forget recurrence: ``(B, D), (B, D_h) -> (B, D_h)``.

    ``rule="literal"`` computes ``b(Sg) + b(Sg)*b(Tg)``; ``"corrected"``
    computes ``b(Sh)*b(h_prev) + b(Sg)*b(Tg)``.
    """
    sg_in = ctx.bilinear(x_i, f"{prefix}.w_sg")
    tg_in = ctx.bilinear(x_i, f"{prefix}.w_tg")
    return _slfn_update(sg_in, tg_in, h_prev, ctx, prefix, rule, share_sh)


def slfn_scan(u: Tensor, ctx, prefix: str, cfg: ModelConfig) -> Tensor:
    """Run the recurrence left to right from a zero state; returns ``(B, L, D_h)``."""
    b, l, _ = u.shape
    sg_in = ctx.bilinear(u, f"{prefix}.w_sg")
    tg_in = ctx.bilinear(u, f"{prefix}.w_tg")
    h = Tensor(np.zeros((b, cfg.slfn_dim)))
    states = []
    for i in range(l):
        h = _slfn_update(sg_in[:, i], tg_in[:, i], h, ctx, prefix, cfg.slfn_rule, cfg.share_sh_weight)
        states.append(h)
    return ag.stack(states, axis=1)


def transformer_block(h_prev: Tensor, ctx, index: int, pad_mask: np.ndarray, cfg: ModelConfig) -> Tensor:
    prefix = f"block{index}"
    attn = multi_head_attention(h_prev, ctx, f"{prefix}.attn", pad_mask, cfg.num_heads)
    u = layer_norm(h_prev + attn, ctx.fp(f"{prefix}.ln1.gain"), ctx.fp(f"{prefix}.ln1.bias"), cfg.ln_eps)
    if not cfg.use_slfn:
        return u
    states = ctx.dropout(slfn_scan(u, ctx, f"{prefix}.slfn", cfg))
    proj = ctx.bilinear(states, f"{prefix}.slfn.proj")
    return layer_norm(u + proj, ctx.fp(f"{prefix}.ln2.gain"), ctx.fp(f"{prefix}.ln2.bias"), cfg.ln_eps)


def backbone_forward(x: EmbeddedSequence, ctx, cfg: ModelConfig, num_blocks: int | None = None) -> list[Tensor]:
    """Apply blocks 1..C in order and return every intermediate hidden state."""
    h = x.values
    hiddens = []
    for c in range(1, (num_blocks or cfg.num_blocks) + 1):
        h = transformer_block(h, ctx, c, x.pad_mask, cfg)
        hiddens.append(h)
    return hiddens
