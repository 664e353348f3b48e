"""Multi-head attention and post-norm transformer layers.

Positional terms are added to the query/key inputs only; values never see
them.  Attention projections are bias-free (see README, "Model notes").
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor


@dataclass
class MhaParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int

    @property
    def d(self):
        return self.w_q.shape[0]

    @classmethod
    def from_tensors(cls, tensors, prefix, heads):
        return cls(*(tensors[f"{prefix}.{k}"] for k in ("w_q", "w_k", "w_v", "w_o")), heads=heads)


@dataclass
class FfnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def from_tensors(cls, tensors, prefix):
        return cls(*(tensors[f"{prefix}.{k}"] for k in ("w1", "b1", "w2", "b2")))

    def __call__(self, x):
        return T.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2


@dataclass
class NormParams:
    gain: Tensor
    bias: Tensor
    eps: float = 1e-5

    @classmethod
    def from_tensors(cls, tensors, prefix, eps=1e-5):
        return cls(tensors[f"{prefix}.gain"], tensors[f"{prefix}.bias"], eps)

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias, self.eps)


@dataclass
class EncoderLayerParams:
    self_attn: MhaParams
    ffn: FfnParams
    norm1: NormParams
    norm2: NormParams

    @classmethod
    def from_tensors(cls, tensors, prefix, heads, eps=1e-5):
        return cls(
            MhaParams.from_tensors(tensors, f"{prefix}.self_attn", heads),
            FfnParams.from_tensors(tensors, f"{prefix}.ffn"),
            NormParams.from_tensors(tensors, f"{prefix}.norm1", eps),
            NormParams.from_tensors(tensors, f"{prefix}.norm2", eps),
        )


@dataclass
class DecoderLayerParams:
    """``self_attn``/``norm1`` are ``None`` for layers whose self-attention is
    always skipped."""

    self_attn: Optional[MhaParams]
    cross_attn: MhaParams
    ffn: FfnParams
    norm1: Optional[NormParams]
    norm2: NormParams
    norm3: NormParams

    @classmethod
    def from_tensors(cls, tensors, prefix, heads, eps=1e-5):
        has_self = f"{prefix}.self_attn.w_q" in tensors
        return cls(
            MhaParams.from_tensors(tensors, f"{prefix}.self_attn", heads) if has_self else None,
            MhaParams.from_tensors(tensors, f"{prefix}.cross_attn", heads),
            FfnParams.from_tensors(tensors, f"{prefix}.ffn"),
            NormParams.from_tensors(tensors, f"{prefix}.norm1", eps) if has_self else None,
            NormParams.from_tensors(tensors, f"{prefix}.norm2", eps),
            NormParams.from_tensors(tensors, f"{prefix}.norm3", eps),
        )


def _check_rows(name, x, d):
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionError(f"{name} must have shape [n x {d}], got {x.shape}")


def multi_head_attention(q_in, k_in, v_in, q_pos, k_pos, params, trace=None, tag="attn"):
    """softmax((q_in+q_pos)Wq ((k_in+k_pos)Wk)^T / sqrt(d/heads)) v_in Wv, per
    head, heads concatenated then projected by Wo.

    ``q_pos``/``k_pos`` may be ``None``.  When ``trace`` is a dict, the
    per-head attention weights are stored under ``tag``.
    """
    d = params.d
    if d % params.heads:
        raise ConfigurationError(f"model dim {d} is not divisible by {params.heads} heads")
    for name, x in (("q_in", q_in), ("k_in", k_in), ("v_in", v_in)):
        _check_rows(name, x, d)
    if k_in.shape != v_in.shape:
        raise DimensionError(f"key/value shapes differ: {k_in.shape} vs {v_in.shape}")
    if q_pos is not None and q_pos.shape != q_in.shape:
        raise DimensionError(f"q_pos shape {q_pos.shape} != q_in shape {q_in.shape}")
    if k_pos is not None and k_pos.shape != k_in.shape:
        raise DimensionError(f"k_pos shape {k_pos.shape} != k_in shape {k_in.shape}")

    q = (q_in if q_pos is None else q_in + q_pos) @ params.w_q
    k = (k_in if k_pos is None else k_in + k_pos) @ params.w_k
    v = v_in @ params.w_v
    dk = d // params.heads
    scale = 1.0 / math.sqrt(dk)
    outputs, weights = [], []
    for h in range(params.heads):
        cols = slice(h * dk, (h + 1) * dk)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        attn = T.softmax_lastdim((qh @ kh.T) * scale)
        weights.append(attn)
        outputs.append(attn @ vh)
    if trace is not None:
        trace[tag] = [w.numpy() for w in weights]
    merged = outputs[0] if params.heads == 1 else T.concat(outputs, axis=1)
    return merged @ params.w_o


def encoder_layer_forward(x, pos, params, trace=None, tag="enc"):
    attn = multi_head_attention(x, x, x, pos, pos, params.self_attn, trace, f"{tag}.self")
    x = params.norm1(x + attn)
    return params.norm2(x + params.ffn(x))


def encoder_forward(z_src, pos, layers, trace=None):
    """Stack of encoder layers.  An empty stack is the identity."""
    _check_rows("z_src", z_src, z_src.shape[1] if z_src.ndim == 2 else -1)
    if pos.shape != z_src.shape:
        raise DimensionError(f"positional encoding shape {pos.shape} != tokens {z_src.shape}")
    z = z_src
    for i, layer in enumerate(layers):
        z = encoder_layer_forward(z, pos, layer, trace, f"encoder.{i}")
    return z


def decoder_layer_forward(prev, query_pos, memory, memory_pos, params, skip_self=False,
                          self_value_override=None, self_qk_override=None,
                          trace=None, tag="dec"):
    """One post-norm decoder layer: self-attention, cross-attention, FFN.

    With ``self_qk_override`` the self-attention query/key input is that
    tensor (no positional term) and the residual is taken from it; with
    ``self_value_override`` the value input is replaced.  ``skip_self``
    bypasses self-attention entirely.
    """
    overridden = self_qk_override is not None or self_value_override is not None
    if skip_self and overridden:
        raise ConfigurationError("skip_self cannot be combined with self-attention overrides")
    if prev.shape != query_pos.shape:
        raise DimensionError(f"prev shape {prev.shape} != query_pos shape {query_pos.shape}")
    for name, o in (("self_qk_override", self_qk_override), ("self_value_override", self_value_override)):
        if o is not None and o.shape != prev.shape:
            raise DimensionError(f"{name} shape {o.shape} != prev shape {prev.shape}")
    if not skip_self and params.self_attn is None:
        raise ConfigurationError(f"{tag}: layer has no self-attention parameters")

    if skip_self:
        x = prev
    elif overridden:
        qk = self_qk_override if self_qk_override is not None else prev
        value = self_value_override if self_value_override is not None else prev
        attn = multi_head_attention(qk, qk, value, None, None, params.self_attn, trace, f"{tag}.self")
        if trace is not None:
            trace[f"{tag}.self_out"] = attn.numpy()
        x = params.norm1(qk + attn)
    else:
        attn = multi_head_attention(prev, prev, prev, query_pos, query_pos, params.self_attn,
                                    trace, f"{tag}.self")
        if trace is not None:
            trace[f"{tag}.self_out"] = attn.numpy()
        x = params.norm1(prev + attn)

    cross = multi_head_attention(x, memory, memory, query_pos, memory_pos, params.cross_attn,
                                 trace, f"{tag}.cross")
    x = params.norm2(x + cross)
    return params.norm3(x + params.ffn(x))


def sine_position_encoding(height, width, d, temperature=10000.0):
    """Fixed 2-D sinusoidal encoding, [height*width x d], rows in row-major
    cell order.  The first d/2 channels encode y, the rest x."""
    if d % 4:
        raise ConfigurationError(f"sine position encoding needs d divisible by 4, got {d}")
    per_axis = d // 2
    y = (np.arange(height, dtype=np.float64) + 1.0) / height * 2.0 * math.pi
    x = (np.arange(width, dtype=np.float64) + 1.0) / width * 2.0 * math.pi
    dim_t = temperature ** (2.0 * (np.arange(per_axis) // 2) / per_axis)

    def encode(coord):
        raw = coord[:, None] / dim_t
        out = np.empty_like(raw)
        out[:, 0::2] = np.sin(raw[:, 0::2])
        out[:, 1::2] = np.cos(raw[:, 1::2])
        return out

    ey, ex = encode(y), encode(x)
    grid_y = np.repeat(ey, width, axis=0)
    grid_x = np.tile(ex, (height, 1))
    return np.concatenate([grid_y, grid_x], axis=1)
