"""The HOI head: scene embedding, encoder, human/object/interaction decoders
and the four prediction FFNs.

Parameters live in a flat ``{name: ndarray}`` dict (``HodnParams``) whose
names group naturally by prefix: ``embed``, ``encoder.<i>``,
``human_decoder.<i>``, ``object_decoder.<i>``, ``interaction_decoder.<i>``,
``queries.{human,object,random}`` and ``heads.*``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .attention import (DecoderLayerParams, EncoderLayerParams, decoder_layer_forward,
                        encoder_forward, sine_position_encoding)
from .config import LINK_MODES, RunConfig
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

HodnParams = Dict[str, np.ndarray]

QUERY_STD = 1.0
LN_EPS = 1e-5


# ----------------------------------------------------------------------
# parameter layout and initialisation
# ----------------------------------------------------------------------
def _mha_entries(prefix, d):
    return [(f"{prefix}.{k}", (d, d), ("uniform", d)) for k in ("w_q", "w_k", "w_v", "w_o")]


def _ffn_entries(prefix, d_in, hidden, d_out):
    return [
        (f"{prefix}.w1", (d_in, hidden), ("uniform", d_in)),
        (f"{prefix}.b1", (hidden,), ("uniform", d_in)),
        (f"{prefix}.w2", (hidden, d_out), ("uniform", hidden)),
        (f"{prefix}.b2", (d_out,), ("uniform", hidden)),
    ]


def _norm_entries(prefix, d):
    return [(f"{prefix}.gain", (d,), ("ones",)), (f"{prefix}.bias", (d,), ("zeros",))]


def _decoder_entries(prefix, d, with_self):
    out = []
    if with_self:
        out += _mha_entries(f"{prefix}.self_attn", d)
    out += _mha_entries(f"{prefix}.cross_attn", d)
    out += _ffn_entries(f"{prefix}.ffn", d, 4 * d, d)
    if with_self:
        out += _norm_entries(f"{prefix}.norm1", d)
    out += _norm_entries(f"{prefix}.norm2", d) + _norm_entries(f"{prefix}.norm3", d)
    return out


def param_layout(config: RunConfig, link_mode: Optional[str] = None):
    """Ordered ``(name, shape, init)`` entries for a configuration.

    The first layer of the human and object decoders carries no
    self-attention weights because that sublayer is always skipped.
    ``queries.random`` exists only for the random-guide link mode.
    """
    d, n = config.d, config.num_queries
    mode = link_mode or config.link_mode
    entries = [
        ("embed.w", (config.channels, d), ("uniform", config.channels)),
        ("embed.b", (d,), ("uniform", config.channels)),
    ]
    for i in range(config.encoder_layers):
        p = f"encoder.{i}"
        entries += _mha_entries(f"{p}.self_attn", d) + _ffn_entries(f"{p}.ffn", d, 4 * d, d)
        entries += _norm_entries(f"{p}.norm1", d) + _norm_entries(f"{p}.norm2", d)
    for dec in ("human_decoder", "object_decoder"):
        for i in range(config.decoder_layers):
            entries += _decoder_entries(f"{dec}.{i}", d, with_self=i > 0)
    for i in range(config.decoder_layers):
        entries += _decoder_entries(f"interaction_decoder.{i}", d, with_self=True)
    entries += [("queries.human", (n, d), ("query",)), ("queries.object", (n, d), ("copy", "queries.human"))]
    if mode == "random_guide":
        entries.append(("queries.random", (n, d), ("query",)))
    for box in ("human_box", "object_box"):
        p = f"heads.{box}"
        entries += [
            (f"{p}.w1", (d, d), ("uniform", d)), (f"{p}.b1", (d,), ("uniform", d)),
            (f"{p}.w2", (d, d), ("uniform", d)), (f"{p}.b2", (d,), ("uniform", d)),
            (f"{p}.w3", (d, 4), ("uniform", d)), (f"{p}.b3", (4,), ("uniform", d)),
        ]
    entries += [
        ("heads.object_class.w", (d, config.num_obj_classes + 1), ("uniform", d)),
        ("heads.object_class.b", (config.num_obj_classes + 1,), ("uniform", d)),
        ("heads.interaction.w", (d, config.num_actions), ("uniform", d)),
        ("heads.interaction.b", (config.num_actions,), ("uniform", d)),
    ]
    return entries


def param_shapes(config, link_mode=None):
    return {name: shape for name, shape, _ in param_layout(config, link_mode)}


def init_params(config: RunConfig, seed=None, link_mode=None) -> HodnParams:
    """Uniform(+-1/sqrt(fan_in)) weights, N(0, 1) queries with the object
    queries copied from the human ones, unit/zero layer-norm affine."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape, init in param_layout(config, link_mode):
        kind = init[0]
        if kind == "uniform":
            bound = 1.0 / np.sqrt(init[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif kind == "ones":
            params[name] = np.ones(shape)
        elif kind == "zeros":
            params[name] = np.zeros(shape)
        elif kind == "query":
            params[name] = rng.normal(0.0, QUERY_STD, size=shape)
        else:
            params[name] = params[init[1]].copy()
    return params


def bind(params: HodnParams, requires_grad=True):
    """Wrap arrays as graph leaves."""
    return {name: Tensor(value, requires_grad) for name, value in params.items()}


def grads_by_name(gradients, tensors):
    return {name: gradients.get(t) for name, t in tensors.items()}


def object_side(names):
    return [n for n in names if n.startswith("object_decoder.") or n == "queries.object"]


def human_side(names):
    return [n for n in names if n.startswith("human_decoder.") or n == "queries.human"]


# ----------------------------------------------------------------------
# forward components
# ----------------------------------------------------------------------
@dataclass
class HOIPrediction:
    human_box: np.ndarray  # cx, cy, w, h
    object_box: np.ndarray
    object_class_logits: np.ndarray  # K_obj + 1, last is background
    interaction_logits: np.ndarray  # K_act


@dataclass
class HeadOutputs:
    human_boxes: Tensor  # [N, 4] cxcywh
    object_boxes: Tensor  # [N, 4]
    object_logits: Tensor  # [N, K_obj + 1]
    action_logits: Tensor  # [N, K_act]

    def __len__(self):
        return self.human_boxes.shape[0]

    def predictions(self):
        return [
            HOIPrediction(self.human_boxes.data[i].copy(), self.object_boxes.data[i].copy(),
                          self.object_logits.data[i].copy(), self.action_logits.data[i].copy())
            for i in range(len(self))
        ]


@dataclass
class ForwardResult:
    outputs: HeadOutputs
    tensors: Dict[str, Tensor]
    z_e: Tensor
    q_h_out: Tensor
    q_o_out: Tensor
    q_a_out: Tensor
    trace: Optional[dict] = field(default=None)

    def predictions(self):
        return self.outputs.predictions()


def embed_scene(grid, tensors, config):
    """1x1 projection of a [C, H, W] grid to d channels, flattened row-major
    to [H*W, d], plus the matching sine encoding."""
    grid = T.as_tensor(grid)
    want = (config.channels, config.grid_h, config.grid_w)
    if grid.shape != want:
        raise DimensionError(f"scene grid shape {grid.shape} does not match config {want}")
    cells = config.grid_h * config.grid_w
    tokens = T.reshape(grid, (config.channels, cells)).T
    z_src = tokens @ tensors["embed.w"] + tensors["embed.b"]
    pos = T.constant(sine_position_encoding(config.grid_h, config.grid_w, config.d))
    return z_src, pos


def encoder_layers(tensors, config):
    return [EncoderLayerParams.from_tensors(tensors, f"encoder.{i}", config.heads, LN_EPS)
            for i in range(config.encoder_layers)]


def decoder_layers(tensors, config, which):
    return [DecoderLayerParams.from_tensors(tensors, f"{which}.{i}", config.heads, LN_EPS)
            for i in range(config.decoder_layers)]


def detection_decoder_forward(z_e, pos, queries, layers, trace=None, tag="decoder"):
    """Vanilla decoder: the running features start at zero, the queries are
    the positional term of every layer, and layer 1 skips self-attention."""
    if not layers:
        raise ConfigurationError("a detection decoder needs at least one layer")
    x = T.constant(np.zeros(queries.shape))
    for i, layer in enumerate(layers):
        x = decoder_layer_forward(x, queries, z_e, pos, layer, skip_self=i == 0,
                                  trace=trace, tag=f"{tag}.{i}")
    return x


def interaction_decoder_forward(z_e, pos, q_h_out, q_o_out, mode, layers, q_rand=None,
                                trace=None, tag="interaction_decoder"):
    """Interaction decoder under one of the four link modes.

    human_guide: the human features are the positional term of every layer;
    layer 1 self-attends over (H + O) with O as the value.  addition_guide:
    same first layer, positional term H + O.  random_guide: learned
    positional term, layer 1 receives H + O as its running input.
    object_guide: human_guide with the two feature sets swapped.
    """
    if mode == "object_guide":
        return interaction_decoder_forward(z_e, pos, q_o_out, q_h_out, "human_guide", layers,
                                           q_rand, trace, tag)
    if q_h_out.shape != q_o_out.shape:
        raise DimensionError(f"human/object feature shapes differ: {q_h_out.shape} vs {q_o_out.shape}")
    if not layers:
        raise ConfigurationError("the interaction decoder needs at least one layer")
    zeros = T.constant(np.zeros(q_h_out.shape))
    if mode == "human_guide":
        query_pos, prev = q_h_out, zeros
        first = dict(self_qk_override=q_h_out + q_o_out, self_value_override=q_o_out)
    elif mode == "addition_guide":
        query_pos, prev = q_h_out + q_o_out, zeros
        first = dict(self_qk_override=query_pos, self_value_override=q_o_out)
    elif mode == "random_guide":
        if q_rand is None:
            raise ConfigurationError("random_guide needs learned queries (queries.random)")
        query_pos, prev, first = q_rand, q_h_out + q_o_out, {}
    else:
        raise ConfigurationError(f"unknown link mode {mode!r}; expected one of {LINK_MODES}")
    x = prev
    for i, layer in enumerate(layers):
        extra = first if i == 0 else {}
        x = decoder_layer_forward(x, query_pos, z_e, pos, layer, trace=trace, tag=f"{tag}.{i}", **extra)
    return x


def _box_ffn(x, tensors, prefix):
    h = T.relu(x @ tensors[f"{prefix}.w1"] + tensors[f"{prefix}.b1"])
    h = T.relu(h @ tensors[f"{prefix}.w2"] + tensors[f"{prefix}.b2"])
    return T.sigmoid(h @ tensors[f"{prefix}.w3"] + tensors[f"{prefix}.b3"])


def prediction_heads(q_h_out, q_o_out, q_a_out, tensors):
    return HeadOutputs(
        human_boxes=_box_ffn(q_h_out, tensors, "heads.human_box"),
        object_boxes=_box_ffn(q_o_out, tensors, "heads.object_box"),
        object_logits=q_o_out @ tensors["heads.object_class.w"] + tensors["heads.object_class.b"],
        action_logits=q_a_out @ tensors["heads.interaction.w"] + tensors["heads.interaction.b"],
    )


def hodn_forward(scene, params, config, mode=None, sg_enabled=None, sg_target=None, trace=None,
                 frozen_features=None):
    """Full forward pass for one scene.

    ``scene`` is a SceneSample or a raw [C, H, W] grid; ``params`` holds
    arrays (bound here as fresh leaves) or already-bound Tensors.  With the
    stop-gradient switch on, the object features reach the interaction
    decoder through a gradient-blocking node (the human features instead
    when ``sg_target == "human"``); forward values are unaffected.

    ``frozen_features`` (an array) replaces the blocked features by a fixed
    value.  Finite-difference checks use it so that perturbing a parameter
    does not move a value the analytic gradient treats as constant.
    """
    mode = mode or config.link_mode
    sg_enabled = config.sg_enabled if sg_enabled is None else sg_enabled
    sg_target = sg_target or config.sg_target
    grid = scene.grid if hasattr(scene, "grid") else scene
    tensors = params if all(isinstance(v, Tensor) for v in params.values()) else bind(params)

    z_src, pos = embed_scene(grid, tensors, config)
    z_e = encoder_forward(z_src, pos, encoder_layers(tensors, config), trace)
    q_h_out = detection_decoder_forward(z_e, pos, tensors["queries.human"],
                                        decoder_layers(tensors, config, "human_decoder"),
                                        trace, "human_decoder")
    q_o_out = detection_decoder_forward(z_e, pos, tensors["queries.object"],
                                        decoder_layers(tensors, config, "object_decoder"),
                                        trace, "object_decoder")
    h_in, o_in = q_h_out, q_o_out
    if sg_enabled:
        if sg_target == "object":
            o_in = T.stop_gradient(q_o_out) if frozen_features is None else T.constant(frozen_features)
        else:
            h_in = T.stop_gradient(q_h_out) if frozen_features is None else T.constant(frozen_features)
    q_a_out = interaction_decoder_forward(z_e, pos, h_in, o_in, mode,
                                          decoder_layers(tensors, config, "interaction_decoder"),
                                          tensors.get("queries.random"), trace)
    outputs = prediction_heads(q_h_out, q_o_out, q_a_out, tensors)
    return ForwardResult(outputs, tensors, z_e, q_h_out, q_o_out, q_a_out, trace)
