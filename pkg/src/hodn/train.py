"""Training: per-scene loss, batched AdamW steps and the metrics log."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingError
from .losses import TERMS, compute_losses
from .matching import LossWeights, MatchAssignment, cost_matrix, hungarian_match
from .model import bind, hodn_forward, init_params
from .optim import OptimizerState, adamw_step
from .tensor import backward

LOG_COLUMNS = ("step",) + TERMS


@dataclass
class StepRecord:
    step: int
    terms: dict  # TERMS -> float, averaged over the batch
    decomposition_error: float


@dataclass
class TrainResult:
    params: dict
    state: OptimizerState
    history: list = field(default_factory=list)


def scene_loss(scene, tensors, config, loss_weights=None, match_weights=None, **forward_kw):
    """Forward one scene, match, and build the loss graph.

    ``match_weights`` defaults to ``loss_weights``; keeping them apart lets
    a caller vary a loss weight without changing the assignment.
    Returns ``(LossBreakdown, ForwardResult, MatchAssignment)``.
    """
    loss_weights = loss_weights or LossWeights.from_config(config)
    match_weights = match_weights or loss_weights
    result = hodn_forward(scene, tensors, config, **forward_kw)
    cost = cost_matrix(result.outputs, scene.triplets, match_weights)
    if not np.isfinite(cost).all():
        # report the terms under a placeholder assignment, then stop
        diag = MatchAssignment([(i, i) for i in range(len(scene.triplets))])
        terms = compute_losses(result.outputs, scene.triplets, diag, loss_weights).values()
        raise TrainingError(f"non-finite predictions on scene {scene.scene_id}", terms=terms)
    assignment = hungarian_match(cost)
    return compute_losses(result.outputs, scene.triplets, assignment, loss_weights), result, assignment


def batch_gradients(params, batch, config, loss_weights=None, match_weights=None):
    """Mean gradient over a batch of scenes, reduced in list order.

    Returns ``(grads, terms)`` where ``terms`` averages each logged loss
    term over the batch.
    """
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    terms = dict.fromkeys(TERMS, 0.0)
    scale = 1.0 / len(batch)
    for scene in batch:
        tensors = bind(params)
        breakdown, _, _ = scene_loss(scene, tensors, config, loss_weights, match_weights)
        gmap = backward(breakdown.total)
        for name, t in tensors.items():
            grads[name] += gmap.get(t) * scale
        for name, value in breakdown.values().items():
            terms[name] += value * scale
    return grads, terms


def train_step(params, state, batch, config, loss_weights=None, match_weights=None):
    """One optimiser step on ``batch``.  Returns ``(params, state, terms)``."""
    try:
        grads, terms = batch_gradients(params, batch, config, loss_weights, match_weights)
    except TrainingError as exc:
        raise TrainingError(f"step {state.step + 1}: {exc}", step=state.step + 1, terms=exc.terms) from None
    if not all(math.isfinite(v) for v in terms.values()):
        raise TrainingError(f"non-finite loss at step {state.step + 1}: {terms}",
                            step=state.step + 1, terms=terms)
    params, state = adamw_step(params, grads, state)
    return params, state, terms


def _decomposition_error(terms, weights):
    return abs(terms["total"] - (terms["l_loc_h"] + terms["l_loc_o"]
                                 + weights.obj * terms["l_o"] + weights.act * terms["l_a"]))


def train_loop(dataset, config, params=None, max_steps=None, callback=None):
    """Train on ``dataset`` for ``config.epochs`` epochs in fixed scene order.

    Each epoch walks the scenes in list order in batches of
    ``config.batch_size`` (the last batch may be short).  ``max_steps``
    stops early; ``callback(step, params)`` runs after every step.
    """
    if not dataset:
        raise ConfigurationError("cannot train on an empty dataset")
    params = init_params(config) if params is None else {k: np.array(v) for k, v in params.items()}
    state = OptimizerState.from_config(config)
    weights = LossWeights.from_config(config)
    history = []
    size = config.batch_size
    for _epoch in range(config.epochs):
        for start in range(0, len(dataset), size):
            if max_steps is not None and state.step >= max_steps:
                return TrainResult(params, state, history)
            params, state, terms = train_step(params, state, dataset[start:start + size], config)
            history.append(StepRecord(state.step, terms, _decomposition_error(terms, weights)))
            if callback is not None:
                callback(state.step, params)
    return TrainResult(params, state, history)


def format_metrics_log(history):
    lines = ["\t".join(LOG_COLUMNS)]
    for rec in history:
        lines.append("\t".join([str(rec.step)] + [format(rec.terms[t], ".9g") for t in TERMS]))
    return "\n".join(lines) + "\n"
