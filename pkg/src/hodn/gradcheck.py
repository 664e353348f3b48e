"""Central finite-difference checks against :func:`hodn.tensor.backward`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DeterminismError, ParameterError
from .tensor import Tensor, backward

REL_FLOOR = 1e-12


@dataclass
class ParamCheck:
    name: str
    checked: int
    max_rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    tolerance: float
    results: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.results.values())

    @property
    def max_rel_error(self):
        return max((r.max_rel_error for r in self.results.values()), default=0.0)

    def failures(self):
        return [r for r in self.results.values() if not r.passed]


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _evaluate(f, arrays):
    out = f({name: Tensor(a, requires_grad=False) for name, a in arrays.items()})
    return float(out.item())


def _probe_direction(grad, rng, first):
    r = rng.normal(size=grad.shape)
    r /= np.linalg.norm(r)
    norm = np.linalg.norm(grad)
    if norm == 0.0:
        return r
    u = grad / norm if first else grad / norm + r
    return u / np.linalg.norm(u)


def finite_diff_check(f, params, eps=1e-5, tol=1e-4, coords=None, directions=0, seed=0):
    """Compare ``backward(f(params))`` with central differences.

    ``f`` maps a ``{name: Tensor}`` dict to a scalar Tensor.  Every
    coordinate of every parameter is perturbed when ``coords`` is ``None``;
    an integer samples that many coordinates per parameter.  ``directions``
    adds directional probes per parameter, comparing ``<grad, u>`` with
    ``(f(p + eps u) - f(p - eps u)) / 2 eps``.  The first probe follows the
    normalised analytic gradient; the others mix it with a random unit vector,
    so an error orthogonal to the gradient still shows up while the signal
    stays well above roundoff even for tensors with small gradients.
    """
    if not 0 < eps <= 1e-2:
        raise ParameterError(f"finite-difference eps must lie in (0, 1e-2], got {eps}")
    arrays = {name: np.array(v, dtype=np.float64) for name, v in params.items()}
    base = _evaluate(f, arrays)
    if _evaluate(f, arrays) != base:
        raise DeterminismError("f returned different values for the same parameters")

    leaves = {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}
    grads = backward(f(leaves))
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tol)

    for name, value in arrays.items():
        analytic = grads.get(leaves[name])
        flat = value.reshape(-1)
        if coords is None:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, size=min(coords, flat.size), replace=False))
        worst, checked = 0.0, 0
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = _evaluate(f, arrays)
            flat[idx] = orig - eps
            down = _evaluate(f, arrays)
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
            checked += 1
        for _ in range(directions):
            u = _probe_direction(analytic, rng, first=(_ == 0))
            arrays[name] = value + eps * u
            up = _evaluate(f, arrays)
            arrays[name] = value - eps * u
            down = _evaluate(f, arrays)
            arrays[name] = value
            numeric = (up - down) / (2 * eps)
            worst = max(worst, relative_error(float((analytic * u).sum()), numeric))
            checked += 1
        report.results[name] = ParamCheck(name, checked, worst, worst <= tol)
    return report


# ----------------------------------------------------------------------
# suites
# ----------------------------------------------------------------------
def model_gradcheck(config, seed=0, sg_enabled=None, directions=4, coords=0, eps=1e-5, tol=1e-4):
    """Check every parameter of model + total loss on one generated scene.

    The assignment is computed once at the base point and held fixed.  With
    the stop-gradient switch on, the blocked features are frozen at their
    base value, since the analytic gradient treats them as constants.
    """
    from .data import generate_scene, scene_seed
    from .losses import compute_losses
    from .matching import LossWeights, cost_matrix, hungarian_match
    from .model import hodn_forward, init_params

    sg = config.sg_enabled if sg_enabled is None else sg_enabled
    params = init_params(config, seed)
    scene = generate_scene(scene_seed(seed, 0), config)
    weights = LossWeights.from_config(config)
    base = hodn_forward(scene, params, config, sg_enabled=sg)
    assignment = hungarian_match(cost_matrix(base.outputs, scene.triplets, weights))
    frozen = None
    if sg:
        blocked = base.q_o_out if config.sg_target == "object" else base.q_h_out
        frozen = blocked.numpy()

    def f(tensors):
        out = hodn_forward(scene, tensors, config, sg_enabled=sg, frozen_features=frozen).outputs
        return compute_losses(out, scene.triplets, assignment, weights).total

    return finite_diff_check(f, params, eps=eps, tol=tol, coords=coords, directions=directions,
                             seed=seed)


def op_suite(seed=0, eps=1e-5, tol=1e-4):
    """Per-coordinate checks of each primitive op on small random inputs."""
    from . import tensor as T

    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    weights = rng.normal(size=(3, 4))
    cases = {
        "add": (lambda p: T.add(p["a"], p["b"]), {"a": a, "b": b}),
        "sub": (lambda p: T.sub(p["a"], p["b"]), {"a": a, "b": b}),
        "mul": (lambda p: T.mul(p["a"], p["b"]), {"a": a, "b": b}),
        "div": (lambda p: T.div(p["a"], p["b"]), {"a": a, "b": pos}),
        "matmul": (lambda p: T.matmul(p["a"], p["w"]), {"a": a, "w": w}),
        "relu": (lambda p: T.relu(p["a"]), {"a": a}),
        "sigmoid": (lambda p: T.sigmoid(p["a"]), {"a": a}),
        "softplus": (lambda p: T.softplus(p["a"]), {"a": a}),
        "exp": (lambda p: T.exp(p["a"]), {"a": a}),
        "log": (lambda p: T.log(p["a"]), {"a": pos}),
        "abs": (lambda p: T.abs_(p["a"]), {"a": a}),
        "maximum": (lambda p: T.maximum(p["a"], p["b"]), {"a": a, "b": b}),
        "minimum": (lambda p: T.minimum(p["a"], p["b"]), {"a": a, "b": b}),
        "transpose": (lambda p: T.transpose(p["a"]), {"a": a}),
        "reshape": (lambda p: T.reshape(p["a"], (2, 6)), {"a": a}),
        "take": (lambda p: p["a"][np.array([0, 2, 0]), 1:3], {"a": a}),
        "concat": (lambda p: T.concat([p["a"], p["b"]], axis=1), {"a": a, "b": b}),
        "sum": (lambda p: T.sum_(p["a"], axis=0), {"a": a}),
        "mean": (lambda p: T.mean(p["a"], axis=1, keepdims=True), {"a": a}),
        "softmax": (lambda p: T.softmax_lastdim(p["a"]), {"a": a}),
        "log_softmax": (lambda p: T.log_softmax_lastdim(p["a"]), {"a": a}),
        "layer_norm": (lambda p: T.layer_norm(p["a"], p["g"], p["b"]),
                       {"a": a, "g": rng.normal(size=4), "b": rng.normal(size=4)}),
        "broadcast_add": (lambda p: T.add(p["a"], p["v"]), {"a": a, "v": rng.normal(size=4)}),
    }
    reports = {}
    for name, (op, inputs) in cases.items():
        def f(p, op=op):
            out = op(p)
            probe = T.constant(_probe_weights(out.shape, seed))
            return T.sum_(T.mul(out, probe))
        reports[name] = finite_diff_check(f, inputs, eps=eps, tol=tol)
    return reports


def _probe_weights(shape, seed):
    """Fixed random weights that turn an op's output into a scalar."""
    return np.random.default_rng([seed, 7919]).normal(size=shape)
