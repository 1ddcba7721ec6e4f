"""Central finite-difference gradient checks for single layers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Layer


@dataclass
class GradCheck:
    max_rel_error: float
    n_checked: int

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error <= tol


def _sample_inputs(layer: Layer, in_shapes, batch, rng):
    xs = []
    for c, n in in_shapes:
        x = rng.standard_normal((batch, n, c))
        if layer.kind == "PReLU":
            # keep clear of the kink at zero
            x = np.sign(x) * (np.abs(x) + 0.05)
        if layer.kind == "MaxPool1d":
            # distinct values, well separated inside every window
            grid = rng.permutation(x.size).astype(np.float64) * 0.05
            x = grid.reshape(x.shape) + rng.uniform(0, 0.01, x.shape)
        xs.append(x)
    return xs


def check_layer(layer: Layer, in_shapes, rng: np.random.Generator, batch: int = 2, train: bool = True,
                frozen: bool = False, step: float = 1e-4, floor: float = 1e-6) -> GradCheck:
    """Compare analytic input and parameter gradients with central differences.

    The scalar objective is ``sum(forward(x) * R)`` for a fixed random ``R``.
    Each entry's error is ``|analytic - numeric| / max(|analytic|, |numeric|,
    floor / 1e-3)``, i.e. an entry passes a 1e-3 tolerance if it is within
    1e-3 relative *or* within ``floor`` absolute.
    """
    dtype = np.float64
    params = {k: v.astype(dtype) for k, v in layer.init_params(in_shapes, rng, dtype).items()}
    # perturb initial values so that biases, BN shifts and PReLU slopes are exercised
    for k in params:
        params[k] = params[k] + 0.3 * rng.standard_normal(params[k].shape)
        if k == "moving_var":
            params[k] = np.abs(params[k]) + 0.5
    xs = _sample_inputs(layer, in_shapes, batch, rng)
    y, _ = layer.forward(params, xs, train, frozen)
    weights = rng.standard_normal(y.shape)

    def objective():
        out, _ = layer.forward(params, xs, train, frozen)
        return float(np.sum(out * weights))

    _, cache = layer.forward(params, xs, train, frozen)
    dxs, grads = layer.backward(params, cache, weights.copy(), [True] * len(xs))

    denom_floor = floor / 1e-3
    worst = 0.0
    count = 0

    def compare(arr, analytic):
        nonlocal worst, count
        flat = arr.reshape(-1)
        an = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = objective()
            flat[i] = orig - step
            f_minus = objective()
            flat[i] = orig
            num = (f_plus - f_minus) / (2 * step)
            err = abs(an[i] - num) / max(abs(an[i]), abs(num), denom_floor)
            worst = max(worst, err)
            count += 1

    for x, dx in zip(xs, dxs):
        compare(x, dx)
    for k, arr in params.items():
        if k in layer.fixed_params:
            continue
        compare(arr, grads[k])
    return GradCheck(worst, count)
