"""Central finite-difference oracle for the autodiff tape.

Analytic gradients are computed on the float32 graph (the training
substrate). The reference runs the identical graph in float64 and takes
central differences, so the comparison isolates errors in the backward
formulas rather than float32 roundoff in the probe itself.

Error metric per entry: |analytic - numeric| / max(|analytic|, |numeric|, 0.1),
maximized over entries and inputs. Entries above 0.1 in magnitude are held
to a true relative bound; smaller ones to an absolute bound of tol * 0.1.
"""
from __future__ import annotations

import numpy as np

from hvacrl.neuralsub import tensor as T

EPS = 1e-3
TOL = 1e-3


def numeric_grad(f, arrays: list[np.ndarray], wrt: int,
                 eps: float = EPS) -> np.ndarray:
    """Central differences of scalar f(arrays) w.r.t. arrays[wrt] (float64)."""
    work = [a.astype(np.float64).copy() for a in arrays]
    flat = work[wrt].reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(work)
        flat[i] = orig - eps
        lo = f(work)
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(work[wrt].shape)


def grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 0.1)
    return float((np.abs(analytic.astype(np.float64) - numeric) / denom).max())


def check_op(build, arrays: list[np.ndarray], eps: float = EPS) -> float:
    """Max gradient error for `build(tensors) -> scalar Tensor`.

    `arrays` are the leaf inputs; the analytic pass runs them as float32
    parameters, the numeric pass as float64 constants through the same
    `build`.
    """
    leaves = [T.parameter(a.astype(np.float32)) for a in arrays]
    loss = build(leaves)
    T.backward(loss)

    def f(work: list[np.ndarray]) -> float:
        return float(build([T.Tensor(w) for w in work]).data)

    worst = 0.0
    for i, leaf in enumerate(leaves):
        if leaf.grad is None:
            raise AssertionError(f"no gradient reached input {i}")
        worst = max(worst, grad_error(leaf.grad, numeric_grad(f, arrays, i, eps)))
    return worst


def check_module(module, forward, rng: np.random.Generator,
                 samples_per_param: int = 4, eps: float = EPS) -> float:
    """Spot-check module parameter gradients against float64 differences.

    `forward() -> scalar Tensor` must read the module's current parameter
    tensors. For each parameter a few random entries are probed (full FD
    over every weight would be needlessly slow); the float64 pass swaps the
    parameter buffers in place so the identical code path runs at high
    precision.
    """
    params = module.named_parameters()
    for _, p in params:
        p.grad = None
    loss = forward()
    T.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params}

    saved = [(p, p.data) for _, p in params]
    for p, data in saved:
        p.data = data.astype(np.float64)
    worst = 0.0
    try:
        for name, p in params:
            flat = p.data.reshape(-1)
            k = min(samples_per_param, flat.size)
            idx = rng.choice(flat.size, size=k, replace=False)
            for j in idx:
                orig = flat[j]
                flat[j] = orig + eps
                hi = float(forward().data)
                flat[j] = orig - eps
                lo = float(forward().data)
                flat[j] = orig
                fd = (hi - lo) / (2.0 * eps)
                ana = float(analytic[name].reshape(-1)[j])
                err = abs(ana - fd) / max(abs(ana), abs(fd), 0.1)
                worst = max(worst, err)
    finally:
        for p, data in saved:
            p.data = data
    return worst
