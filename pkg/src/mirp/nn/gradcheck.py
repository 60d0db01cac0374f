"""Central finite-difference gradient checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    coordinates: int
    tolerance: float
    worst: str = ""
    floor: float = 0.0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def rel_error(a, b, floor=1e-10):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_function(f, params: dict, analytic: dict, n_coords=200, step=1e-6,
                   tolerance=1e-5, rng=None, floor=1e-10, fallback_steps=(1e-5, 1e-4)) -> GradCheckReport:
    """Compare ``analytic`` gradients of the scalar ``f()`` against central
    differences on a random subset of coordinates of ``params`` (perturbed in
    place and restored).

    Relative errors use max(|analytic|, |numeric|, floor) as denominator, with
    the floor raised to the resolution of the difference quotient,
    eps |f| / step / tolerance, below which rounding dominates.

    When ``f`` is a sum with heavy cancellation its rounding error exceeds
    eps |f|, so each coordinate is also differenced at ``fallback_steps`` and
    scored by its best agreement over all steps.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    f0 = abs(f())
    eps = np.finfo(float).eps
    steps = (step, *fallback_steps)
    floors = [max(floor, eps * f0 / h / tolerance) for h in steps]
    names = [n for n in sorted(params) if params[n].size]
    sizes = np.array([params[n].size for n in names])
    # spread coordinates over all tensors, at least one each
    per = np.maximum(1, np.round(n_coords * sizes / sizes.sum()).astype(int))
    worst, worst_name = 0.0, ""
    total = 0
    for name, count in zip(names, per):
        p = params[name]
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(count, flat.size), replace=False)
        for i in idx:
            a = analytic[name].reshape(-1)[i]
            old = flat[i]
            err = math.inf
            for h, fl in zip(steps, floors):
                flat[i] = old + h
                up = f()
                flat[i] = old - h
                down = f()
                flat[i] = old
                err = min(err, rel_error(a, (up - down) / (2 * h), fl))
            total += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckReport(worst, total, tolerance, worst_name, floors[0])


def grad_check(model, x, y, tolerance=1e-5, n_coords=200, step=1e-6, seed=0, floor=1e-10):
    """Check every parameter of ``model`` on one (x, y) batch."""
    from .layers import softmax_xent

    _, grads = model.loss_and_grads(x, y)
    grads = {k: v.copy() for k, v in grads.items()}

    def loss():
        return softmax_xent(model.forward(x), y)[0]

    return check_function(loss, model.params, grads, n_coords=n_coords, step=step,
                          tolerance=tolerance, rng=np.random.default_rng(seed), floor=floor)
