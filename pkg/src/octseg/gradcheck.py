"""Finite-difference verification of backward rules.

The checker compares tape gradients against central differences
(f(x+h) - f(x-h)) / 2h computed elementwise in float64.  The reported
figure is the worst absolute deviation normalized by the overall gradient
magnitude:

    rel_err = max_i |g_ad[i] - g_fd[i]| / max(||g_ad||_inf, ||g_fd||_inf, 1e-6)

which stays meaningful when individual entries are near zero while still
flagging any backward rule that drops, scales, or flips a term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteValue, Tape, Variable


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_elements: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def finite_difference_check(f: Callable[[Variable], Variable],
                            x: np.ndarray,
                            h: float = 1e-6,
                            tol: float = 1e-4) -> GradCheckReport:
    """Check the tape gradient of scalar-valued `f` at `x` against central
    differences.

    `x` must be float64; float32 does not carry enough precision for the
    difference quotient at h=1e-6.
    """
    x = np.asarray(x)
    if x.dtype != np.float64:
        raise TypeError("finite_difference_check requires a float64 input")

    var = Variable(x.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(var)
    if not isinstance(out, Variable) or out.value.size != 1:
        raise ValueError("f must return a single-element Variable")
    if not np.isfinite(out.value).all():
        raise NonFiniteValue("f produced a non-finite value at x")
    tape.backward(out)
    g_ad = var.grad.copy()

    def evaluate(arr: np.ndarray) -> float:
        result = f(Variable(arr))
        val = float(result.value.reshape(()))
        if not np.isfinite(val):
            raise NonFiniteValue("f produced a non-finite value at a probe point")
        return val

    g_fd = np.empty_like(x)
    probe = x.copy()
    flat = probe.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = evaluate(probe)
        flat[i] = orig - h
        f_minus = evaluate(probe)
        flat[i] = orig
        fd_flat[i] = (f_plus - f_minus) / (2.0 * h)

    norm = max(float(np.max(np.abs(g_ad), initial=0.0)),
               float(np.max(np.abs(g_fd), initial=0.0)))
    diff = float(np.max(np.abs(g_ad - g_fd)))
    if norm < 1e-7:
        # both gradients vanish (e.g. a direction the function is exactly
        # invariant to); compare absolutely instead of against the floor
        max_rel = diff
    else:
        max_rel = diff / max(norm, 1e-6)
    return GradCheckReport(max_rel_err=max_rel, tol=tol, n_elements=x.size)


def spot_check_scalar(loss_fn: Callable[[], Variable],
                      param: Variable,
                      flat_index: int,
                      h: float = 1e-6,
                      all_params=None) -> tuple[float, float]:
    """Central difference for one scalar entry of a parameter tensor.

    Returns (tape_gradient, fd_gradient) at that entry.  `loss_fn` must
    recompute the loss from current parameter values; it is evaluated twice
    with the entry perturbed in place.  Pass `all_params` so every gradient
    accumulator is cleared before the backward pass.
    """
    if all_params is not None:
        ad.zero_grads(all_params)
    else:
        param.zero_grad()
    flat_val = param.value.reshape(-1)
    orig = flat_val[flat_index]

    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    g_ad = float(param.grad.reshape(-1)[flat_index])

    flat_val[flat_index] = orig + h
    f_plus = float(loss_fn().value.reshape(()))
    flat_val[flat_index] = orig - h
    f_minus = float(loss_fn().value.reshape(()))
    flat_val[flat_index] = orig
    g_fd = (f_plus - f_minus) / (2.0 * h)
    return g_ad, g_fd


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
