"""Finite-difference sweep over every differentiable operation plus a
miniature end-to-end model, used by the gradcheck command and the test
suite.

Each named check builds small float64 inputs from a seed, funnels the op
output through a fixed random projection to a scalar, and compares tape
gradients against central differences for every differentiable input.
Inputs for kinked ops (max pooling) are spaced away from ties so the
difference quotient stays valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Variable
from .gradcheck import finite_difference_check, relative_error, spot_check_scalar
from .losses import jaccard_loss, one_hot
from .model import DilatedResidualUNet, ModelConfig


@dataclass
class SuiteResult:
    name: str
    worst_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_err <= self.tol


def _projector(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _project(out: Variable, r: np.ndarray) -> Variable:
    return ad.reduce_sum(ad.mul(out, r))


def _check_inputs(build_fn, inputs: dict[str, np.ndarray], h, tol) -> float:
    """FD-check the scalar function produced by `build_fn` for each input
    in turn, holding the others fixed; returns the worst relative error."""
    worst = 0.0
    for name in inputs:
        def f(var, _name=name):
            chosen = {k: (var if k == _name else Variable(v))
                      for k, v in inputs.items()}
            return build_fn(**chosen)

        report = finite_difference_check(f, inputs[name], h=h, tol=tol)
        worst = max(worst, report.max_rel_err)
    return worst


def _spaced_values(rng: np.random.Generator, shape) -> np.ndarray:
    """Values with pairwise gaps of at least ~0.006, so window maxima stay
    stable under +/-h perturbation."""
    n = int(np.prod(shape))
    vals = rng.permutation(n) * 0.01 + rng.uniform(0.0, 0.004, size=n)
    return vals.reshape(shape)


def check_elementwise(kind: str, seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE1E)))
    shape = (3, 4)
    a = rng.uniform(-2.0, 2.0, size=shape)
    b = rng.uniform(-2.0, 2.0, size=shape)
    if kind == "div":
        b = np.where(np.abs(b) < 0.5, np.sign(b) * 0.5 + b, b)
    r = _projector(rng, shape)
    op = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div}[kind]
    return _check_inputs(lambda a, b: _project(op(a, b), r),
                         {"a": a, "b": b}, h, tol)


def check_scalar_ops(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5CA)))
    x = rng.uniform(-2.0, 2.0, size=(4, 3))
    r = _projector(rng, x.shape)
    c = float(rng.uniform(0.5, 2.0))

    def f(x):
        y = ad.add(ad.mul(x, c), 0.75)
        y = ad.div(y, 1.5)
        y = ad.sub(2.0, y)
        return _project(y, r)

    return _check_inputs(f, {"x": x}, h, tol)


def check_reduce_sum(axes, seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5D0)))
    x = rng.uniform(-1.0, 1.0, size=(2, 3, 4))
    out_shape = np.sum(x, axis=axes).shape
    r = _projector(rng, out_shape)
    return _check_inputs(lambda x: _project(ad.reduce_sum(x, axes), r),
                         {"x": x}, h, tol)


def check_conv2d(dilation: int, seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0, dilation)))
    size = max(6, 2 * dilation + 2)
    x = rng.uniform(-1.0, 1.0, size=(1, 2, size, size))
    w = rng.uniform(-1.0, 1.0, size=(2, 2, 3, 3))
    b = rng.uniform(-1.0, 1.0, size=(2,))
    r = _projector(rng, (1, 2, size, size))
    return _check_inputs(
        lambda x, w, b: _project(nn.conv2d(x, w, b, dilation=dilation), r),
        {"x": x, "w": w, "b": b}, h, tol)


def check_conv1x1(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1)))
    x = rng.uniform(-1.0, 1.0, size=(2, 3, 4, 5))
    w = rng.uniform(-1.0, 1.0, size=(2, 3, 1, 1))
    b = rng.uniform(-1.0, 1.0, size=(2,))
    r = _projector(rng, (2, 2, 4, 5))
    return _check_inputs(
        lambda x, w, b: _project(nn.conv1x1(x, w, b), r),
        {"x": x, "w": w, "b": b}, h, tol)


def check_batch_norm(training: bool, seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB4)))
    x = rng.uniform(-2.0, 2.0, size=(2, 3, 4, 4))
    gamma = rng.uniform(0.5, 1.5, size=(3,))
    beta = rng.uniform(-0.5, 0.5, size=(3,))
    running_mean = rng.uniform(-0.5, 0.5, size=(3,))
    running_var = rng.uniform(0.5, 1.5, size=(3,))
    r = _projector(rng, x.shape)

    def f(x, gamma, beta):
        return _project(nn.batch_norm(
            x, gamma, beta, running_mean.copy(), running_var.copy(),
            training=training), r)

    return _check_inputs(f, {"x": x, "gamma": gamma, "beta": beta}, h, tol)


def check_elu(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE1)))
    x = rng.uniform(-3.0, 3.0, size=(2, 3, 4, 4))
    r = _projector(rng, x.shape)
    return _check_inputs(lambda x: _project(nn.elu(x), r), {"x": x}, h, tol)


def check_maxpool(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x3A)))
    x = _spaced_values(rng, (1, 2, 6, 6))
    r = _projector(rng, (1, 2, 3, 3))
    return _check_inputs(
        lambda x: _project(nn.maxpool2x2(x)[0], r), {"x": x}, h, tol)


def check_upsample(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0B)))
    x = rng.uniform(-1.0, 1.0, size=(1, 2, 3, 4))
    r = _projector(rng, (1, 2, 6, 8))
    return _check_inputs(
        lambda x: _project(nn.upsample2x2(x), r), {"x": x}, h, tol)


def check_concat(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xCC)))
    a = rng.uniform(-1.0, 1.0, size=(1, 2, 3, 3))
    b = rng.uniform(-1.0, 1.0, size=(1, 3, 3, 3))
    r = _projector(rng, (1, 5, 3, 3))
    return _check_inputs(
        lambda a, b: _project(nn.concat_channels(a, b), r),
        {"a": a, "b": b}, h, tol)


def check_softmax(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x50F)))
    x = rng.uniform(-2.0, 2.0, size=(1, 4, 3, 3))
    r = _projector(rng, x.shape)
    return _check_inputs(
        lambda x: _project(nn.softmax_channels(x), r), {"x": x}, h, tol)


def check_jaccard(seed: int, h: float, tol: float) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1A)))
    probs = rng.uniform(0.05, 0.95, size=(1, 2, 4, 4))
    truth = one_hot(rng.integers(0, 2, size=(1, 4, 4)), 2, dtype=np.float64)
    return _check_inputs(lambda p: jaccard_loss(p, truth),
                         {"p": probs}, h, tol)


def check_conv_bn_elu_stack(seed: int, h: float, tol: float) -> float:
    """Gradient of a scalar through conv + batch norm + ELU on a 1x1x8x8
    input, checked against central differences."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x57)))
    x = rng.uniform(-1.0, 1.0, size=(1, 1, 8, 8))
    w = rng.uniform(-1.0, 1.0, size=(2, 1, 3, 3))
    b = rng.uniform(-0.5, 0.5, size=(2,))
    gamma = rng.uniform(0.5, 1.5, size=(2,))
    beta = rng.uniform(-0.5, 0.5, size=(2,))
    rm = np.zeros(2)
    rv = np.ones(2)
    r = _projector(rng, (1, 2, 8, 8))

    def f(x, w, b, gamma, beta):
        y = nn.conv2d(x, w, b, dilation=1)
        y = nn.batch_norm(x=y, gamma=gamma, beta=beta,
                          running_mean=rm.copy(), running_var=rv.copy(),
                          training=True)
        return _project(nn.elu(y), r)

    return _check_inputs(f, {"x": x, "w": w, "b": b,
                             "gamma": gamma, "beta": beta}, h, tol)


def check_model_spots(seed: int, h: float, tol: float,
                      n_spots: int = 10, size: int = 16) -> float:
    """Spot-check randomly chosen parameter scalars of the full model
    against central differences of the training loss on one input."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x40D)))
    model = DilatedResidualUNet(ModelConfig(), seed=seed, dtype=np.float64)
    x = rng.uniform(0.0, 1.0, size=(1, 1, size, size))
    truth = one_hot(rng.integers(0, 8, size=(1, size, size)), 8,
                    dtype=np.float64)
    params = model.parameters()
    names = list(params)

    def loss_fn():
        return jaccard_loss(model.forward(x, mode="train"), truth)

    worst = 0.0
    for _ in range(n_spots):
        name = names[int(rng.integers(0, len(names)))]
        p = params[name]
        idx = int(rng.integers(0, p.value.size))
        g_ad, g_fd = spot_check_scalar(loss_fn, p, idx, h=h,
                                       all_params=params.values())
        worst = max(worst, relative_error(g_ad, g_fd))
    return worst


CHECKS: dict[str, callable] = {
    "add": lambda s, h, t: check_elementwise("add", s, h, t),
    "sub": lambda s, h, t: check_elementwise("sub", s, h, t),
    "mul": lambda s, h, t: check_elementwise("mul", s, h, t),
    "div": lambda s, h, t: check_elementwise("div", s, h, t),
    "scalar_ops": check_scalar_ops,
    "reduce_sum_all": lambda s, h, t: check_reduce_sum(None, s, h, t),
    "reduce_sum_axes": lambda s, h, t: check_reduce_sum((0, 2), s, h, t),
    "conv2d_d1": lambda s, h, t: check_conv2d(1, s, h, t),
    "conv2d_d2": lambda s, h, t: check_conv2d(2, s, h, t),
    "conv2d_d4": lambda s, h, t: check_conv2d(4, s, h, t),
    "conv2d_d8": lambda s, h, t: check_conv2d(8, s, h, t),
    "conv1x1": check_conv1x1,
    "batch_norm_train": lambda s, h, t: check_batch_norm(True, s, h, t),
    "batch_norm_infer": lambda s, h, t: check_batch_norm(False, s, h, t),
    "elu": check_elu,
    "maxpool2x2": check_maxpool,
    "upsample2x2": check_upsample,
    "concat_channels": check_concat,
    "softmax_channels": check_softmax,
    "jaccard_loss": check_jaccard,
    "conv_bn_elu_stack": check_conv_bn_elu_stack,
    "model_16x16": check_model_spots,
}


def run_suite(seeds: int = 20, h: float = 1e-6, tol: float = 1e-4,
              names=None, progress=None) -> list[SuiteResult]:
    """Run every named check over `seeds` seeds; returns per-check results
    with the worst relative error seen."""
    selected = list(CHECKS) if names is None else list(names)
    results = []
    for name in selected:
        if name not in CHECKS:
            raise KeyError(f"unknown gradcheck {name!r}")
        worst = 0.0
        for seed in range(seeds):
            worst = max(worst, CHECKS[name](seed, h, tol))
        results.append(SuiteResult(name, worst, tol))
        if progress is not None:
            progress(results[-1])
    return results
