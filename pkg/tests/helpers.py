"""Shared test oracles: finite differences, binary16 rounding, misc builders."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from lanekit import tensor as T


def numeric_grad(scalar_fn, arrays, eps=1e-5):
    """Central finite differences of scalar_fn(arrays) w.r.t. every element."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = scalar_fn(arrays)
            flat[i] = orig - eps
            f_minus = scalar_fn(arrays)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def check_grads(build_fn, arrays, rtol=1e-4, eps=1e-5, project_seed=0):
    """Compare tape gradients against central differences in F64.

    ``build_fn(*tensors)`` returns a Tensor of any shape; a fixed random
    projection turns it into a scalar so the check exercises every output
    element, not just the sum.
    """
    T.reset_tape()
    probe = [T.Tensor(a, T.F64, requires_grad=True) for a in arrays]
    out = build_fn(*probe)
    proj = np.random.Generator(np.random.PCG64(project_seed)).normal(size=out.shape)

    def finish(t):
        return (t * T.Tensor(proj, T.F64)).sum()

    T.reset_tape()
    tensors = [T.Tensor(a, T.F64, requires_grad=True) for a in arrays]
    loss = finish(build_fn(*tensors))
    T.backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(a)
                for t, a in zip(tensors, arrays)]

    def scalar_fn(arrs):
        with T.no_grad():
            ts = [T.Tensor(a, T.F64) for a in arrs]
            return float(finish(build_fn(*ts)).data.reshape(()))

    numeric = numeric_grad(scalar_fn, [a.copy() for a in arrays], eps=eps)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = max(1.0, float(np.max(np.abs(gn))) if gn.size else 0.0)
        err = float(np.max(np.abs(ga - gn))) / denom if gn.size else 0.0
        worst = max(worst, err)
    assert worst < rtol, f"gradient mismatch: relative error {worst:.3e} >= {rtol}"
    return worst


def binary16_round(x: float) -> float:
    """Independent IEEE-754 binary16 round-to-nearest-even via exact rationals."""
    if math.isnan(x):
        return math.nan
    sign = -1.0 if math.copysign(1.0, x) < 0 else 1.0
    if x == 0:
        return sign * 0.0
    if math.isinf(x):
        return sign * math.inf
    f = Fraction(abs(x))
    exp = 0
    while Fraction(2) ** (exp + 1) <= f:
        exp += 1
    while f < Fraction(2) ** exp:
        exp -= 1
    exp_eff = max(exp, -14)  # below this the format goes subnormal
    quantum = Fraction(2) ** (exp_eff - 10)
    scaled = f / quantum
    n = int(scaled)
    frac = scaled - n
    if frac > Fraction(1, 2) or (frac == Fraction(1, 2) and n % 2 == 1):
        n += 1
    r = n * quantum
    if r > 65504:
        return sign * math.inf
    return sign * float(r)


def rand_distinct(rng, shape):
    """Array with all-distinct values: safe for argmax-based ops under FD."""
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(np.float64) / n + rng.uniform(0, 1.0 / (4 * n))
    return vals.reshape(shape)


def away_from_zero(rng, shape, low=0.05, high=1.5):
    """Values bounded away from 0: safe for relu/abs kinks under FD."""
    mag = rng.uniform(low, high, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return mag * sign
