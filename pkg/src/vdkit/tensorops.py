"""Dense tensor math shared by all numeric modules.

Thin validated wrappers over the kernel backend plus the finite difference
gradient checker. Everything is float64, row major, with a fixed summation
order, so repeated runs (and both backends) produce identical bits.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import kernels as _K
from .errors import InputError


def as_f64(x, name="tensor"):
    """Coerce to a C-contiguous float64 array, rejecting non-finite values."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def matmul(a, b):
    """Matrix product with deterministic left-to-right summation over k."""
    a = as_f64(a, "a")
    b = as_f64(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(
            f"matmul needs 2-d operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.shape} @ {b.shape} "
            f"(inner extents {a.shape[1]} != {b.shape[0]})"
        )
    return _K.matmul(a, b)


def softmax_rows(x):
    """Row-wise softmax with max-shift stabilization."""
    x = as_f64(x, "x")
    if x.ndim != 2:
        raise ValueError(f"softmax_rows needs a 2-d input, got shape {x.shape}")
    return _K.softmax_rows(x)


def sigmoid(x):
    """Elementwise logistic, any shape."""
    x = as_f64(x, "x")
    return _K.sigmoid(x.ravel()).reshape(x.shape)


def tanh(x):
    """Elementwise tanh, any shape."""
    x = as_f64(x, "x")
    return _K.tanh(x.ravel()).reshape(x.shape)


def relu(x):
    """Elementwise max(0, x)."""
    x = as_f64(x, "x")
    return np.maximum(x, 0.0)


def layer_norm(x, eps=1e-5):
    """Standardize the last axis to zero mean and unit variance (plus eps)."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be > 0, got {eps}")
    x = as_f64(x, "x")
    if x.ndim == 0:
        raise ValueError("layer_norm needs at least one axis")
    d = x.shape[-1]
    flat = np.ascontiguousarray(x.reshape(-1, d))
    return _K.layer_norm_rows(flat, float(eps)).reshape(x.shape)


@dataclass(frozen=True)
class GradCheckConfig:
    step: float = 1e-6
    rel_tol: float = 1e-4

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if self.rel_tol <= 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")


def finite_diff_check(f, x, analytic_grad, cfg=GradCheckConfig()):
    """Max relative error between central differences of f and analytic_grad.

    Perturbs each coordinate of x by +-cfg.step, evaluates f, and compares
    (f(x+h) - f(x-h)) / 2h against the analytic gradient. The relative error
    denominator is max(|numeric|, |analytic|, 1), so near-zero coordinates
    are judged on absolute error. Raises InputError if any f evaluation is
    non-finite, naming the offending coordinate.
    """
    x = as_f64(x, "x")
    g = as_f64(analytic_grad, "analytic_grad")
    if g.shape != x.shape:
        raise ValueError(
            f"analytic_grad shape {g.shape} does not match x shape {x.shape}"
        )
    h = cfg.step
    worst = 0.0
    flat_g = g.ravel()
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += h
        fp = float(f(xp))
        xm = x.copy()
        xm.flat[i] -= h
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            idx = tuple(int(v) for v in np.unravel_index(i, x.shape))
            raise InputError(
                f"finite_diff_check: f is non-finite at coordinate {idx} "
                f"(f+ = {fp}, f- = {fm})"
            )
        num = (fp - fm) / (2.0 * h)
        ana = flat_g[i]
        err = abs(num - ana) / max(abs(num), abs(ana), 1.0)
        if err > worst:
            worst = err
    return worst
