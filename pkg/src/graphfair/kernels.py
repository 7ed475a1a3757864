"""Dense linear-algebra kernels with analytic backward passes.

All tensors are row-major 2-D float64 numpy arrays.  Each forward kernel
has a matching `*_grad` function implementing the exact reverse-mode
derivative, and `fd_check` verifies any analytic gradient against central
finite differences.  Kernels are pure functions of their inputs and never
return non-finite values for finite inputs.

Randomness comes exclusively from `make_rng`, a numpy Generator seeded with
PCG64.  PCG64 is a fixed, documented algorithm, so a given seed yields the
same draw sequence on every platform.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Open-interval bounds for sigmoid outputs.  In float64, 1/(1+exp(-x))
# rounds to exactly 1.0 for x >~ 37; clamping keeps log(1-y) finite and
# keeps edge scores strictly inside (0, 1).
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested kernel."""


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; the single source of randomness."""
    return np.random.Generator(np.random.PCG64(seed))


def as_mat(x) -> np.ndarray:
    """Coerce to a 2-D float64 array, copying only if needed."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_mat(a)
    b = as_mat(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def matmul_grad(a, b, grad_out) -> tuple[np.ndarray, np.ndarray]:
    """grad_a = grad_out @ b^T, grad_b = a^T @ grad_out."""
    a = as_mat(a)
    b = as_mat(b)
    g = as_mat(grad_out)
    if a.shape[1] != b.shape[0] or g.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(
            f"matmul_grad shape mismatch: {a.shape} x {b.shape} -> {g.shape}"
        )
    return g @ b.T, a.T @ g


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise 1/(1+exp(-x)), clamped to the open interval (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _SIG_LO, _SIG_HI)


def sigmoid_grad(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward through sigmoid given its output y: y*(1-y)*grad_out."""
    return y * (1.0 - y) * grad_out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with row-max subtraction for stability."""
    x = as_mat(x)
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def softmax_rows_grad(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward through row softmax given its output y."""
    dot = (grad_out * y).sum(axis=1, keepdims=True)
    return y * (grad_out - dot)


def bce(logit, y):
    """Binary cross-entropy from logits, log-sum-exp form.

    Equals -[y*log(sigmoid(z)) + (1-y)*log(1-sigmoid(z))] but never
    overflows: softplus(z) - y*z with softplus(z) = max(z,0) + log1p(e^-|z|).
    Works elementwise on arrays and on scalars.
    """
    z = np.asarray(logit, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - yv * z
    return float(out) if out.ndim == 0 else out


def bce_grad(logit, y):
    """d bce / d logit = sigmoid(logit) - y."""
    g = sigmoid(np.asarray(logit, dtype=np.float64)) - np.asarray(y, dtype=np.float64)
    return float(g) if g.ndim == 0 else g


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward through relu given its pre-activation input x."""
    return np.where(x > 0, grad_out, 0.0)


def concat_pairs(h: np.ndarray, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """One row [h_u || h_v] per (u, v) pair, in input order."""
    h = as_mat(h)
    n = h.shape[0]
    if len(edges) == 0:
        return np.zeros((0, 2 * h.shape[1]))
    pairs = np.asarray(edges, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ShapeError(f"edges must be (u, v) pairs, got shape {pairs.shape}")
    if pairs.min() < 0 or pairs.max() >= n:
        raise IndexError(f"edge endpoint out of range for {n} rows")
    return np.hstack([h[pairs[:, 0]], h[pairs[:, 1]]])


def fd_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic_grad: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic_grad and central differences.

    Per coordinate: |fd - analytic| / max(1, |fd|, |analytic|), maximized
    over all coordinates of x.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ShapeError(f"gradient shape {g.shape} != input shape {x.shape}")
    worst = 0.0
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        fd = (hi - lo) / (2.0 * step)
        err = abs(fd - gflat[i]) / max(1.0, abs(fd), abs(gflat[i]))
        worst = max(worst, err)
    return worst


def glorot_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6/(rows+cols))."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs positive dims, got {rows}x{cols}")
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))
