"""Dense linear-algebra helpers, seeded randomness and norm primitives.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
Matrices are row-major (C order).
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""

    def __init__(self, op: str, expected, got):
        self.op = op
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: expected {expected}, got {got}")


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(name, "2-d array", f"{arr.ndim}-d array")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(name, "1-d array", f"{arr.ndim}-d array")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64). Same seed gives the same stream everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def mat_vec(M, v) -> np.ndarray:
    """Matrix-vector product with left-to-right accumulation along each row.

    The accumulation order is fixed so the result is bit-reproducible and
    matches a naive double loop exactly. Hot paths in the model use ``@``.
    """
    M = as_matrix(M, "mat_vec M")
    v = as_vector(v, "mat_vec v")
    if M.shape[1] != v.shape[0]:
        raise DimensionError("mat_vec", f"len(v) == {M.shape[1]}", v.shape[0])
    out = np.zeros(M.shape[0])
    for j in range(M.shape[1]):
        out += M[:, j] * v[j]
    return out


def norm_1_inf(M) -> float:
    """Largest row l1 norm: ``max_i sum_j |M_ij|``."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(M), axis=1)))


def norm_2_inf(M) -> float:
    """Largest row l2 norm: ``sqrt(max_i sum_j M_ij^2)``."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    return float(np.sqrt(np.max(np.sum(M * M, axis=1))))


def geom_sum(r: float, T: int) -> float:
    """``sum_{k=0}^{T-1} r^k``, with the removable singularity at r == 1 filled by T."""
    if T < 1:
        raise ValueError(f"geom_sum: T must be >= 1, got {T}")
    if r < 0:
        raise ValueError(f"geom_sum: r must be >= 0, got {r}")
    if abs(r - 1.0) < 1e-12:
        return float(T)
    # near r == 1 the closed form loses digits; expm1/log1p keeps them
    if abs(r - 1.0) < 1e-3:
        x = r - 1.0
        return float(np.expm1(T * np.log1p(x)) / x)
    return float((r**T - 1.0) / (r - 1.0))


def spectral_upper(M, iters: int = 100, seed: int = 0) -> float:
    """Power-iteration estimate of the top eigenvalue of a symmetric PSD matrix.

    The Rayleigh quotient is inflated by 1%, so the result is meant to sit at or
    above the true Lipschitz constant of the quadratic's gradient.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError("spectral_upper", "square matrix", M.shape)
    n = M.shape[0]
    if n == 0 or not np.any(M):
        return 0.0
    v = make_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    rayleigh = 0.0
    for _ in range(max(1, iters)):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        rayleigh = float(v @ w)
        v = w / nw
    rayleigh = max(rayleigh, float(v @ (M @ v)))
    return 1.01 * rayleigh
