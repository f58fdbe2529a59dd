"""Classical iterative solvers: ISTA, FISTA and the reweighted l1-l1 algorithm."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, spectral_upper
from .prox import prox_rw_array, soft_threshold, thresholds


@dataclass(frozen=True)
class SolverConfig:
    iters: int
    lambda1: float
    lambda2: float
    c: float

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambdas must be non-negative")


def _check_dims(x, A, D, h=None):
    A = np.asarray(A, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.shape[1] != D.shape[0]:
        raise DimensionError("A @ D", f"A.cols == D.rows == {D.shape[0]}", A.shape[1])
    if x.shape[-1] != A.shape[0]:
        raise DimensionError("measurement", f"len(x) == {A.shape[0]}", x.shape[-1])
    if h is not None and np.shape(h)[-1] != D.shape[1]:
        raise DimensionError("code", f"len(h) == {D.shape[1]}", np.shape(h)[-1])
    return x, A, D


def lipschitz(A, D, iters: int = 200, seed: int = 0) -> float:
    """Upper estimate of ``||(AD)^T (AD)||_2``."""
    AD = np.asarray(A) @ np.asarray(D)
    return spectral_upper(AD.T @ AD, iters=iters, seed=seed)


def lasso_objective(h, x, A, D, lam: float) -> float:
    """``0.5*||x - ADh||^2 + lam*||h||_1``."""
    r = x - A @ (D @ h)
    return float(0.5 * r @ r + lam * np.sum(np.abs(h)))


def ista(x, A, D, lam: float, c: float, iters: int, h_init=None, history: bool = False):
    """Iterative shrinkage-thresholding for the l1-regularized least squares.

    With ``history=True`` returns ``(h, objectives)`` where ``objectives[k]``
    is the objective after ``k`` iterations (``k = 0..iters``).
    """
    x, A, D = _check_dims(x, A, D, h_init)
    if c <= 0:
        raise ValueError("c must be positive")
    AD = A @ D
    h = np.zeros(D.shape[1]) if h_init is None else np.array(h_init, dtype=np.float64)
    objs = [lasso_objective(h, x, A, D, lam)] if history else None
    for _ in range(iters):
        grad = AD.T @ (AD @ h - x)
        h = soft_threshold(h - grad / c, lam / c)
        if history:
            objs.append(lasso_objective(h, x, A, D, lam))
    return (h, objs) if history else h


def fista(x, A, D, lam: float, c: float, iters: int, h_init=None, history: bool = False):
    """Accelerated ISTA with plain momentum, no restart."""
    x, A, D = _check_dims(x, A, D, h_init)
    if c <= 0:
        raise ValueError("c must be positive")
    AD = A @ D
    h = np.zeros(D.shape[1]) if h_init is None else np.array(h_init, dtype=np.float64)
    y = h.copy()
    tk = 1.0
    objs = [lasso_objective(h, x, A, D, lam)] if history else None
    for _ in range(iters):
        grad = AD.T @ (AD @ y - x)
        h_new = soft_threshold(y - grad / c, lam / c)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = h_new + ((tk - 1.0) / t_next) * (h_new - h)
        h, tk = h_new, t_next
        if history:
            objs.append(lasso_objective(h, x, A, D, lam))
    return (h, objs) if history else h


def objective_eq4(h_t, x_t, h_prev, A, D, G, Z, g, lambda1: float, lambda2: float) -> float:
    """Reweighted l1-l1 objective for one time step.

    ``0.5*||x - ADZh||^2 + lambda1*||g o Zh||_1 + lambda2*||g o (Zh - G h_prev)||_1``
    """
    x_t, A, D = _check_dims(x_t, A, D, h_t)
    Zh = np.asarray(Z) @ h_t
    if np.shape(h_prev) != np.shape(h_t):
        raise DimensionError("objective_eq4", f"h_prev shape {np.shape(h_t)}", np.shape(h_prev))
    r = x_t - A @ (D @ Zh)
    fid = 0.5 * float(r @ r)
    return fid + lambda1 * float(np.sum(np.abs(g * Zh))) + lambda2 * float(
        np.sum(np.abs(g * (Zh - np.asarray(G) @ h_prev)))
    )


def algorithm1(x_seq, A, D, G, Z_list, g_list, c: float, lambda1: float, lambda2: float, h0, d: int):
    """Reweighted l1-l1 minimization for a sequence of measurements.

    Returns an array of shape ``(T, d + 1, h)``: entry ``[t, l]`` is the code
    after ``l`` iterations at time ``t + 1`` (``l = 0`` is the warm start
    ``G h_{t-1}``). The prox anchor stays at ``G h_{t-1}`` for every
    iteration of a time step.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[0] < 1:
        raise DimensionError("algorithm1", "x_seq of shape (T>=1, n)", x_seq.shape)
    A = np.asarray(A, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    _check_dims(x_seq[0], A, D, h0)
    if len(Z_list) < d or len(g_list) < d:
        raise DimensionError("algorithm1", f"{d} reweighting matrices/vectors", (len(Z_list), len(g_list)))
    hdim = D.shape[1]
    AD = A @ D
    M = AD.T @ AD
    P = AD.T
    T = x_seq.shape[0]
    out = np.zeros((T, d + 1, hdim))
    h_prev = np.array(h0, dtype=np.float64)
    for t in range(T):
        anchor = G @ h_prev
        h = anchor.copy()
        out[t, 0] = h
        for l in range(d):
            Z = Z_list[l]
            u = (Z - (Z @ M) / c) @ h + (Z @ P / c) @ x_seq[t]
            t1, t2 = thresholds(g_list[l], lambda1, lambda2, c)
            h = prox_rw_array(u, t1, t2, anchor)[0]
            out[t, l + 1] = h
        h_prev = h
    return out
