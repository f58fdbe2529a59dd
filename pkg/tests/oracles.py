"""Independent reference implementations used as test oracles.

None of these call into the package's closed forms.
"""

import numpy as np

GRID_LO, GRID_HI, GRID_STEP = -10.0, 10.0, 1e-3
GRID_N = int(round((GRID_HI - GRID_LO) / GRID_STEP)) + 1


def penalized(v, u, t1, t2, anchor):
    return t1 * np.abs(v) + t2 * np.abs(v - anchor) + 0.5 * (v - u) ** 2


def grid_min_exhaustive(u, t1, t2, anchor, chunk=256):
    """Minimum of the penalized objective over the full grid, evaluated at every point."""
    grid = GRID_LO + GRID_STEP * np.arange(GRID_N)
    u, t1, t2, anchor = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in (u, t1, t2, anchor))
    best_v = np.empty(u.size)
    best_f = np.empty(u.size)
    for i in range(0, u.size, chunk):
        sl = slice(i, i + chunk)
        f = penalized(grid[None, :], u[sl, None], t1[sl, None], t2[sl, None], anchor[sl, None])
        k = np.argmin(f, axis=1)
        best_v[sl] = grid[k]
        best_f[sl] = f[np.arange(k.size), k]
    return best_v, best_f


def grid_min_convex(u, t1, t2, anchor):
    """Grid minimum found by discrete ternary search.

    The objective is convex in ``v``, so its restriction to the grid is a
    discrete convex sequence and ternary search lands on the exact grid
    minimum while touching only ~60 points per tuple.
    """
    u, t1, t2, anchor = (np.asarray(a, dtype=np.float64) for a in (u, t1, t2, anchor))
    lo = np.zeros(u.shape, dtype=np.int64)
    hi = np.full(u.shape, GRID_N - 1, dtype=np.int64)

    def f(k):
        return penalized(GRID_LO + GRID_STEP * k, u, t1, t2, anchor)

    while np.any(hi - lo > 2):
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        f1, f2 = f(m1), f(m2)
        go_left = f1 < f2
        go_right = f1 > f2
        active = hi - lo > 2
        hi = np.where(active & go_left, m2 - 1, np.where(active & ~go_right & ~go_left, m2, hi))
        lo = np.where(active & go_right, m1 + 1, np.where(active & ~go_right & ~go_left, m1, lo))
    cands = np.stack([lo, np.minimum(lo + 1, hi), hi])
    vals = np.stack([f(c) for c in cands])
    j = np.argmin(vals, axis=0)
    idx = np.take_along_axis(cands, j[None], axis=0)[0]
    return GRID_LO + GRID_STEP * idx, np.take_along_axis(vals, j[None], axis=0)[0]


def prox_breakpoints(t1, t2, anchor):
    """Breakpoints in ``u`` of the prox map, from the optimality conditions at ``v = 0`` and ``v = anchor``."""
    if anchor >= 0:
        return [anchor + t1 + t2, anchor + t1 - t2, t1 - t2, -t1 - t2]
    return [t1 + t2, t2 - t1, anchor - t1 + t2, anchor - t1 - t2]


def lasso_coordinate_descent(x, Phi, lam, sweeps=20000, tol=1e-15):
    """Cyclic coordinate descent for ``0.5||x - Phi h||^2 + lam||h||_1``."""
    h = np.zeros(Phi.shape[1])
    col_sq = np.sum(Phi * Phi, axis=0)
    r = x - Phi @ h
    for _ in range(sweeps):
        delta = 0.0
        for j in range(Phi.shape[1]):
            if col_sq[j] == 0:
                continue
            rho = Phi[:, j] @ r + col_sq[j] * h[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != h[j]:
                r -= Phi[:, j] * (new - h[j])
                delta = max(delta, abs(new - h[j]))
                h[j] = new
        if delta < tol:
            break
    return h


def objective_eq4_loops(h_t, x_t, h_prev, A, D, G, Z, g, l1, l2):
    """Second implementation of the per-step reweighted objective with explicit loops."""
    hd = len(h_t)
    Zh = [sum(Z[i][j] * h_t[j] for j in range(hd)) for i in range(hd)]
    Gp = [sum(G[i][j] * h_prev[j] for j in range(hd)) for i in range(hd)]
    s = [sum(D[i][j] * Zh[j] for j in range(hd)) for i in range(len(D))]
    r = [x_t[i] - sum(A[i][j] * s[j] for j in range(len(s))) for i in range(len(x_t))]
    val = 0.5 * sum(ri * ri for ri in r)
    val += l1 * sum(abs(g[i] * Zh[i]) for i in range(hd))
    val += l2 * sum(abs(g[i] * (Zh[i] - Gp[i])) for i in range(hd))
    return val
