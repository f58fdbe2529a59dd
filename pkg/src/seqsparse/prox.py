"""Proximal operators of the reweighted l1-l1 penalty.

Per element the penalty is ``t1*|v| + t2*|v - anchor|`` and the prox solves

    argmin_v  t1*|v| + t2*|v - anchor| + 0.5*(v - u)^2

which is piecewise linear in ``u`` with five branches. The branch layout
depends on the sign of the anchor. Flat branches own their endpoints.

Branch ids, anchor >= 0 (ordered from large u to small u):
    0  u - t1 - t2      (v > anchor)
    1  anchor           (flat)
    2  u - t1 + t2      (0 < v < anchor)
    3  0                (flat)
    4  u + t1 + t2      (v < 0)

Branch ids, anchor < 0:
    0  u - t1 - t2      (v > 0)
    1  0                (flat)
    2  u + t1 - t2      (anchor < v < 0)
    3  anchor           (flat)
    4  u + t1 + t2      (v < anchor)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError

# d(out)/d(u, anchor, t1, t2) for each branch id; rows indexed by branch.
_PARTIALS_POS = np.array(
    [
        [1.0, 0.0, -1.0, -1.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, -1.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 1.0, 1.0],
    ]
)
_PARTIALS_NEG = np.array(
    [
        [1.0, 0.0, -1.0, -1.0],
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 1.0, -1.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 1.0, 1.0],
    ]
)


@dataclass(frozen=True)
class ProxThresholds:
    t1: float
    t2: float
    anchor: float

    def __post_init__(self):
        if not (np.all(np.asarray(self.t1) >= 0) and np.all(np.asarray(self.t2) >= 0)):
            raise ValueError("thresholds must be non-negative")


@dataclass(frozen=True)
class ProxPartials:
    d_u: float
    d_anchor: float
    d_t1: float
    d_t2: float


def soft_threshold(u, gamma):
    """``sign(u) * max(|u| - gamma, 0)``; works on scalars and arrays."""
    out = np.sign(u) * np.maximum(np.abs(u) - gamma, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def prox_branches(u, t1, t2, anchor) -> np.ndarray:
    """Branch id (0..4) for every element; see the module docstring."""
    u, t1, t2, anchor = np.broadcast_arrays(
        np.asarray(u, dtype=np.float64),
        np.asarray(t1, dtype=np.float64),
        np.asarray(t2, dtype=np.float64),
        np.asarray(anchor, dtype=np.float64),
    )
    pos = anchor >= 0
    s = t1 + t2
    dlt = t1 - t2
    # breakpoints, from the top down; the flat branch wins ties
    b0 = np.where(pos, anchor + s, s)
    b1 = np.where(pos, anchor + dlt, -dlt)
    b2 = np.where(pos, dlt, anchor - dlt)
    b3 = np.where(pos, -s, anchor - s)
    br = np.full(u.shape, 4, dtype=np.int8)
    br[u >= b3] = 3
    br[u > b2] = 2
    br[u >= b1] = 1
    br[u > b0] = 0
    return br


def prox_rw_array(u, t1, t2, anchor):
    """Vectorized prox. Returns ``(v, branch)`` with numpy broadcasting."""
    u, t1, t2, anchor = np.broadcast_arrays(
        np.asarray(u, dtype=np.float64),
        np.asarray(t1, dtype=np.float64),
        np.asarray(t2, dtype=np.float64),
        np.asarray(anchor, dtype=np.float64),
    )
    br = prox_branches(u, t1, t2, anchor)
    pos = anchor >= 0
    s = t1 + t2
    v = np.empty(u.shape)
    m = br == 0
    v[m] = u[m] - s[m]
    m = br == 4
    v[m] = u[m] + s[m]
    m = br == 2
    v[m] = np.where(pos[m], u[m] - t1[m] + t2[m], u[m] + t1[m] - t2[m])
    m = br == 1
    v[m] = np.where(pos[m], anchor[m], 0.0)
    m = br == 3
    v[m] = np.where(pos[m], 0.0, anchor[m])
    return v, br


def prox_partials_array(branch, anchor):
    """Partials ``(d_u, d_anchor, d_t1, d_t2)`` as four arrays shaped like ``branch``."""
    branch = np.asarray(branch)
    pos = np.asarray(anchor) >= 0
    tab = np.where(pos[..., None], _PARTIALS_POS[branch], _PARTIALS_NEG[branch])
    return tab[..., 0], tab[..., 1], tab[..., 2], tab[..., 3]


def prox_rw(u: float, p: ProxThresholds) -> float:
    v, _ = prox_rw_array(u, p.t1, p.t2, p.anchor)
    return float(v)


def prox_rw_partials(u: float, p: ProxThresholds) -> ProxPartials:
    br = prox_branches(u, p.t1, p.t2, p.anchor)
    du, da, d1, d2 = prox_partials_array(br, p.anchor)
    return ProxPartials(float(du), float(da), float(d1), float(d2))


def prox_objective(v, u, t1, t2, anchor):
    """Per-element prox objective ``t1|v| + t2|v-anchor| + (v-u)^2/2``."""
    return t1 * np.abs(v) + t2 * np.abs(v - anchor) + 0.5 * (v - u) ** 2


def thresholds(g, lambda1: float, lambda2: float, c: float):
    """Per-element thresholds ``(lambda1*g/c, lambda2*g/c)``."""
    g = np.asarray(g, dtype=np.float64)
    return lambda1 * g / c, lambda2 * g / c


def prox_rw_vec(u, g, lambda1: float, lambda2: float, c: float, anchor) -> np.ndarray:
    """Element-wise reweighted prox with ``t1 = lambda1*g/c`` and ``t2 = lambda2*g/c``."""
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if not (u.shape == g.shape == anchor.shape):
        raise DimensionError("prox_rw_vec", f"equal lengths {u.shape}", (g.shape, anchor.shape))
    if c <= 0:
        raise ValueError("prox_rw_vec: c must be positive")
    t1, t2 = thresholds(g, lambda1, lambda2, c)
    return prox_rw_array(u, t1, t2, anchor)[0]
