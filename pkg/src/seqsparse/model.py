"""Unfolded recurrent networks for sequential sparse recovery.

Four variants share one parameter container and one forward routine:

* ``reweighted``: weights tied to ``A, D, G, Z_l, c`` and a per-unit,
  per-layer prox activation (thresholds ``lambda*g_l/c``).
* ``l1l1``: the same network with ``Z_l = I`` and ``g_l = 1``.
* ``sista``: free ``W1, W2, U1, U2`` with soft-threshold activations.
* ``vanilla``: stacked soft-threshold RNN cells.

Batched arrays are time-major inside the trace: ``(T, B, dim)``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DimensionError, make_rng, spectral_upper
from .prox import prox_rw_array, thresholds

LAMBDA_RANGE = (1e-5, 3.0)


class Variant(str, enum.Enum):
    REWEIGHTED = "reweighted"
    L1L1 = "l1l1"
    SISTA = "sista"
    VANILLA = "vanilla"


# scalar (0-d) tensors go to the checkpoint manifest, everything else to the sidecar
SCALAR_NAMES = ("c_raw", "l1_raw", "l2_raw")

_TENSOR_NAMES = {
    Variant.REWEIGHTED: ("A", "D", "G", "h0", "Z", "g_raw", "c_raw", "l1_raw", "l2_raw"),
    Variant.L1L1: ("A", "D", "G", "h0", "c_raw", "l1_raw", "l2_raw"),
    Variant.SISTA: ("A", "D", "h0", "W1", "W2", "U1", "U2", "gamma_raw"),
    Variant.VANILLA: ("A", "D", "h0", "W", "U1", "Uh", "gamma_raw"),
}


def tensor_names(variant) -> tuple[str, ...]:
    return _TENSOR_NAMES[Variant(variant)]


def expected_shapes(variant, n0: int, n: int, h: int, d: int) -> dict[str, tuple]:
    shapes = {
        "A": (n, n0),
        "D": (n0, h),
        "G": (h, h),
        "h0": (h,),
        "Z": (d, h, h),
        "g_raw": (d, h),
        "c_raw": (),
        "l1_raw": (),
        "l2_raw": (),
        "W1": (h, h),
        "W2": (h, h),
        "U1": (h, n),
        "U2": (h, h),
        "gamma_raw": (d,),
        "W": (d, h, h),
        "Uh": (max(d - 1, 0), h, h),
    }
    return {k: shapes[k] for k in tensor_names(variant)}


@dataclass
class ModelParams:
    variant: Variant
    n0: int
    n: int
    h: int
    d: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        want = expected_shapes(self.variant, self.n0, self.n, self.h, self.d)
        if set(want) != set(self.tensors):
            raise DimensionError("ModelParams", sorted(want), sorted(self.tensors))
        for k, shp in want.items():
            arr = np.asarray(self.tensors[k], dtype=np.float64)
            if arr.shape != shp:
                raise DimensionError(f"ModelParams.{k}", shp, arr.shape)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"ModelParams.{k}: non-finite entries")
            self.tensors[k] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> tuple[str, ...]:
        return tensor_names(self.variant)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.variant, self.n0, self.n, self.h, self.d,
            {k: v.copy() for k, v in self.tensors.items()},
        )

    @property
    def c(self) -> float:
        return float(np.exp(self.tensors["c_raw"]))

    @property
    def lambda1(self) -> float:
        return float(np.exp(self.tensors["l1_raw"]))

    @property
    def lambda2(self) -> float:
        return float(np.exp(self.tensors["l2_raw"]))

    @property
    def g(self) -> np.ndarray:
        if "g_raw" in self.tensors:
            return np.exp(self.tensors["g_raw"])
        return np.ones((self.d, self.h))

    @property
    def Z(self) -> np.ndarray:
        if "Z" in self.tensors:
            return self.tensors["Z"]
        return np.broadcast_to(np.eye(self.h), (self.d, self.h, self.h))

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.tensors["gamma_raw"])

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def dct_atoms(n0: int, h: int) -> np.ndarray:
    """``n0 x h`` matrix of l2-normalized DCT-II atoms over ``h`` frequencies."""
    i = np.arange(n0)[:, None]
    k = np.arange(h)[None, :]
    D = np.cos(np.pi * k * (2 * i + 1) / (2.0 * h))
    return D / np.linalg.norm(D, axis=0, keepdims=True)


def init_dictionary(n0: int, h: int) -> np.ndarray:
    """DCT start for the dictionary.

    Overcomplete (``h >= n0``) uses the ``h``-frequency DCT; undercomplete
    keeps the ``h`` lowest-frequency atoms of the orthonormal ``n0``-point DCT.
    """
    if h >= n0:
        return dct_atoms(n0, h)
    return dct_atoms(n0, n0)[:, :h].copy()


def _log_uniform(rng, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def init_params(variant, n0: int, n: int, h: int, d: int, seed: int,
                lambda1: float | None = None, lambda2: float | None = None) -> ModelParams:
    """Initial parameters.

    Sensing ``A ~ N(0, 1/n)``; dictionary from the DCT (random for the vanilla
    stack); ``G = Z_l = I``; ``g_l = 1``; ``h0 = 0``; ``c`` from power
    iteration on ``(AD)^T AD``; lambdas log-uniform on ``[1e-5, 3]`` unless given.
    """
    variant = Variant(variant)
    if min(n0, n, h, d) < 1:
        raise ValueError("dimensions and depth must be >= 1")
    rng = make_rng(seed)
    A = rng.standard_normal((n, n0)) / np.sqrt(n)
    l1 = _log_uniform(rng, *LAMBDA_RANGE) if lambda1 is None else float(lambda1)
    l2 = _log_uniform(rng, *LAMBDA_RANGE) if lambda2 is None else float(lambda2)
    t: dict[str, np.ndarray] = {"A": A, "h0": np.zeros(h)}
    if variant is Variant.VANILLA:
        bound = 1.0 / np.sqrt(h)
        t["D"] = rng.uniform(-bound, bound, (n0, h))
        t["W"] = rng.uniform(-bound, bound, (d, h, h))
        t["U1"] = rng.uniform(-bound, bound, (h, n))
        t["Uh"] = rng.uniform(-bound, bound, (max(d - 1, 0), h, h))
        t["gamma_raw"] = np.full(d, np.log(l1 / 10.0))
        return ModelParams(variant, n0, n, h, d, t)
    D = init_dictionary(n0, h)
    t["D"] = D
    AD = A @ D
    M = AD.T @ AD
    c = spectral_upper(M, iters=200, seed=seed)
    if variant is Variant.SISTA:
        K = np.eye(h) - M / c
        t["W1"] = K.copy()
        t["W2"] = K.copy()
        t["U1"] = AD.T / c
        t["U2"] = np.zeros((h, h))
        t["gamma_raw"] = np.full(d, np.log(l1 / c))
        return ModelParams(variant, n0, n, h, d, t)
    t["G"] = np.eye(h)
    t["c_raw"] = np.array(np.log(c))
    t["l1_raw"] = np.array(np.log(l1))
    t["l2_raw"] = np.array(np.log(l2))
    if variant is Variant.REWEIGHTED:
        t["Z"] = np.tile(np.eye(h), (d, 1, 1))
        t["g_raw"] = np.zeros((d, h))
    return ModelParams(variant, n0, n, h, d, t)


def to_variant(p: ModelParams, variant) -> ModelParams:
    """Convert between ``reweighted`` and ``l1l1`` parameter sets.

    Going to ``l1l1`` drops ``Z`` and ``g_raw``; going to ``reweighted``
    inserts ``Z = I`` and ``g_raw = 0``.
    """
    variant = Variant(variant)
    rw = {Variant.REWEIGHTED, Variant.L1L1}
    if p.variant not in rw or variant not in rw:
        raise ValueError(f"cannot convert {p.variant.value} to {variant.value}")
    t = {k: v.copy() for k, v in p.tensors.items() if k in tensor_names(variant)}
    if variant is Variant.REWEIGHTED and p.variant is Variant.L1L1:
        t["Z"] = np.tile(np.eye(p.h), (p.d, 1, 1))
        t["g_raw"] = np.zeros((p.d, p.h))
    return ModelParams(variant, p.n0, p.n, p.h, p.d, t)


@dataclass
class Weights:
    """Per-layer ``W_l, U_l`` plus the intermediates needed by backprop."""
    W: list[np.ndarray]
    U: list[np.ndarray]
    t1: np.ndarray | None = None
    t2: np.ndarray | None = None
    M: np.ndarray | None = None
    P: np.ndarray | None = None
    Q: np.ndarray | None = None


def build_weights(p: ModelParams, variant=None) -> Weights:
    """Construct ``W_l, U_l`` from the parameter set.

    For the unfolded variants::

        U_l = (1/c) Z_l D^T A^T
        W_1 = Z_1 G - (1/c) Z_1 D^T A^T A D G
        W_l = Z_l - (1/c) Z_l D^T A^T A D      (l > 1)

    The ``sista`` variant returns ``W = [W1, W2, ..., W2]``, ``U = [U1, U2]``
    and the ``vanilla`` variant its per-layer ``W`` and input maps.
    """
    variant = p.variant if variant is None else Variant(variant)
    if variant is Variant.SISTA:
        return Weights(W=[p["W1"]] + [p["W2"]] * (p.d - 1), U=[p["U1"], p["U2"]])
    if variant is Variant.VANILLA:
        return Weights(W=list(p["W"]), U=[p["U1"]] + list(p["Uh"]))
    c = p.c
    Q = p["A"] @ p["D"]
    P = Q.T
    M = P @ Q
    G = p["G"]
    if variant is Variant.L1L1:
        Zs = np.broadcast_to(np.eye(p.h), (p.d, p.h, p.h))
        g = np.ones((p.d, p.h))
    else:
        Zs = p.Z
        g = p.g
    W, U = [], []
    for l in range(p.d):
        Z = Zs[l]
        ZM = Z @ M
        if l == 0:
            W.append(Z @ G - (ZM @ G) / c)
        else:
            W.append(Z - ZM / c)
        U.append((Z @ P) / c)
    t1, t2 = thresholds(g, p.lambda1, p.lambda2, c)
    return Weights(W=W, U=U, t1=t1, t2=t2, M=M, P=P, Q=Q)


@dataclass
class ForwardTrace:
    """Everything the reverse pass needs.

    ``u``, ``h`` and ``branch`` are ``(T, d, B, h)``; ``anchor`` is ``(T, B, h)``
    (unfolded variants only); ``x`` is ``(T, B, n)``; ``s_hat`` is ``(T, B, n0)``.
    ``s`` holds the frames when the measurements were produced by ``A``.
    """
    variant: Variant
    x: np.ndarray
    h_init: np.ndarray
    u: np.ndarray
    h: np.ndarray
    branch: np.ndarray
    s_hat: np.ndarray
    anchor: np.ndarray | None = None
    s: np.ndarray | None = None

    @property
    def codes(self) -> np.ndarray:
        """Final-layer codes, ``(T, B, h)``."""
        return self.h[:, -1]

    def reconstructions(self) -> np.ndarray:
        """``s_hat`` as ``(B, T, n0)``."""
        return np.swapaxes(self.s_hat, 0, 1)


def _soft(u, gamma):
    br = np.ones(u.shape, dtype=np.int8)
    br[u > gamma] = 0
    br[u < -gamma] = 2
    v = np.where(br == 0, u - gamma, np.where(br == 2, u + gamma, 0.0))
    return v, br


def _batch_time_major(arr, last: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[-1] != last or arr.shape[1] < 1:
        raise DimensionError(what, f"(B, T>=1, {last}) or (T>=1, {last})", arr.shape)
    return np.ascontiguousarray(np.swapaxes(arr, 0, 1)), single


def forward(p: ModelParams, x_seq, variant=None, weights: Weights | None = None) -> ForwardTrace:
    """Run the network on measurements ``x_seq`` of shape ``(B, T, n)`` or ``(T, n)``.

    ``variant`` defaults to ``p.variant``; passing ``l1l1`` for reweighted
    parameters evaluates them with ``Z_l = I`` and ``g_l = 1``.
    """
    variant = p.variant if variant is None else Variant(variant)
    x, _ = _batch_time_major(x_seq, p.n, "forward x_seq")
    w = build_weights(p, variant) if weights is None else weights
    T, B, _ = x.shape
    h, d = p.h, p.d
    u_tr = np.empty((T, d, B, h))
    h_tr = np.empty((T, d, B, h))
    br_tr = np.empty((T, d, B, h), dtype=np.int8)
    h_init = np.broadcast_to(p["h0"], (B, h)).copy()
    anchor_tr = None
    if variant in (Variant.REWEIGHTED, Variant.L1L1):
        anchor_tr = np.empty((T, B, h))
        G = p["G"]
        h_prev = h_init
        for t in range(T):
            anchor = h_prev @ G.T
            anchor_tr[t] = anchor
            inp = h_prev
            for l in range(d):
                u = inp @ w.W[l].T + x[t] @ w.U[l].T
                v, br = prox_rw_array(u, w.t1[l], w.t2[l], anchor)
                u_tr[t, l], h_tr[t, l], br_tr[t, l] = u, v, br
                inp = v
            h_prev = inp
    elif variant is Variant.SISTA:
        gam = p.gamma
        U1, U2 = w.U
        h_prev = h_init
        for t in range(T):
            xu = x[t] @ U1.T
            hu = h_prev @ U2.T
            inp = h_prev
            for l in range(d):
                u = inp @ w.W[l].T + xu
                if l > 0:
                    u = u + hu
                v, br = _soft(u, gam[l])
                u_tr[t, l], h_tr[t, l], br_tr[t, l] = u, v, br
                inp = v
            h_prev = inp
    else:
        gam = p.gamma
        for t in range(T):
            inp = x[t]
            for l in range(d):
                prev = h_init if t == 0 else h_tr[t - 1, l]
                u = prev @ w.W[l].T + inp @ w.U[l].T
                v, br = _soft(u, gam[l])
                u_tr[t, l], h_tr[t, l], br_tr[t, l] = u, v, br
                inp = v
    s_hat = h_tr[:, -1] @ p["D"].T
    return ForwardTrace(variant, x, h_init, u_tr, h_tr, br_tr, s_hat, anchor_tr)


def sense(A, s_seq) -> np.ndarray:
    """Measurements ``x_t = A s_t`` for frames shaped ``(..., n0)``."""
    A = np.asarray(A, dtype=np.float64)
    s_seq = np.asarray(s_seq, dtype=np.float64)
    if s_seq.shape[-1] != A.shape[1]:
        raise DimensionError("sense", f"frame length {A.shape[1]}", s_seq.shape[-1])
    return s_seq @ A.T


def forward_frames(p: ModelParams, s_seq, variant=None) -> ForwardTrace:
    """Sense frames ``(B, T, n0)`` with the model's ``A`` and run ``forward``."""
    s = np.asarray(s_seq, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    if s.ndim != 3 or s.shape[-1] != p.n0:
        raise DimensionError("forward_frames", f"(B, T, {p.n0})", s.shape)
    tr = forward(p, sense(p["A"], s), variant)
    tr.s = np.ascontiguousarray(np.swapaxes(s, 0, 1))
    return tr


def reconstruct(D, h) -> np.ndarray:
    """``s_hat = D h``."""
    D = np.asarray(D, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != D.shape[1]:
        raise DimensionError("reconstruct", f"code length {D.shape[1]}", h.shape[-1])
    return h @ D.T


# -- checkpoint IO ----------------------------------------------------------

CHECKPOINT_FORMAT = "seqsparse-checkpoint"


def save_checkpoint(p: ModelParams, path, epoch: int = 0, seed: int | None = None,
                    extra: dict | None = None) -> Path:
    """Write ``<path>`` (JSON manifest) and ``<path>.bin`` (little-endian float64 sidecar)."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".bin")
    tensors = []
    chunks = []
    scalars = {}
    for name in p.names():
        arr = p[name]
        if name in SCALAR_NAMES:
            scalars[name] = float(arr)
            continue
        tensors.append({"name": name, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").ravel())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "variant": p.variant.value,
        "dims": {"n0": p.n0, "n": p.n, "h": p.h, "d": p.d},
        "scalars": scalars,
        "tensors": tensors,
        "epoch": int(epoch),
        "seed": seed,
        "sidecar": sidecar.name,
    }
    if extra:
        manifest["extra"] = extra
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    sidecar.write_bytes(blob.astype("<f8").tobytes())
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint manifest")
    raw = np.frombuffer((path.parent / manifest["sidecar"]).read_bytes(), dtype="<f8")
    dims = manifest["dims"]
    t: dict[str, np.ndarray] = {}
    off = 0
    for spec in manifest["tensors"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) if shape else 1
        if off + size > raw.size:
            raise ValueError(f"{path}: sidecar truncated at tensor {spec['name']}")
        t[spec["name"]] = raw[off:off + size].reshape(shape).astype(np.float64)
        off += size
    if off != raw.size:
        raise ValueError(f"{path}: sidecar has {raw.size - off} trailing values")
    for name, val in manifest["scalars"].items():
        t[name] = np.array(float(val))
    p = ModelParams(manifest["variant"], dims["n0"], dims["n"], dims["h"], dims["d"], t)
    return p, manifest
