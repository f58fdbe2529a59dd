"""Rademacher-complexity bounds for the unfolded networks and reference RNNs.

Logarithms are natural. Each function evaluates one closed-form bound from
norm constraints; ``norms_from_params`` measures those norms on a model.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import geom_sum, norm_1_inf, norm_2_inf
from .model import ModelParams, Variant, build_weights, forward_frames, sense


@dataclass
class NormProfile:
    alpha: list[float]
    beta: list[float]
    B_x: float
    B_h: float
    h0_inf: float
    d: int
    T: int
    n: int
    h: int
    m: int
    beta2: float = 0.0

    def __post_init__(self):
        self.alpha = [float(a) for a in self.alpha]
        self.beta = [float(b) for b in self.beta]
        if len(self.alpha) != self.d or len(self.beta) != self.d:
            raise ValueError(f"alpha/beta need {self.d} entries, got {len(self.alpha)}/{len(self.beta)}")
        if min(self.d, self.T, self.n, self.h, self.m) < 1:
            raise ValueError("counts must be >= 1")
        norms = self.alpha + self.beta + [self.B_x, self.B_h, self.h0_inf, self.beta2]
        if any(v < 0 or not math.isfinite(v) for v in norms):
            raise ValueError("norms must be finite and non-negative")

    def with_(self, **kw) -> "NormProfile":
        data = asdict(self)
        data.update(kw)
        return NormProfile(**data)


def capital_lambda(alpha, l: int) -> float:
    """Product of the downstream layer norms ``alpha_{l+1} ... alpha_d`` (1 when ``l == d``)."""
    d = len(alpha)
    if not 0 <= l <= d:
        raise IndexError(f"layer index {l} outside [0, {d}]")
    out = 1.0
    for a in alpha[l:]:
        out *= float(a)
    return out


def _complexity_prefactor(depth_times_T: int, n: int, h: int, m: int) -> float:
    return math.sqrt(2.0 * (4.0 * depth_times_T * math.log(2.0) + math.log(n) + math.log(h)) / m)


def bound_theorem2(np_: NormProfile) -> float:
    """Whole-sequence bound for the reweighted network with depth ``d`` over ``T`` steps."""
    lam0 = capital_lambda(np_.alpha, 0)
    weighted_beta = sum(b * capital_lambda(np_.alpha, l + 1) for l, b in enumerate(np_.beta))
    geom = geom_sum(lam0, np_.T)
    inner = (weighted_beta * geom * np_.B_x) ** 2 + (lam0**np_.T * np_.h0_inf) ** 2
    return _complexity_prefactor(np_.d * np_.T, np_.n, np_.h, np_.m) * math.sqrt(inner)


def bound_corollary(np_: NormProfile, which: str) -> float:
    """Per-time-step bounds.

    ``cor1``: reweighted network, all layer norms. ``cor2``: l1-l1 network,
    uses ``alpha[0], alpha[1], beta[0]``. ``cor3``: Sista network, adds
    ``beta2`` (the hidden-to-hidden skip weight). With ``d == 1`` the second
    layer norm is unused and taken equal to the first.
    """
    pre = _complexity_prefactor(np_.d, np_.n, np_.h, np_.m)
    d = np_.d
    if which == "cor1":
        lam0 = capital_lambda(np_.alpha, 0)
        weighted_beta = sum(b * capital_lambda(np_.alpha, l + 1) for l, b in enumerate(np_.beta))
        return pre * math.sqrt((weighted_beta * np_.B_x) ** 2 + (lam0 * np_.B_h) ** 2)
    if which not in ("cor2", "cor3"):
        raise ValueError(f"unknown corollary {which!r}")
    if not np_.alpha or not np_.beta:
        raise ValueError(f"{which} needs alpha1, alpha2 and beta1")
    a1 = np_.alpha[0]
    a2 = np_.alpha[1] if d > 1 else np_.alpha[0]
    b1 = np_.beta[0]
    x_term = (b1 * geom_sum(a2, d) * np_.B_x) ** 2
    h_coef = a1 * a2 ** (d - 1)
    if which == "cor3" and d > 1:
        h_coef += np_.beta2 * geom_sum(a2, d - 1)
    return pre * math.sqrt(x_term + (h_coef * np_.B_h) ** 2)


def bound_fastrnn(alpha_F: float, beta_F: float, B: float, a: float, T: int, m: int,
                  variant: str = "general") -> float:
    """FastRNN bound (``a + b = 1``); ``small_a`` needs ``a <= 1/(2(2 alpha_F - 1) T)``."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"a must lie in [0, 1], got {a}")
    pre = 2.0 * a / math.sqrt(m) * B * beta_F
    k = 2.0 * alpha_F - 1.0
    if variant == "general":
        if pre == 0.0:
            return 0.0
        # ((1 + a k)^{T+1} - 1) / (a k) written as a geometric sum
        return pre * geom_sum(1.0 + a * k, T + 1)
    if variant == "small_a":
        if k <= 0:
            raise ValueError(f"small_a form needs alpha_F > 0.5, got {alpha_F}")
        limit = 1.0 / (2.0 * k * T)
        if a > limit:
            raise ValueError(f"small_a form needs a <= {limit:.6g}, got a = {a}")
        return pre * (2.0 * a * k * (T + 1) - 1.0) / k
    raise ValueError(f"unknown FastRNN variant {variant!r}")


def bound_spectralrnn(W_F, U_F, Y_F, W_2, U_2, Y_2, B, T, gamma, xi, m, delta) -> float:
    """SpectralRNN PAC-Bayes margin bound, implied constant taken as 1 (up to constant)."""
    if gamma <= 0 or not 0 < delta < 1:
        raise ValueError("gamma must be > 0 and delta in (0, 1)")
    zeta = max(W_2 ** (2 * T - 2), 1.0) * max(U_2**2, 1.0) * max(Y_2**2, 1.0)
    lead = (B**2 * T**4 * xi * math.log(xi) / gamma**2) * (W_F**2 + U_F**2 + Y_F**2) * zeta
    return math.sqrt(lead + math.log(m / delta)) / math.sqrt(m)


def bound_rw_d1(alpha1, beta1, B_x, T, n, h, m) -> float:
    """Single-layer reweighted bound with ``h0 = 0``."""
    return (
        math.sqrt((4.0 * T * math.log(2.0) + math.log(n) + math.log(h)) / m)
        * math.sqrt(2.0) * beta1 * geom_sum(alpha1, T) * B_x
    )


def gen_error_bound(rademacher: float, eta: float, delta: float, m: int) -> float:
    """``2 R + 4 eta sqrt(2 log(4/delta) / m)``."""
    if eta < 0 or not 0 < delta < 1 or m < 1:
        raise ValueError("need eta >= 0, delta in (0, 1), m >= 1")
    return 2.0 * rademacher + 4.0 * eta * math.sqrt(2.0 * math.log(4.0 / delta) / m)


# -- measuring norms --------------------------------------------------------

def norms_from_params(p: ModelParams, frames, T: int | None = None) -> NormProfile:
    """Norm profile of a model on a dataset of ``m`` sequences ``(m, T, n0)``.

    ``alpha_l, beta_l`` are the ``(1, inf)`` norms of the built ``W_l, U_l``.
    ``B_x`` is ``max_t ||X_t||_{2,inf} / sqrt(m)`` where ``X_t`` stacks the
    ``m`` measurement vectors at time ``t`` as columns; ``B_h`` is the same
    statistic over the previous-step final-layer states (``h0`` included).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError("norms_from_params: need a non-empty (m, T, n0) dataset")
    m, T_data, _ = frames.shape
    w = build_weights(p)
    if p.variant is Variant.SISTA:
        alpha = [norm_1_inf(W) for W in w.W]
        beta = [norm_1_inf(p["U1"])] * p.d
        beta2 = norm_2_inf(p["U2"])
    else:
        alpha = [norm_1_inf(W) for W in w.W]
        beta = [norm_1_inf(U) for U in w.U]
        beta2 = 0.0
    x = sense(p["A"], frames)  # (m, T, n)
    # ||X_t||_{2,inf}: rows are measurement coordinates, columns the m samples
    B_x = float(np.sqrt(np.max(np.sum(x * x, axis=0))) / math.sqrt(m))
    tr = forward_frames(p, frames)
    prev = np.concatenate([tr.h_init[None], tr.h[:-1, -1]], axis=0)  # (T, m, h)
    B_h = float(np.sqrt(np.max(np.sum(prev * prev, axis=1))) / math.sqrt(m))
    h0_inf = float(np.max(np.abs(p["h0"]))) if p.h else 0.0
    return NormProfile(alpha, beta, B_x, B_h, h0_inf, p.d, T or T_data, p.n, p.h, m, beta2)


def empirical_gap(history) -> list[float]:
    """Validation minus training loss per epoch."""
    return [float(r.val_mse) - float(r.train_mse) for r in history]


# -- reports ----------------------------------------------------------------

@dataclass
class BoundReport:
    values: dict[str, float | None]
    profile: NormProfile
    params: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"bounds": self.values, "profile": asdict(self.profile), "params": self.params,
             "notes": self.notes},
            indent=2, sort_keys=True,
        ) + "\n"


REPORT_KEYS = ("theorem2", "cor1", "cor2", "cor3", "fastrnn_a", "fastrnn_b", "spectralrnn", "rw_d1",
               "gen_error")


def bound_report(prof: NormProfile, *, eta: float = 1.0, delta: float = 0.05, fast_a: float = 0.5,
                 alpha_F: float | None = None, beta_F: float | None = None, B: float | None = None,
                 spectral: dict | None = None) -> BoundReport:
    """Evaluate every bound on one profile.

    FastRNN and SpectralRNN inputs default to the profile's first-layer norms
    when not supplied. The FastRNN small-``a`` form is ``None`` when its
    assumption on ``a`` fails and is floored at 0 (with a note) when the
    expression goes negative.
    """
    vals: dict[str, float | None] = {}
    vals["theorem2"] = bound_theorem2(prof)
    for k in ("cor1", "cor2", "cor3"):
        vals[k] = bound_corollary(prof, k)
    alpha_F = prof.alpha[0] if alpha_F is None else alpha_F
    beta_F = prof.beta[0] if beta_F is None else beta_F
    B = prof.B_x if B is None else B
    vals["fastrnn_a"] = bound_fastrnn(alpha_F, beta_F, B, fast_a, prof.T, prof.m, "general")
    notes = []
    try:
        raw_b = bound_fastrnn(alpha_F, beta_F, B, fast_a, prof.T, prof.m, "small_a")
        vals["fastrnn_b"] = max(raw_b, 0.0)
        if raw_b < 0:
            notes.append(f"fastrnn_b literal value {raw_b!r} is negative and is reported as 0")
    except ValueError as exc:
        vals["fastrnn_b"] = None
        notes.append(f"fastrnn_b not applicable: {exc}")
    sp = dict(W_F=alpha_F, U_F=beta_F, Y_F=1.0, W_2=alpha_F, U_2=beta_F, Y_2=1.0, gamma=1.0,
              xi=max(prof.n, prof.h))
    sp.update(spectral or {})
    vals["spectralrnn"] = bound_spectralrnn(
        sp["W_F"], sp["U_F"], sp["Y_F"], sp["W_2"], sp["U_2"], sp["Y_2"], B, prof.T,
        sp["gamma"], sp["xi"], prof.m, delta,
    )
    vals["rw_d1"] = bound_rw_d1(prof.alpha[0], prof.beta[0], prof.B_x, prof.T, prof.n, prof.h, prof.m)
    vals["gen_error"] = gen_error_bound(vals["theorem2"], eta, delta, prof.m)
    notes += [
        "spectralrnn is evaluated up to its unspecified constant (taken as 1)",
        "gen_error assumes a 1-Lipschitz loss bounded by eta; eta is user-supplied",
    ]
    params = {"eta": eta, "delta": delta, "fast_a": fast_a, "alpha_F": alpha_F, "beta_F": beta_F, "B": B,
              "spectral": sp}
    return BoundReport(vals, prof, params, notes)


def sweep_csv(prof: NormProfile, Ts, **kw) -> str:
    """One CSV row per horizon ``T`` with every report key as a column."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("T",) + REPORT_KEYS)
    for T in Ts:
        rep = bound_report(prof.with_(T=int(T)), **kw)
        wr.writerow([int(T)] + ["" if rep.values[k] is None else repr(rep.values[k]) for k in REPORT_KEYS])
    return buf.getvalue()
