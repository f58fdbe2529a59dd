"""Reverse-mode gradients, Adam with global-norm clipping, and the training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DimensionError, make_rng
from .model import ForwardTrace, ModelParams, Variant, build_weights, forward_frames
from .prox import prox_partials_array

log = logging.getLogger(__name__)

GradientSet = dict  # name -> ndarray, shapes mirror ModelParams.tensors


# -- loss -------------------------------------------------------------------

def loss_seq_mse(s_seq, s_hat_seq) -> float:
    """Mean over the batch of ``sum_t ||s_t - s_hat_t||^2``.

    Inputs are ``(B, T, n0)`` (or a single ``(T, n0)`` sequence).
    """
    s = np.asarray(s_seq, dtype=np.float64)
    sh = np.asarray(s_hat_seq, dtype=np.float64)
    if s.shape != sh.shape:
        raise DimensionError("loss_seq_mse", s.shape, sh.shape)
    if s.ndim == 2:
        s, sh = s[None], sh[None]
    diff = s - sh
    return float(np.sum(diff * diff) / s.shape[0])


def pixel_mse(s_seq, s_hat_seq) -> float:
    """Mean squared error per pixel."""
    s = np.asarray(s_seq, dtype=np.float64)
    diff = s - np.asarray(s_hat_seq, dtype=np.float64)
    return float(np.mean(diff * diff))


# -- reverse pass -----------------------------------------------------------

def _soft_partials(branch):
    du = (branch != 1).astype(np.float64)
    dgam = np.where(branch == 0, -1.0, np.where(branch == 2, 1.0, 0.0))
    return du, dgam


def backward(trace: ForwardTrace, p: ModelParams, s_seq=None, freeze_A: bool = False,
             d_s_hat=None) -> GradientSet:
    """Gradients of ``loss_seq_mse`` with respect to every raw parameter.

    ``s_seq`` is ``(B, T, n0)``; it defaults to the frames stored in the trace.
    When the trace was produced from frames (``forward_frames``), ``A`` also
    receives gradient through ``x_t = A s_t`` unless ``freeze_A`` is set.
    ``d_s_hat`` overrides the loss gradient (time-major, for testing).
    """
    variant = trace.variant
    T, d, B, hdim = trace.h.shape
    if hdim != p.h or d != p.d or trace.x.shape[2] != p.n:
        raise DimensionError("backward", (p.d, p.h, p.n), (d, hdim, trace.x.shape[2]))
    if d_s_hat is None:
        if s_seq is None:
            if trace.s is None:
                raise ValueError("backward: no target frames")
            s = trace.s
        else:
            s = np.swapaxes(np.asarray(s_seq, dtype=np.float64), 0, 1)
            if s.ndim == 2:
                s = s[:, None]
        if s.shape != trace.s_hat.shape:
            raise DimensionError("backward targets", trace.s_hat.shape, s.shape)
        d_s_hat = 2.0 * (trace.s_hat - s) / B
    w = build_weights(p, variant)
    D = p["D"]
    grads = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    dW = [np.zeros_like(m) for m in w.W]
    dU = [np.zeros_like(m) for m in w.U]
    dx = np.zeros_like(trace.x)

    # output layer
    hd = trace.h[:, -1]
    grads["D"] += np.einsum("tbi,tbj->ij", d_s_hat, hd)
    dh_top = d_s_hat @ D  # (T, B, h)

    if variant in (Variant.REWEIGHTED, Variant.L1L1):
        dt1 = np.zeros((d, hdim))
        dt2 = np.zeros((d, hdim))
        dG = np.zeros((hdim, hdim))
        G = p["G"]
        carry = np.zeros((B, hdim))
        for t in range(T - 1, -1, -1):
            h_prev = trace.h_init if t == 0 else trace.h[t - 1, -1]
            anchor = trace.anchor[t]
            dh = dh_top[t] + carry
            d_anchor = np.zeros((B, hdim))
            d_prev = np.zeros((B, hdim))
            for l in range(d - 1, -1, -1):
                p_u, p_a, p_1, p_2 = prox_partials_array(trace.branch[t, l], anchor)
                du = dh * p_u
                d_anchor += dh * p_a
                dt1[l] += np.sum(dh * p_1, axis=0)
                dt2[l] += np.sum(dh * p_2, axis=0)
                inp = h_prev if l == 0 else trace.h[t, l - 1]
                dW[l] += du.T @ inp
                dU[l] += du.T @ trace.x[t]
                dx[t] += du @ w.U[l]
                dinp = du @ w.W[l]
                if l == 0:
                    d_prev += dinp
                else:
                    dh = dinp
            dG += d_anchor.T @ h_prev
            d_prev += d_anchor @ G
            carry = d_prev
        d_h0 = carry
        _unfolded_param_grads(p, variant, w, dW, dU, dt1, dt2, dG, grads)
    elif variant is Variant.SISTA:
        gam = p.gamma
        dgam = np.zeros(d)
        carry = np.zeros((B, hdim))
        for t in range(T - 1, -1, -1):
            h_prev = trace.h_init if t == 0 else trace.h[t - 1, -1]
            dh = dh_top[t] + carry
            d_prev = np.zeros((B, hdim))
            for l in range(d - 1, -1, -1):
                p_u, p_g = _soft_partials(trace.branch[t, l])
                du = dh * p_u
                dgam[l] += np.sum(dh * p_g)
                inp = h_prev if l == 0 else trace.h[t, l - 1]
                if l == 0:
                    grads["W1"] += du.T @ inp
                    d_prev += du @ p["W1"]
                else:
                    grads["W2"] += du.T @ inp
                    grads["U2"] += du.T @ h_prev
                    d_prev += du @ p["U2"]
                    dh = du @ p["W2"]
                grads["U1"] += du.T @ trace.x[t]
                dx[t] += du @ p["U1"]
            carry = d_prev
        d_h0 = carry
        grads["gamma_raw"] += dgam * gam
    else:
        gam = p.gamma
        dgam = np.zeros(d)
        carry = np.zeros((d, B, hdim))
        for t in range(T - 1, -1, -1):
            dh = dh_top[t] + carry[d - 1]
            new_carry = np.zeros_like(carry)
            for l in range(d - 1, -1, -1):
                p_u, p_g = _soft_partials(trace.branch[t, l])
                du = dh * p_u
                dgam[l] += np.sum(dh * p_g)
                prev = trace.h_init if t == 0 else trace.h[t - 1, l]
                grads["W"][l] += du.T @ prev
                new_carry[l] = du @ p["W"][l]
                if l == 0:
                    grads["U1"] += du.T @ trace.x[t]
                    dx[t] += du @ p["U1"]
                else:
                    grads["Uh"][l - 1] += du.T @ trace.h[t, l - 1]
                    dh = du @ p["Uh"][l - 1] + carry[l - 1]
            carry = new_carry
        d_h0 = carry.sum(axis=0)
        grads["gamma_raw"] += dgam * gam

    grads["h0"] += d_h0.sum(axis=0)
    if trace.s is not None and not freeze_A:
        grads["A"] += np.einsum("tbi,tbj->ij", dx, trace.s)
    if freeze_A:
        grads["A"][...] = 0.0
    return grads


def _unfolded_param_grads(p, variant, w, dW, dU, dt1, dt2, dG, grads):
    """Chain ``dW_l, dU_l, dt1_l, dt2_l`` back to ``A, D, G, Z, g, c, lambdas``."""
    c = p.c
    lam1, lam2 = p.lambda1, p.lambda2
    M, P, Q = w.M, w.P, w.Q
    G = p["G"]
    Zs = p.Z if variant is Variant.REWEIGHTED else np.broadcast_to(np.eye(p.h), (p.d, p.h, p.h))
    g = p.g if variant is Variant.REWEIGHTED else np.ones((p.d, p.h))
    dM = np.zeros_like(M)
    dP = np.zeros_like(P)
    dc = 0.0
    dZ = np.zeros((p.d, p.h, p.h))
    for l in range(p.d):
        Z = Zs[l]
        ZM = Z @ M
        if l == 0:
            # W1 = Z1 G - Z1 M G / c
            K = np.eye(p.h) - M / c
            dZ[l] += dW[l] @ (K @ G).T
            dG += (Z @ K).T @ dW[l]
            dM -= Z.T @ dW[l] @ G.T / c
            dc += float(np.sum(dW[l] * (ZM @ G))) / (c * c)
        else:
            # W_l = Z_l - Z_l M / c
            dZ[l] += dW[l] - dW[l] @ M.T / c
            dM -= Z.T @ dW[l] / c
            dc += float(np.sum(dW[l] * ZM)) / (c * c)
        # U_l = Z_l P / c
        dZ[l] += dU[l] @ P.T / c
        dP += Z.T @ dU[l] / c
        dc -= float(np.sum(dU[l] * w.U[l])) / c
    # thresholds t1 = lam1 g / c, t2 = lam2 g / c
    dlam1 = float(np.sum(dt1 * g)) / c
    dlam2 = float(np.sum(dt2 * g)) / c
    dc -= float(np.sum(dt1 * w.t1) + np.sum(dt2 * w.t2)) / c
    # Q = A D, P = Q^T, M = Q^T Q
    dQ = dP.T + Q @ (dM + dM.T)
    grads["A"] += dQ @ p["D"].T
    grads["D"] += p["A"].T @ dQ
    grads["G"] += dG
    grads["c_raw"] += dc * c
    grads["l1_raw"] += dlam1 * lam1
    grads["l2_raw"] += dlam2 * lam2
    if variant is Variant.REWEIGHTED:
        grads["Z"] += dZ
        dg = (dt1 * lam1 + dt2 * lam2) / c
        grads["g_raw"] += dg * g


def loss_and_grad(p: ModelParams, s_batch, freeze_A: bool = False):
    tr = forward_frames(p, s_batch)
    loss = loss_seq_mse(np.swapaxes(tr.s, 0, 1), tr.reconstructions())
    return loss, backward(tr, p, freeze_A=freeze_A), tr


# -- optimizer --------------------------------------------------------------

def global_norm(g: GradientSet) -> float:
    return float(math.sqrt(sum(float(np.sum(v * v)) for v in g.values())))


def clip_global_norm(g: GradientSet, max_norm: float) -> GradientSet:
    """Rescale all gradients jointly when their global l2 norm exceeds ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(g)
    if norm <= max_norm:
        return {k: v.copy() for k, v in g.items()}
    scale = max_norm / norm
    return {k: v * scale for k, v in g.items()}


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, p: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in p.tensors.items()},
            v={k: np.zeros_like(v) for k, v in p.tensors.items()},
        )


def adam_step(p: ModelParams, g: GradientSet, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, state)``; ``state`` is updated in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    new = p.copy()
    for k in p.names():
        gk = g[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * gk
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * gk * gk
        mhat = state.m[k] / bc1
        vhat = state.v[k] / bc2
        new.tensors[k] = p.tensors[k] - lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, state


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without a new best."""

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.3):
        if not 0 < factor < 1:
            raise ValueError("factor must be in (0, 1)")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


# -- training loop ----------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 3e-4
    clip_norm: float = 0.25
    plateau_patience: int = 5
    plateau_factor: float = 0.3
    seed: int = 0
    freeze_A: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.plateau_patience < 1:
            raise ValueError("epochs, batch_size and plateau_patience must be positive")
        if self.lr < 0 or self.clip_norm <= 0:
            raise ValueError("lr must be >= 0 and clip_norm > 0")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord] = field(default_factory=list)


def evaluate_mse(p: ModelParams, frames, batch_size: int = 256) -> float:
    """Per-pixel MSE of the model over ``frames`` ``(N, T, n0)``."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] == 0:
        raise ValueError("evaluate_mse: no sequences")
    total = 0.0
    for i in range(0, frames.shape[0], batch_size):
        chunk = frames[i:i + batch_size]
        tr = forward_frames(p, chunk)
        diff = chunk - tr.reconstructions()
        total += float(np.sum(diff * diff))
    return total / frames.size


def search_lambdas(p: ModelParams, val_frames, trials: int, seed: int,
                   lo: float = 1e-5, hi: float = 3.0) -> ModelParams:
    """Random log-uniform search of the initial ``lambda1, lambda2`` on validation data.

    Only applies to variants with lambdas; the starting pair is one of the candidates.
    """
    if "l1_raw" not in p.tensors or trials <= 0:
        return p
    rng = make_rng(seed)
    best = p
    best_mse = evaluate_mse(p, val_frames)
    for _ in range(trials):
        cand = p.copy()
        cand.tensors["l1_raw"] = np.array(rng.uniform(np.log(lo), np.log(hi)))
        cand.tensors["l2_raw"] = np.array(rng.uniform(np.log(lo), np.log(hi)))
        mse = evaluate_mse(cand, val_frames)
        if mse < best_mse:
            best, best_mse = cand, mse
    return best


def train_loop(p: ModelParams, train_frames, val_frames, cfg: TrainConfig,
               on_epoch=None) -> TrainResult:
    """Minibatch Adam on ``loss_seq_mse`` with clipping and a plateau LR schedule.

    ``train_frames`` / ``val_frames`` are ``(N, T, n0)``. Losses in the history
    are per-pixel MSE over the full split, evaluated after each epoch.
    """
    train_frames = np.asarray(train_frames, dtype=np.float64)
    val_frames = np.asarray(val_frames, dtype=np.float64)
    if train_frames.shape[0] == 0 or val_frames.shape[0] == 0:
        raise ValueError("train_loop: empty dataset split")
    rng = make_rng(cfg.seed)
    state = AdamState.zeros_like(p)
    sched = PlateauScheduler(cfg.lr, cfg.plateau_patience, cfg.plateau_factor)
    result = TrainResult(p)
    N = train_frames.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        lr = sched.lr
        order = rng.permutation(N)
        for i in range(0, N, cfg.batch_size):
            batch = train_frames[order[i:i + cfg.batch_size]]
            _, grads, _ = loss_and_grad(p, batch, freeze_A=cfg.freeze_A)
            grads = clip_global_norm(grads, cfg.clip_norm)
            if lr > 0:
                p, state = adam_step(p, grads, state, lr)
        rec = EpochRecord(epoch, evaluate_mse(p, train_frames), evaluate_mse(p, val_frames), lr)
        result.history.append(rec)
        sched.step(rec.val_mse)
        log.info("epoch %d train %.6g val %.6g lr %.3g", epoch, rec.train_mse, rec.val_mse, lr)
        if on_epoch is not None:
            on_epoch(rec, p)
    result.params = p
    return result


HISTORY_COLUMNS = ("epoch", "train_mse", "val_mse", "lr")


def history_csv(history) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(HISTORY_COLUMNS)
    for r in history:
        wr.writerow([r.epoch, repr(r.train_mse), repr(r.val_mse), repr(r.lr)])
    return buf.getvalue()


def write_history(history, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(history_csv(history))
    return path


def read_history(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        return [
            EpochRecord(int(r["epoch"]), float(r["train_mse"]), float(r["val_mse"]), float(r["lr"]))
            for r in csv.DictReader(fh)
        ]


# -- finite differences -----------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    step: float
    skipped: int
    checked: int
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    @property
    def step_warning(self) -> str | None:
        if self.step > 1e-4:
            return f"step {self.step:g} is coarse; central differences carry O(step^2) bias"
        return None


def _branch_signature(tr: ForwardTrace):
    if tr.anchor is None:
        return tr.branch
    sign = np.broadcast_to((tr.anchor >= 0)[:, None], tr.branch.shape)
    return tr.branch + 8 * sign


def finite_diff_check(p: ModelParams, s_seq, step: float = 1e-6, freeze_A: bool = False,
                      corrupt: float = 0.0, tol: float = 1e-4) -> GradCheckReport:
    """Compare ``backward`` against central differences of the loss.

    Perturbation per coordinate is ``step * max(1, |theta_i|)``. Coordinates
    whose perturbation moves any activation to a different branch straddle a
    kink and are skipped. The error per parameter group is
    ``max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)``
    over checked coordinates. ``corrupt`` adds a bias to the analytic
    gradient (negative control).
    """
    s = np.asarray(s_seq, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    loss0, grads, tr0 = loss_and_grad(p, s, freeze_A=freeze_A)
    sig0 = _branch_signature(tr0)
    errors: dict[str, float] = {}
    skipped = checked = 0

    def eval_at(name, idx, val):
        q = p.copy()
        q.tensors[name][idx] = val
        tr = forward_frames(q, s)
        return loss_seq_mse(s, tr.reconstructions()), _branch_signature(tr)

    for name in p.names():
        if freeze_A and name == "A":
            continue
        arr = p[name]
        ana = grads[name] + corrupt
        num = np.zeros_like(arr)
        keep = np.zeros(arr.shape, dtype=bool)
        for idx in np.ndindex(arr.shape):
            base = float(arr[idx])
            hstep = step * max(1.0, abs(base))
            lp, sp = eval_at(name, idx, base + hstep)
            lm, sm = eval_at(name, idx, base - hstep)
            if not (np.array_equal(sp, sig0) and np.array_equal(sm, sig0)):
                skipped += 1
                continue
            num[idx] = (lp - lm) / (2.0 * hstep)
            keep[idx] = True
            checked += 1
        if not keep.any():
            continue
        a, nmr = ana[keep], num[keep]
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(nmr))))
        errors[name] = 0.0 if scale == 0 else float(np.max(np.abs(a - nmr)) / scale)
    return GradCheckReport(errors, step, skipped, checked, tol)


def tiny_instance(variant, seed: int = 0, n0: int = 8, n: int = 4, h: int = 12, d: int = 2, T: int = 3,
                  batch: int = 2):
    """Canonical gradient-check instance: random non-trivial parameters and frames."""
    from .model import init_params

    variant = Variant(variant)
    p = init_params(variant, n0, n, h, d, seed, lambda1=0.05, lambda2=0.03)
    rng = make_rng(seed + 1)
    for k, v in p.tensors.items():
        if v.ndim >= 1 and k not in ("g_raw", "gamma_raw"):
            p.tensors[k] = v + 0.1 * rng.standard_normal(v.shape)
    if "g_raw" in p.tensors:
        p.tensors["g_raw"] = 0.3 * rng.standard_normal(p["g_raw"].shape)
    if "gamma_raw" in p.tensors:
        p.tensors["gamma_raw"] = np.log(0.05) + 0.3 * rng.standard_normal(d)
    s = rng.uniform(0.0, 1.0, (batch, T, n0))
    return p, s
