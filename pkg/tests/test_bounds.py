import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsparse.bounds import (REPORT_KEYS, NormProfile, bound_corollary, bound_fastrnn, bound_report,
                              bound_rw_d1, bound_spectralrnn, bound_theorem2, capital_lambda, empirical_gap,
                              gen_error_bound, norms_from_params, sweep_csv)
from seqsparse.core import make_rng
from seqsparse.model import init_params
from seqsparse.train import EpochRecord

norm = st.floats(0.0, 3.0)


def profile(alpha, beta, B_x=1.0, B_h=0.5, h0=0.2, T=4, n=16, h=32, m=100, beta2=0.0):
    return NormProfile(list(alpha), list(beta), B_x, B_h, h0, len(alpha), T, n, h, m, beta2)


def test_capital_lambda():
    assert capital_lambda([2, 2, 2], 0) == 8
    assert capital_lambda([2, 2, 2], 2) == 2
    assert capital_lambda([2, 2, 2], 3) == 1
    a = make_rng(0).uniform(0.5, 2, 7)
    loop = 1.0
    for x in a[3:]:
        loop *= x
    assert capital_lambda(a, 3) == pytest.approx(loop, rel=1e-15)
    with pytest.raises(IndexError):
        capital_lambda([1, 2], 3)


def test_sequence_bound_hand_value():
    p = profile([2.0], [1.0], B_x=1.0, h0=0.0, T=1, n=16, h=32, m=100)
    expect = math.sqrt(2 * (4 * math.log(2) + math.log(16) + math.log(32)) / 100)
    assert bound_theorem2(p) == pytest.approx(expect, rel=1e-14)
    assert bound_theorem2(p) == pytest.approx(0.4245, abs=1e-3)


def test_sequence_bound_zero_and_unit_alpha():
    assert bound_theorem2(profile([1.5, 2.0], [1.0, 1.0], B_x=0.0, h0=0.0)) == 0.0
    p = profile([1.0, 1.0], [0.7, 0.4], B_x=1.3, h0=0.0, T=6)
    pre = math.sqrt(2 * (4 * 2 * 6 * math.log(2) + math.log(16) + math.log(32)) / 100)
    assert bound_theorem2(p) == pytest.approx(pre * (0.7 + 0.4) * 6 * 1.3, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(norm, min_size=1, max_size=5), norm, norm, norm)
def test_sequence_bound_at_T1_equals_step_bound(alpha, b, B_x, h0):
    beta = [b * (k + 1) for k in range(len(alpha))]
    p = profile(alpha, beta, B_x=B_x, B_h=h0, h0=h0, T=1)
    assert bound_theorem2(p) == pytest.approx(bound_corollary(p, "cor1"), rel=1e-14, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(norm, norm, norm, st.integers(1, 6), norm, norm)
def test_l1l1_step_bound_is_reweighted_with_tied_norms(a1, a2, b1, d, B_x, B_h):
    p = profile([a1] + [a2] * (d - 1), [b1] * d, B_x=B_x, B_h=B_h)
    assert bound_corollary(p, "cor2") == pytest.approx(bound_corollary(p, "cor1"), rel=1e-12, abs=1e-300)
    assert bound_corollary(p.with_(beta2=0.0), "cor3") == pytest.approx(bound_corollary(p, "cor2"), rel=1e-14,
                                                                        abs=1e-300)


def test_sista_step_bound_grows_with_skip_weight():
    p = profile([1.2, 0.9, 0.9], [0.5, 0.5, 0.5])
    assert bound_corollary(p.with_(beta2=0.4), "cor3") > bound_corollary(p, "cor2")
    with pytest.raises(ValueError):
        bound_corollary(p, "cor4")


def test_fastrnn_cases():
    assert bound_fastrnn(1.5, 1, 1, 0.0, 10, 100, "general") == 0.0
    assert bound_fastrnn(1.5, 1, 1, 0.0, 10, 100, "small_a") == 0.0
    a, T, m = 0.3, 7, 50
    pre = 2 * a / math.sqrt(m)
    assert bound_fastrnn(1.0, 1, 1, a, T, m) == pytest.approx(pre * ((1 + a) ** (T + 1) - 1) / a, rel=1e-13)
    direct = 2 * 0.1 / math.sqrt(100) * ((1 + 0.1 * 2.0) ** 11 - 1) / (0.1 * 2.0)
    assert bound_fastrnn(1.5, 1, 1, 0.1, 10, 100) == pytest.approx(direct, rel=1e-13)
    assert direct == pytest.approx(0.64301, abs=1e-5)


def test_fastrnn_small_a_assumption():
    with pytest.raises(ValueError, match="0.03125"):
        bound_fastrnn(1.5, 1, 1, 0.05, 8, 100, "small_a")
    with pytest.raises(ValueError):
        bound_fastrnn(1.5, 1, 1, 1.5, 8, 100)
    k, T, a = 2.0, 8, 0.03
    assert bound_fastrnn(1.5, 1, 1, a, T, 100, "small_a") == pytest.approx(
        2 * a / 10 * (2 * a * k * (T + 1) - 1) / k, rel=1e-14)


def test_spectral_cases():
    base = dict(W_F=1.0, U_F=0.5, Y_F=0.7, W_2=0.9, U_2=0.5, Y_2=0.3, B=1.0, gamma=1.0, xi=32, m=100, delta=0.05)
    v1 = bound_spectralrnn(T=4, **base)
    v2 = bound_spectralrnn(T=8, **base)
    log_term = math.log(100 / 0.05)
    lead1 = v1**2 * 100 - log_term
    lead2 = v2**2 * 100 - log_term
    assert lead2 / lead1 == pytest.approx(16.0, rel=1e-10)
    W_F, U_F, Y_F, W_2, U_2, Y_2 = 2.0, 1.5, 1.0, 1.2, 1.1, 0.5
    zeta = max(W_2 ** 6, 1) * max(U_2**2, 1) * max(Y_2**2, 1)
    expect = math.sqrt((4 * 256 * 32 * math.log(32)) * (4 + 2.25 + 1) * zeta + log_term) / 10
    got = bound_spectralrnn(W_F, U_F, Y_F, W_2, U_2, Y_2, 2.0, 4, 1.0, 32, 100, 0.05)
    assert got == pytest.approx(expect, rel=1e-13)


def test_rw_d1():
    p = profile([1.7], [0.8], B_x=1.1, h0=0.0, T=1)
    assert bound_rw_d1(1.7, 0.8, 1.1, 1, 16, 32, 100) == pytest.approx(bound_theorem2(p), rel=1e-14)
    pre = math.sqrt((4 * 9 * math.log(2) + math.log(16) + math.log(32)) / 100)
    assert bound_rw_d1(1.0, 0.8, 1.1, 9, 16, 32, 100) == pytest.approx(pre * math.sqrt(2) * 0.8 * 9 * 1.1, rel=1e-14)
    for T in (2, 5, 11):
        closed = math.sqrt((4 * T * math.log(2) + math.log(16) + math.log(32)) / 100) * math.sqrt(2) * 0.8 * (
            (1.7**T - 1) / 0.7) * 1.1
        assert bound_rw_d1(1.7, 0.8, 1.1, T, 16, 32, 100) == pytest.approx(closed, rel=1e-12)


def test_gen_error():
    assert gen_error_bound(0.0, 0.0, 0.05, 10) == 0.0
    assert gen_error_bound(0.5, 1.0, 0.05, 800) == pytest.approx(1 + 4 * math.sqrt(2 * math.log(80) / 800), rel=1e-14)
    assert gen_error_bound(0.5, 1.0, 0.05, 800) == pytest.approx(1.4187, abs=1e-4)
    vals = [gen_error_bound(0.1, 1.0, 0.05, m) for m in (10, 100, 1000)]
    assert vals[0] > vals[1] > vals[2]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 2.5), min_size=1, max_size=4), st.floats(0.1, 2.0), st.integers(0, 3),
       st.sampled_from(["alpha", "beta", "B_x", "T"]))
def test_bounds_nondecreasing(alpha, b, idx, which):
    d = len(alpha)
    p = profile(alpha, [b] * d, B_x=0.8, B_h=0.3, h0=0.0, T=3)
    if which == "alpha":
        i = idx % d
        q = p.with_(alpha=[a + 0.1 if k == i else a for k, a in enumerate(alpha)])
    elif which == "beta":
        i = idx % d
        q = p.with_(beta=[b + 0.1 if k == i else b for k in range(d)])
    elif which == "B_x":
        q = p.with_(B_x=1.0)
    else:
        q = p.with_(T=4)
    for f in (bound_theorem2, lambda x: bound_corollary(x, "cor1")):
        assert f(q) >= f(p) * (1 - 1e-12)
    assert (bound_rw_d1(q.alpha[0], q.beta[0], q.B_x, q.T, 16, 32, 100)
            >= bound_rw_d1(p.alpha[0], p.beta[0], p.B_x, p.T, 16, 32, 100) * (1 - 1e-12))


def test_sequence_bound_not_monotone_in_T_with_contracting_layers():
    # the initial-state term decays like Lambda_0^T when Lambda_0 < 1
    p = NormProfile([0.5], [0.01], 0.01, 0.0, 10.0, 1, 1, 2, 2, 1)
    vals = [bound_theorem2(p.with_(T=T)) for T in (1, 2, 5, 10)]
    assert vals[0] > vals[-1]


def test_sequence_bound_scales_inverse_sqrt_m():
    p = profile([1.3, 0.8], [0.4, 0.6])
    assert bound_theorem2(p.with_(m=400)) == pytest.approx(bound_theorem2(p) / 2, rel=1e-14)


def test_norms_from_zero_params():
    p = init_params("reweighted", 8, 4, 12, 2, 0)
    for k in p.names():
        p.tensors[k] = np.zeros_like(p[k])
    prof = norms_from_params(p, make_rng(0).uniform(0, 1, (5, 3, 8)))
    assert prof.alpha == [0.0, 0.0] and prof.beta == [0.0, 0.0]
    assert prof.B_x == prof.B_h == prof.h0_inf == 0.0
    rep = bound_report(prof)
    assert rep.values["theorem2"] == 0.0 and rep.values["cor1"] == 0.0


def test_norms_identity_weights():
    p = init_params("reweighted", 8, 4, 12, 3, 0)
    p.tensors["A"][:] = 0.0
    p.tensors["c_raw"] = np.array(0.0)
    prof = norms_from_params(p, make_rng(0).uniform(0, 1, (5, 3, 8)))
    assert prof.alpha == [1.0, 1.0, 1.0] and prof.beta == [0.0, 0.0, 0.0]


def test_norms_match_row_scan():
    p = init_params("reweighted", 8, 4, 12, 2, 0)
    rng = make_rng(1)
    p.tensors["Z"] = p["Z"] + 0.1 * rng.standard_normal(p["Z"].shape)
    frames = rng.uniform(0, 1, (6, 3, 8))
    prof = norms_from_params(p, frames)
    from seqsparse.model import build_weights
    w = build_weights(p)
    for a, W in zip(prof.alpha, w.W):
        assert a == pytest.approx(max(sum(abs(x) for x in row) for row in W.tolist()), rel=1e-14)
    x = frames @ p["A"].T
    best = max(math.sqrt(sum(x[i, t, k] ** 2 for i in range(6))) for t in range(3) for k in range(4))
    assert prof.B_x == pytest.approx(best / math.sqrt(6), rel=1e-14)
    assert prof.m == 6 and prof.T == 3
    with pytest.raises(ValueError):
        norms_from_params(p, frames[:0])


def test_empirical_gap():
    hist = [EpochRecord(1, 0.1, 0.3, 1e-3), EpochRecord(2, 0.2, 0.2, 1e-3)]
    assert empirical_gap(hist) == pytest.approx([0.2, 0.0])


def test_report_and_sweep():
    p = profile([1.4, 0.9], [0.5, 0.3])
    rep = bound_report(p)
    data = json.loads(rep.to_json())
    assert set(data["bounds"]) == set(REPORT_KEYS)
    assert all(v is None or v >= 0 for v in rep.values.values())
    assert data["bounds"]["cor1"] == rep.values["cor1"]
    rows = sweep_csv(p, range(1, 65)).splitlines()
    assert rows[0].split(",") == ["T"] + list(REPORT_KEYS)
    assert len(rows) == 65


def test_report_floors_negative_small_a():
    p = profile([1.5], [1.0], T=8)
    rep = bound_report(p, fast_a=0.01)
    assert rep.values["fastrnn_b"] == 0.0
    assert any("negative" in n for n in rep.notes)
