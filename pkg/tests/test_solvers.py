import numpy as np
import pytest

from oracles import lasso_coordinate_descent, objective_eq4_loops
from seqsparse.core import DimensionError, make_rng, spectral_upper
from seqsparse.solvers import SolverConfig, algorithm1, fista, ista, lasso_objective, lipschitz, objective_eq4


def lasso_instance(seed, n=8, n0=16):
    rng = make_rng(seed)
    A = rng.standard_normal((n, n0)) / np.sqrt(n)
    D = np.eye(n0)
    h_true = np.zeros(n0)
    h_true[rng.choice(n0, 3, replace=False)] = rng.standard_normal(3)
    x = A @ h_true + 0.01 * rng.standard_normal(n)
    return x, A, D


def seq_instance(seed, T=5, n=6, n0=10, h=12, d=3, reweight=True):
    rng = make_rng(seed)
    A = rng.standard_normal((n, n0)) / np.sqrt(n)
    D = rng.standard_normal((n0, h)) / np.sqrt(n0)
    G = np.eye(h) + 0.1 * rng.standard_normal((h, h))
    if reweight:
        Z = [np.eye(h) + 0.05 * rng.standard_normal((h, h)) for _ in range(d)]
        g = [np.exp(0.3 * rng.standard_normal(h)) for _ in range(d)]
    else:
        Z = [np.eye(h)] * d
        g = [np.ones(h)] * d
    AD = A @ D
    c = spectral_upper(AD.T @ AD, iters=200)
    x = rng.standard_normal((T, n))
    h0 = 0.1 * rng.standard_normal(h)
    return x, A, D, G, Z, g, c, h0


def test_config_validation():
    SolverConfig(3, 0.1, 0.1, 1.0)
    with pytest.raises(ValueError):
        SolverConfig(0, 0.1, 0.1, 1.0)
    with pytest.raises(ValueError):
        SolverConfig(3, 0.1, 0.1, 0.0)


def test_ista_zero_fixed_point():
    x, A, D = lasso_instance(0)
    assert np.array_equal(ista(np.zeros(8), A, D, 0.1, 5.0, 25), np.zeros(16))
    assert np.array_equal(fista(np.zeros(8), A, D, 0.1, 5.0, 25), np.zeros(16))


def test_ista_first_step_is_gradient_step():
    rng = make_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    A, D = Q, np.eye(8)
    x = rng.standard_normal(8)
    c = 2.0
    assert np.allclose(ista(x, A, D, 0.0, c, 1), Q.T @ x / c, atol=1e-15)


def test_fista_first_step_equals_ista():
    x, A, D = lasso_instance(2)
    c = lipschitz(A, D)
    assert np.array_equal(fista(x, A, D, 0.05, c, 1), ista(x, A, D, 0.05, c, 1))


def test_ista_and_fista_reach_coordinate_descent_minimum():
    lam = 0.05
    for seed in range(3):
        x, A, D = lasso_instance(seed)
        c = lipschitz(A, D)
        f_star = lasso_objective(lasso_coordinate_descent(x, A @ D, lam), x, A, D, lam)
        _, objs_i = ista(x, A, D, lam, c, 10_000, history=True)
        _, objs_f = fista(x, A, D, lam, c, 10_000, history=True)
        assert objs_i[-1] - f_star <= 1e-8
        assert objs_f[-1] - f_star <= 1e-8
        first_i = next(k for k, f in enumerate(objs_i) if f - f_star <= 1e-8)
        first_f = next(k for k, f in enumerate(objs_f) if f - f_star <= 1e-8)
        assert first_f < first_i


def test_fista_not_worse_than_ista_at_50():
    lam = 0.05
    for seed in range(10):
        x, A, D = lasso_instance(100 + seed)
        c = lipschitz(A, D)
        fi = lasso_objective(ista(x, A, D, lam, c, 50), x, A, D, lam)
        ff = lasso_objective(fista(x, A, D, lam, c, 50), x, A, D, lam)
        assert ff <= fi + 1e-12


def test_ista_monotone_descent():
    for seed in range(10):
        x, A, D = lasso_instance(200 + seed)
        c = lipschitz(A, D)
        _, objs = ista(x, A, D, 0.02, c, 300, history=True)
        assert np.all(np.diff(objs) <= 1e-10)


def test_solver_dimension_errors():
    x, A, D = lasso_instance(0)
    with pytest.raises(DimensionError):
        ista(np.zeros(7), A, D, 0.1, 1.0, 3)
    with pytest.raises(DimensionError):
        fista(x, A, np.eye(15), 0.1, 1.0, 3)


def test_objective_eq4_cases():
    x, A, D, G, Z, g, c, h0 = seq_instance(0)
    h = D.shape[1]
    assert objective_eq4(np.zeros(h), np.zeros(A.shape[0]), np.zeros(h), A, D, G, Z[0], g[0], 0.3, 0.2) == 0.0
    rng = make_rng(9)
    ht, hp = rng.standard_normal(h), rng.standard_normal(h)
    reduced = objective_eq4(ht, x[0], hp, A, D, G, np.eye(h), np.ones(h), 0.3, 0.0)
    assert reduced == pytest.approx(lasso_objective(ht, x[0], A, D, 0.3), rel=1e-14)
    val = objective_eq4(ht, x[0], hp, A, D, G, Z[0], g[0], 0.3, 0.2)
    ref = objective_eq4_loops(ht.tolist(), x[0].tolist(), hp.tolist(), A.tolist(), D.tolist(), G.tolist(),
                              Z[0].tolist(), g[0].tolist(), 0.3, 0.2)
    assert abs(val - ref) <= 1e-14 * max(1.0, abs(ref))


def test_algorithm1_zero_input():
    x, A, D, G, Z, g, c, h0 = seq_instance(1)
    out = algorithm1(np.zeros_like(x), A, D, np.eye(D.shape[1]), Z, g, c, 0.1, 0.1, np.zeros(D.shape[1]), 3)
    assert out.shape == (5, 4, D.shape[1])
    assert not np.any(out)


def test_algorithm1_warm_start_and_frozen_anchor():
    x, A, D, G, Z, g, c, h0 = seq_instance(2)
    out = algorithm1(x, A, D, G, Z, g, c, 0.1, 0.05, h0, 3)
    assert np.array_equal(out[0, 0], G @ h0)
    for t in range(1, 5):
        assert np.array_equal(out[t, 0], G @ out[t - 1, -1])


def test_algorithm1_descent_with_identity_reweighting():
    for seed in range(10):
        x, A, D, G, Z, g, c, h0 = seq_instance(300 + seed, d=8, reweight=False)
        out = algorithm1(x, A, D, G, Z, g, c, 0.2, 0.1, h0, 8)
        h = D.shape[1]
        prev = h0
        for t in range(x.shape[0]):
            objs = [objective_eq4(out[t, l], x[t], prev, A, D, G, np.eye(h), np.ones(h), 0.2, 0.1)
                    for l in range(9)]
            assert np.all(np.diff(objs) <= 1e-10)
            prev = out[t, -1]


def test_algorithm1_converges():
    x, A, D, G, Z, g, c, h0 = seq_instance(4, T=1, n=10, n0=10, h=8, reweight=False)
    out = algorithm1(x, A, D, G, [np.eye(8)] * 5000, [np.ones(8)] * 5000, c, 0.05, 0.05, h0, 5000)
    assert np.linalg.norm(out[0, -1] - out[0, -2]) < 1e-8


def test_algorithm1_time_causal():
    x, A, D, G, Z, g, c, h0 = seq_instance(5)
    base = algorithm1(x, A, D, G, Z, g, c, 0.1, 0.05, h0, 3)
    x2 = x.copy()
    x2[3] += 5.0
    pert = algorithm1(x2, A, D, G, Z, g, c, 0.1, 0.05, h0, 3)
    assert np.array_equal(base[:3], pert[:3])
    assert not np.array_equal(base[3], pert[3])


def test_algorithm1_errors():
    x, A, D, G, Z, g, c, h0 = seq_instance(6)
    with pytest.raises(ValueError):
        algorithm1(x, A, D, G, Z, g, 0.0, 0.1, 0.1, h0, 3)
    with pytest.raises(DimensionError):
        algorithm1(x[:, :5], A, D, G, Z, g, c, 0.1, 0.1, h0, 3)
