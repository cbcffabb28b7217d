import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from doalab.geometry import DomainError, make_ula, steering_matrix, steering_vector
from doalab.sigmodel import Scenario, simulate
from doalab.sparse import (Dictionary, bcd_coordinate_update, build_dictionary, default_mu,
                           group_soft_threshold, l20_brute_force, mmp_objective, mmp_solve,
                           sparrow_bcd, sparrow_estimate, sparrow_lambda, sparrow_objective,
                           support_of, support_to_doas)

EQ_GRID = np.linspace(10, 170, 12)


def mu_max(A, X):
    """Smallest mu for which S = 0 is optimal."""
    return 2 * np.max(np.linalg.norm(A.conj().T @ X, axis=1))


def small_instance(seed, M=4, T=5):
    rng = np.random.default_rng(seed)
    X = (rng.standard_normal((M, T)) + 1j * rng.standard_normal((M, T))) / np.sqrt(2)
    return X


# --- dictionary / brute force --------------------------------------------------

def test_dictionary():
    dic = build_dictionary(make_ula(4), 1.0)
    assert dic.K == 179 and dic.M == 4
    k90 = int(np.nonzero(dic.grid == 90.0)[0][0])
    assert np.allclose(dic.matrix[:, k90], 1.0)
    assert np.allclose(np.abs(dic.matrix), 1.0)
    coh = np.abs(np.sum(dic.matrix[:, :-1].conj() * dic.matrix[:, 1:], axis=0)) / 4
    assert np.all(coh < 1)
    with pytest.raises(DomainError):
        build_dictionary(make_ula(4), grid=[30.0, 60.0, 90.0])


def test_brute_force_examples():
    g = make_ula(4)
    dic = build_dictionary(g, grid=np.linspace(15, 165, 20))
    X = np.outer(dic.matrix[:, 7], [1.0, 2j])
    res = l20_brute_force(X, dic, 1)
    assert res.support == (7,) and res.residual < 1e-20
    rng = np.random.default_rng(0)
    S = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
    X = dic.matrix[:, [3, 14]] @ S
    res = l20_brute_force(X, dic, 2)
    assert res.support == (3, 14) and res.residual < 1e-18
    assert res.supports_tried == math.comb(20, 2)
    tiny = build_dictionary(g, grid=[30, 60, 90, 120, 150])
    assert l20_brute_force(rng.standard_normal((4, 3)), tiny, 5).residual < 1e-20
    with pytest.raises(DomainError, match="refused"):
        l20_brute_force(X, build_dictionary(g, 0.5), 3)


# --- MMP -----------------------------------------------------------------------

def test_group_soft_threshold():
    V = np.array([[3.0, 4.0], [0.3, 0.4]])
    out = group_soft_threshold(V, 1.0)
    assert np.allclose(out[0], [2.4, 3.2])
    assert np.allclose(out[1], 0.0)


def test_mmp_large_mu_gives_zero():
    X = small_instance(0)
    dic = build_dictionary(make_ula(4), grid=EQ_GRID)
    sol = mmp_solve(X, dic, mu_max(dic.matrix, X) * 1.0001)
    assert np.allclose(sol.S, 0.0)
    with pytest.raises(DomainError):
        mmp_solve(X, dic, 0.0)


def test_mmp_small_mu_approaches_least_squares():
    # K < M is refused by build_dictionary, so the toy dictionary is built directly
    grid = np.array([40.0, 75.0, 110.0, 140.0])
    dic = Dictionary(grid, steering_matrix(make_ula(6), grid))
    rng = np.random.default_rng(2)
    X = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    ls = np.linalg.pinv(dic.matrix) @ X
    sol = mmp_solve(X, dic, 1e-6, tol=1e-14, max_iter=200000)
    assert np.allclose(sol.row_norms, np.linalg.norm(ls, axis=1), rtol=1e-4)


@given(st.integers(0, 2**31), st.floats(0.05, 0.9))
def test_mmp_descent(seed, frac):
    X = small_instance(seed % 10**6)
    dic = build_dictionary(make_ula(4), grid=EQ_GRID)
    mu = frac * mu_max(dic.matrix, X)
    sol = mmp_solve(X, dic, mu, tol=1e-10)
    A = dic.matrix
    assert sol.objective <= mmp_objective(X, A, np.zeros_like(sol.S), mu) + 1e-12
    ls = np.linalg.pinv(A) @ X
    assert sol.objective <= mmp_objective(X, A, ls, mu) + 1e-12
    assert all(b <= a + 1e-12 * a for a, b in zip(sol.trace, sol.trace[1:]))


def test_mmp_reduction_for_many_snapshots():
    g = make_ula(4)
    dic = build_dictionary(g, grid=EQ_GRID)
    X = small_instance(5, T=40)
    mu = 0.5 * mu_max(dic.matrix, X)
    fast = mmp_solve(X, dic, mu, tol=1e-13, max_iter=100000)
    S0 = np.zeros((dic.K, 40), dtype=complex)
    full = mmp_solve(X, dic, mu, tol=1e-13, max_iter=100000, S0=S0)
    assert np.isclose(fast.objective, full.objective, rtol=1e-8)


# --- SPARROW -------------------------------------------------------------------

def golden_min_mp(f, lo, hi, tol=mp.mpf("1e-20")):
    invphi = (mp.sqrt(5) - 1) / 2
    a, b = mp.mpf(lo), mp.mpf(hi)
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


@pytest.mark.parametrize("seed", range(8))
def test_bcd_update_matches_golden_section(seed):
    mp.mp.dps = 40
    rng = np.random.default_rng(seed)
    g = make_ula(4)
    A = steering_matrix(g, [35.0, 70.0, 100.0, 140.0])
    R = (A[:, :2] @ np.diag([3.0, 1.0]) @ A[:, :2].conj().T + 0.3 * np.eye(4))
    lam = 0.2 + rng.uniform()
    d = rng.uniform(0, 1, 4) * (seed % 2)   # odd seeds start from a nonzero d
    k = seed % 4
    a = A[:, k]
    others = [j for j in range(4) if j != k]
    B = (A[:, others] * d[others]) @ A[:, others].conj().T + lam * np.eye(4)
    U = np.linalg.inv(B + d[k] * np.outer(a, a.conj()))
    Ua = U @ a
    s = float(np.real(np.vdot(a, Ua)))
    r = float(np.real(np.vdot(Ua, R @ Ua)))
    x_cf = bcd_coordinate_update(s, r, d[k])

    Bm = mp.matrix(B.tolist())
    Rm = mp.matrix(R.tolist())
    am = mp.matrix(a.tolist())
    aaH = am * am.H

    def f(x):
        Q = mp.inverse(Bm + x * aaH)
        return mp.re(sum((Q * Rm)[i, i] for i in range(4))) + x

    x_gs = golden_min_mp(f, 0, 50)
    assert abs(x_cf - float(x_gs)) < 1e-10 * max(1.0, x_cf)


def test_sparrow_no_signal_gives_zero():
    # K = 1: f(x) = tr((x a a^H + lam I)^{-1} R) + x with R = eps I
    A = steering_matrix(make_ula(4), [60.0])
    dic = Dictionary(np.array([60.0]), A)
    mu, T = 2.0, 4
    lam = sparrow_lambda(mu, T)
    R = 0.1 * lam * np.eye(4)
    xs = np.linspace(0, 5, 5001)
    f = [sparrow_objective(R, A, [x], lam) for x in xs]
    assert np.argmin(f) == 0
    sol = sparrow_bcd(R, dic, mu, T)
    assert sol.d[0] == 0.0


def test_sparrow_rejects_bad_input():
    dic = build_dictionary(make_ula(3), 10.0)
    with pytest.raises(DomainError):
        sparrow_bcd(-np.eye(3), dic, 1.0, 5)
    with pytest.raises(DomainError):
        sparrow_bcd(np.eye(3), dic, 0.0, 5)


def test_sparrow_single_strong_source():
    g = make_ula(6)
    hits = 0
    for seed in range(20):
        sc = Scenario(g, [70.0], snapshots=200, snr_db=20, seed=seed)
        res = sparrow_estimate(simulate(sc).entries, g, 1, grid_step=1.0)
        d = res.diagnostics["d"]
        hits += res.spectrum.grid[int(np.argmax(d))] == 70.0
    assert hits >= 19


@given(st.integers(0, 2**31), st.floats(0.1, 0.9))
def test_sparrow_monotone_descent(seed, frac):
    X = small_instance(seed % 10**6, M=4, T=6)
    dic = build_dictionary(make_ula(4), 5.0)
    mu = frac * mu_max(dic.matrix, X)
    sol = sparrow_bcd(X @ X.conj().T / 6, dic, mu, 6, max_iter=300)
    tr = sol.trace
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(tr, tr[1:]))
    assert np.all(sol.d >= 0) and np.isfinite(sol.objective)


def test_sparrow_convexity_sanity():
    X = small_instance(3)
    dic = build_dictionary(make_ula(4), grid=EQ_GRID)
    mu = 0.5 * mu_max(dic.matrix, X)
    R = X @ X.conj().T / 5
    sol = sparrow_bcd(R, dic, mu, 5, tol=1e-14, max_iter=50000)
    rng = np.random.default_rng(0)
    for _ in range(200):
        other = rng.exponential(0.5, dic.K) * (rng.uniform(size=dic.K) < 0.4)
        w = rng.uniform()
        mix = w * sol.d + (1 - w) * other
        assert sparrow_objective(R, dic.matrix, mix, sol.lam) >= sol.objective - 1e-10


def mmp_and_sparrow(seed, frac):
    X = small_instance(seed)
    dic = build_dictionary(make_ula(4), grid=EQ_GRID)
    mu = frac * mu_max(dic.matrix, X)
    m = mmp_solve(X, dic, mu, tol=1e-14, max_iter=200000)
    s = sparrow_bcd(X @ X.conj().T / 5, dic, mu, 5, tol=1e-15, max_iter=100000)
    return X, dic, mu, m, s


@pytest.mark.parametrize("seed", range(10))
def test_row_norm_proportionality_and_objective_link(seed):
    X, dic, mu, m, s = mmp_and_sparrow(seed, 0.85)
    supp = support_of(s.d)
    n, d = m.row_norms[supp], s.d[supp]
    c = float(n @ d / (n @ n))
    assert np.linalg.norm(d - c * n) / np.linalg.norm(d) < 1e-4
    # measured constant: d_k = ||s_k|| / sqrt(T)
    assert np.isclose(c, 1 / np.sqrt(5), rtol=1e-4)
    assert np.isclose(m.objective, mu * np.sqrt(5) / 2 * s.objective, rtol=1e-6)


# --- support extraction ----------------------------------------------------------

def test_support_to_doas():
    grid = np.arange(10.0, 20.0)
    one = np.zeros(10)
    one[4] = 2.0
    assert list(support_to_doas(one, grid, 1).thetas_hat) == [14.0]
    bumps = np.array([0, 1, 3, 1, 0, 0, 2, 5, 2, 0], dtype=float)
    assert sorted(support_to_doas(bumps, grid, 2).thetas_hat) == [12.0, 17.0]
    plateau = np.array([0, 0, 4, 4, 4, 0, 0, 0, 0, 0], dtype=float)
    assert list(support_to_doas(plateau, grid, 1).thetas_hat) == [12.0]
    with pytest.warns(RuntimeWarning):
        res = support_to_doas(one, grid, 2)
    assert res.warnings and 14.0 in res.thetas_hat


def test_default_mu_scaling():
    R = np.diag([10.0, 5.0, 1.0, 1.0])
    mu = default_mu(R, 4, 100, 9, N=2)
    assert np.isclose(mu, np.sqrt(4 * 9 * np.log(100)))
