import numpy as np
import pytest
from hypothesis import given, strategies as st

from doalab.coarray import (IdentifiabilityError, coarray_music, identifiability_budget,
                            vectorize_covariance)
from doalab.geometry import (DomainError, difference_coarray, make_arbitrary, make_coprime,
                             make_nested, make_thinned_ula, make_ula, steering_matrix)
from doalab.sigmodel import Scenario, simulate
from doalab.spectra import make_grid
from doalab.subspace import sample_covariance

from conftest import random_psd


def exact_cov(g, thetas, nu=1.0, P=None):
    A = steering_matrix(g, thetas)
    P = np.eye(len(thetas)) if P is None else P
    return A @ P @ A.conj().T + nu * np.eye(g.M)


def test_identity_covariance():
    snap = vectorize_covariance(np.eye(5), make_ula(5))
    assert snap.value(0) == 1.0
    assert np.allclose(np.delete(snap.lag_values, snap.lags.size // 2), 0.0)


def test_single_source_lag_values():
    g = make_nested(2, 3)
    p, th = 2.5, 63.0
    snap = vectorize_covariance(exact_cov(g, [th], 0.0, p * np.eye(1)), g)
    # R[i, j] at lag u = d_i - d_j equals p * exp(-j pi u cos(theta))
    expected = p * np.exp(-1j * np.pi * snap.lags * np.cos(np.deg2rad(th)))
    assert np.allclose(snap.lag_values, expected)
    assert np.allclose(np.abs(snap.lag_values), p)


@given(st.lists(st.integers(0, 25), min_size=2, max_size=8, unique=True), st.integers(0, 2**31))
def test_conjugate_symmetry(ints, seed):
    g = make_thinned_ula(ints)
    R = random_psd(np.random.default_rng(seed), g.M)
    snap = vectorize_covariance(R, g)
    v = snap.lag_values
    assert np.array_equal(v, np.conj(v[::-1]))
    assert snap.value(0).imag == 0.0 and snap.value(0).real >= 0
    seg = snap.contiguous_segment
    assert np.array_equal(seg, np.conj(seg[::-1]))


def test_vectorize_needs_integer_grid():
    with pytest.raises(DomainError):
        vectorize_covariance(np.eye(3), make_arbitrary([0, 0.5, 1.7]))


def test_averaging_reduces_variance():
    g = make_ula(5)
    sc = Scenario(g, [70.0, 120.0], snapshots=20, snr_db=0)
    lag = 1
    pairs = difference_coarray(g).pairs(lag)
    avg, single = [], {pr: [] for pr in pairs}
    for s in range(400):
        R = sample_covariance(simulate(sc.with_(seed=s)).entries)
        avg.append(vectorize_covariance(R, g).value(lag))
        for i, j in pairs:
            single[(i, j)].append(R[i, j])
    var_avg = np.var(avg)
    assert var_avg <= min(np.var(v) for v in single.values())


def test_coarray_music_single_source():
    g = make_nested(2, 2)
    res = coarray_music(exact_cov(g, [77.0]), g, 1, make_grid(0.5))
    assert np.allclose(res.thetas_hat, [77.0], atol=1e-3)


@pytest.mark.parametrize("m", [2, 3])
def test_exact_covariance_up_to_ell_sources(m):
    g = make_nested(m, m)
    ell = difference_coarray(g).contiguous_half_length
    grid = make_grid(0.5)
    th = np.linspace(25, 155, ell).round()
    res = coarray_music(exact_cov(g, th), g, ell, grid)
    assert np.allclose(res.thetas_hat, th, atol=1e-3)
    assert res.diagnostics["L"] == ell + 1


def test_coherent_sources_not_resolved():
    g = make_nested(3, 3)
    th = [70.0, 100.0]
    res = coarray_music(exact_cov(g, th, 0.1, np.ones((2, 2))), g, 2, make_grid(0.5))
    assert np.max(np.abs(res.thetas_hat - th)) > 1.0


def test_identifiability_error_quotes_budget():
    g = make_nested(2, 2)
    with pytest.raises(IdentifiabilityError, match="contiguous lags -5..5"):
        coarray_music(np.eye(4), g, 6)
    with pytest.raises(DomainError):
        coarray_music(np.eye(4), g, 2, L=9)


def test_identifiability_budget():
    for M in (2, 5, 8):
        rep = identifiability_budget(make_ula(M))
        assert rep["contiguous_half_length"] == M - 1
        assert rep["max_sources_coarray_music"] == M - 1
        assert rep["real_equations"] == 2 * M - 1
    assert identifiability_budget(make_nested(3, 3))["max_sources_coarray_music"] == 11
    two = identifiability_budget(make_arbitrary([0, 0.7]))
    assert two["real_equations"] == 3 and two["counting_bound"] == 1
    cp = identifiability_budget(make_coprime(3, 5))
    assert cp["unique_lags"] == difference_coarray(make_coprime(3, 5)).n_unique


@pytest.mark.parametrize("m", [2, 3, 4])
def test_quadratic_scaling(m):
    st_ = difference_coarray(make_nested(m, m))
    assert 2 * st_.contiguous_half_length + 1 == 2 * m * (m + 1) - 1
