import numpy as np
import pytest
from hypothesis import given, strategies as st

from doalab.geometry import DomainError, make_ula, steering_vector
from doalab.sigmodel import (Scenario, build_source_cov, simulate,
                             simulate_partly_calibrated)


def test_source_cov_tags():
    assert np.allclose(build_source_cov(2, 0.0, 1.0), np.eye(2))
    P = build_source_cov(2, 10.0, 1.0, "coherent")
    assert np.allclose(P, 10 * np.ones((2, 2)))
    assert np.linalg.matrix_rank(P) == 1
    assert np.linalg.eigvalsh(P).min() >= -1e-12


def test_source_cov_validation():
    with pytest.raises(DomainError):
        build_source_cov(2, 0.0, 1.0, np.array([[1, 2], [2, 1]]))
    with pytest.raises(DomainError):
        build_source_cov(2, 0.0, 1.0, np.array([[1, 1j], [1, 1]]))
    with pytest.raises(DomainError):
        build_source_cov(2, 0.0, 0.0)
    user = np.array([[2, 0.5], [0.5, 1]], dtype=complex)
    assert np.allclose(build_source_cov(2, 0.0, 1.0, user), user)


def test_noiseless_conditional_single_snapshot():
    g = make_ula(5)
    sc = Scenario(g, [70.0], snapshots=1, noise_var=0.0, model="conditional",
                  waveforms=np.ones((1, 1)))
    X = simulate(sc).entries
    assert np.allclose(X[:, 0], steering_vector(g, 70.0), atol=0)


def test_scenario_validation():
    g = make_ula(4)
    with pytest.raises(DomainError):
        Scenario(g, [100.0, 50.0], snapshots=10)
    with pytest.raises(DomainError):
        Scenario(g, [50.0], snapshots=0)
    with pytest.raises(DomainError):
        Scenario(g, [50.0], snapshots=5, model="conditional", source_cov=np.eye(1))
    with pytest.raises(DomainError):
        Scenario(g, [50.0], snapshots=5, model="conditional", waveforms=np.ones((1, 3)))


def test_determinism():
    sc = Scenario(make_ula(6), [60.0, 100.0], snapshots=50, snr_db=5, seed=7)
    a = simulate(sc).entries
    b = simulate(sc).entries
    assert np.array_equal(a, b)
    c = simulate(sc.with_(seed=8)).entries
    assert not np.array_equal(a, c)
    assert simulate(sc).scenario_hash == sc.digest()


def test_second_moment_law_of_large_numbers():
    sc = Scenario(make_ula(6), [60.0, 100.0], snapshots=10**5, snr_db=0, seed=1)
    X = simulate(sc).entries
    R = sc.covariance()
    err = np.linalg.norm(X @ X.conj().T / sc.snapshots - R) / np.linalg.norm(R)
    assert err < 0.05


def test_second_moment_rate():
    # Frobenius error of the sample covariance shrinks like 1/sqrt(T)
    base = Scenario(make_ula(5), [70.0, 110.0], snapshots=1000, snr_db=0, seed=0)
    R = base.covariance()
    errs = []
    for T in (10**3, 10**4, 10**5):
        e = []
        for s in range(5):
            X = simulate(base.with_(snapshots=T, seed=s)).entries
            e.append(np.linalg.norm(X @ X.conj().T / T - R) / np.linalg.norm(R))
        errs.append(np.mean(e))
    for lo, hi in zip(errs[1:], errs[:-1]):
        assert 0.2 < lo / hi < 0.5  # sqrt(1/10) = 0.316


@given(st.integers(1, 60), st.integers(0, 2**31))
def test_coherent_noiseless_rank_one(T, seed):
    sc = Scenario(make_ula(5), [60.0, 95.0, 130.0], snapshots=T, snr_db=10, noise_var=0.0,
                  correlation="coherent", seed=seed)
    X = simulate(sc).entries
    sv = np.linalg.svd(X @ X.conj().T, compute_uv=False)
    assert sv[1] <= 1e-10 * sv[0]


def test_conditional_waveforms_fixed_and_scaled():
    sc = Scenario(make_ula(4), [60.0, 100.0], snapshots=20, snr_db=6, model="conditional",
                  seed=3)
    assert np.allclose(np.abs(sc.waveforms) ** 2, 10 ** 0.6)
    again = Scenario(make_ula(4), [60.0, 100.0], snapshots=20, snr_db=6, model="conditional",
                     seed=3)
    assert np.array_equal(sc.waveforms, again.waveforms)


def test_partly_calibrated_offsets_apply_per_subarray():
    g = make_ula(6)
    sc = Scenario(g, [80.0], snapshots=3, noise_var=0.0, model="conditional",
                  waveforms=np.ones((1, 3)))
    X, off = simulate_partly_calibrated(sc, [[0, 1, 2], [3, 4, 5]],
                                        phase_offsets=[0.0, np.pi / 3])
    a = steering_vector(g, 80.0)
    assert np.allclose(X[:3, 0], a[:3])
    assert np.allclose(X[3:, 0], a[3:] * np.exp(1j * np.pi / 3))
    assert np.allclose(off, [0.0, np.pi / 3])
