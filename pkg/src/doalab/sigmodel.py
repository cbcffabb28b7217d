"""Snapshot generation under the conditional and unconditional signal models."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayGeometry, DomainError, steering_matrix

MODELS = ("unconditional", "conditional")


def build_source_cov(N: int, snr_db: float, noise_var: float = 1.0,
                     correlation="uncorrelated") -> np.ndarray:
    """Source covariance for ``N`` equal-power sources.

    ``correlation`` is ``"uncorrelated"``, ``"coherent"`` or an explicit
    N x N matrix, which is validated to be Hermitian PSD and returned as is.
    Per-source power is ``noise_var * 10**(snr_db/10)``.
    """
    if N < 1:
        raise DomainError("need at least one source")
    if noise_var <= 0:
        raise DomainError("noise_var must be positive")
    power = noise_var * 10.0 ** (snr_db / 10.0)
    if isinstance(correlation, str):
        if correlation == "uncorrelated":
            return power * np.eye(N, dtype=complex)
        if correlation == "coherent":
            return power * np.ones((N, N), dtype=complex)
        raise DomainError(f"unknown correlation tag {correlation!r}")
    P = np.asarray(correlation, dtype=complex)
    if P.shape != (N, N):
        raise DomainError("source covariance has the wrong shape")
    if not np.allclose(P, P.conj().T, atol=1e-12):
        raise DomainError("source covariance is not Hermitian")
    if np.linalg.eigvalsh(P).min() < -1e-12 * max(1.0, np.abs(P).max()):
        raise DomainError("source covariance is not positive semidefinite")
    return P


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular CN(0, 1) samples: two real normals scaled by 1/sqrt(2)."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def hermitian_sqrt(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(P)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T


@dataclass
class Scenario:
    """Generative description of one array experiment.

    Exactly one of ``source_cov`` (unconditional model) and ``waveforms``
    (conditional model) is set once the scenario is built.  When neither is
    given, equal-power sources are built from ``snr_db`` and ``correlation``
    (conditional scenarios then get unit-modulus random-phase waveforms drawn
    from ``seed``).
    """

    geometry: ArrayGeometry
    thetas: tuple
    snapshots: int
    snr_db: float = 0.0
    noise_var: float = 1.0
    model: str = "unconditional"
    correlation: object = "uncorrelated"
    seed: int = 0
    source_cov: np.ndarray | None = None
    waveforms: np.ndarray | None = None
    subarrays: list | None = field(default=None)

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        # validates range and ordering
        steering_matrix(self.geometry, th)
        self.thetas = tuple(float(t) for t in th)
        if self.model not in MODELS:
            raise DomainError(f"model must be one of {MODELS}")
        if self.snapshots < 1:
            raise DomainError("snapshots must be >= 1")
        if self.noise_var < 0:
            raise DomainError("noise_var must be >= 0")
        N = len(self.thetas)
        if self.source_cov is not None and self.waveforms is not None:
            raise DomainError("set either source_cov or waveforms, not both")
        if self.model == "unconditional":
            if self.waveforms is not None:
                raise DomainError("unconditional model takes source_cov, not waveforms")
            if self.source_cov is None:
                self.source_cov = build_source_cov(
                    N, self.snr_db, self.noise_var if self.noise_var > 0 else 1.0,
                    self.correlation)
            else:
                self.source_cov = build_source_cov(N, 0.0, 1.0, self.source_cov)
        else:
            if self.source_cov is not None:
                raise DomainError("conditional model takes waveforms, not source_cov")
            if self.waveforms is None:
                self.waveforms = default_waveforms(
                    N, self.snapshots, self.snr_db,
                    self.noise_var if self.noise_var > 0 else 1.0,
                    self.correlation, self.seed)
            W = np.asarray(self.waveforms, dtype=complex)
            if W.shape != (N, self.snapshots):
                raise DomainError("waveforms must be N x T")
            self.waveforms = W

    @property
    def N(self) -> int:
        return len(self.thetas)

    @property
    def M(self) -> int:
        return self.geometry.M

    def steering(self) -> np.ndarray:
        return steering_matrix(self.geometry, self.thetas)

    def covariance(self) -> np.ndarray:
        """Model covariance ``A P A^H + nu I`` (sample waveform covariance for
        the conditional model)."""
        A = self.steering()
        if self.model == "unconditional":
            P = self.source_cov
        else:
            P = self.waveforms @ self.waveforms.conj().T / self.snapshots
        return A @ P @ A.conj().T + self.noise_var * np.eye(self.M)

    def with_(self, **changes) -> "Scenario":
        data = dict(geometry=self.geometry, thetas=self.thetas, snapshots=self.snapshots,
                    snr_db=self.snr_db, noise_var=self.noise_var, model=self.model,
                    correlation=self.correlation, seed=self.seed,
                    subarrays=self.subarrays)
        data.update(changes)
        return Scenario(**data)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.geometry.positions, self.thetas, self.snapshots,
                       self.snr_db, self.noise_var, self.model, self.seed)).encode())
        for arr in (self.source_cov, self.waveforms):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def default_waveforms(N, T, snr_db, noise_var, correlation, seed) -> np.ndarray:
    """Unit-modulus random-phase waveforms scaled to the requested SNR."""
    rng = np.random.default_rng([int(seed), 0x5EED])
    amp = np.sqrt(noise_var * 10.0 ** (snr_db / 10.0))
    if correlation == "coherent":
        phase = rng.uniform(0, 2 * np.pi, size=(1, T))
        return amp * np.repeat(np.exp(1j * phase), N, axis=0)
    phase = rng.uniform(0, 2 * np.pi, size=(N, T))
    return amp * np.exp(1j * phase)


@dataclass(frozen=True)
class SnapshotMatrix:
    entries: np.ndarray
    scenario_hash: str

    @property
    def shape(self):
        return self.entries.shape


def simulate(scenario: Scenario, rng=None) -> SnapshotMatrix:
    """Draw ``X = A S + N`` for a scenario.

    ``rng`` overrides the scenario seed (the Monte Carlo harness passes one
    generator per trial); the same seed always yields the same matrix.
    """
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    A = scenario.steering()
    M, T, N = scenario.M, scenario.snapshots, scenario.N
    if scenario.model == "unconditional":
        S = hermitian_sqrt(scenario.source_cov) @ complex_normal(rng, (N, T))
    else:
        S = scenario.waveforms
    X = A @ S
    if scenario.noise_var > 0:
        X = X + np.sqrt(scenario.noise_var) * complex_normal(rng, (M, T))
    return SnapshotMatrix(X, scenario.digest())


def simulate_partly_calibrated(scenario: Scenario, subarrays, rng=None,
                               phase_offsets=None):
    """Snapshots for a partly calibrated array.

    Each subarray (a list of sensor indices into the scenario geometry) gets an
    unknown phase offset drawn uniformly on [0, 2*pi); the offsets multiply the
    corresponding rows of the steering matrix and are returned alongside X so
    tests can confirm the estimator never needed them.
    """
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if phase_offsets is None:
        phase_offsets = rng.uniform(0, 2 * np.pi, size=len(subarrays))
    gains = np.ones(scenario.M, dtype=complex)
    for rows, phi in zip(subarrays, phase_offsets):
        gains[list(rows)] = np.exp(1j * phi)
    A = gains[:, None] * scenario.steering()
    M, T, N = scenario.M, scenario.snapshots, scenario.N
    if scenario.model == "unconditional":
        S = hermitian_sqrt(scenario.source_cov) @ complex_normal(rng, (N, T))
    else:
        S = scenario.waveforms
    X = A @ S
    if scenario.noise_var > 0:
        X = X + np.sqrt(scenario.noise_var) * complex_normal(rng, (M, T))
    return X, np.asarray(phase_offsets)
