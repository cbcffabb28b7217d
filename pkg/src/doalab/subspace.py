"""Sample covariance, eigen-subspaces, projectors, WSF weights and smoothing."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import DomainError


def sample_covariance(X) -> np.ndarray:
    """``(1/T) X X^H``, symmetrized to remove round-off asymmetry."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    T = X.shape[1]
    if T < 1:
        raise DomainError("need at least one snapshot")
    R = X @ X.conj().T / T
    return 0.5 * (R + R.conj().T)


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Eigendecomposition of a covariance with a signal/noise split.

    Eigenvalues are sorted in descending order; ``noise_var_est`` is the mean
    of the ``M - N`` smallest ones.
    """

    cov: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    n_signal: int

    @property
    def M(self) -> int:
        return self.cov.shape[0]

    @property
    def Us(self) -> np.ndarray:
        return self.eigvecs[:, : self.n_signal]

    @property
    def Un(self) -> np.ndarray:
        return self.eigvecs[:, self.n_signal:]

    @property
    def Ls(self) -> np.ndarray:
        return self.eigvals[: self.n_signal]

    @property
    def noise_var_est(self) -> float:
        return float(np.mean(self.eigvals[self.n_signal:]))


def eigh_descending(R: np.ndarray):
    w, V = np.linalg.eigh(R)
    return w[::-1].copy(), V[:, ::-1].copy()


def eigendecompose(R, n_signal: int) -> SubspaceDecomposition:
    R = np.asarray(R, dtype=complex)
    M = R.shape[0]
    if R.shape != (M, M):
        raise DomainError("covariance must be square")
    if not 1 <= n_signal < M:
        raise DomainError(f"n_signal must satisfy 1 <= N < M (got N={n_signal}, M={M})")
    R = 0.5 * (R + R.conj().T)
    w, V = eigh_descending(R)
    return SubspaceDecomposition(R, w, V, int(n_signal))


def projector_complement(A) -> np.ndarray:
    """Orthogonal projector onto the complement of ``span(A)``.

    Uses an economy QR factorization; raises ``np.linalg.LinAlgError`` for a
    numerically rank-deficient ``A``.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim == 1:
        A = A[:, None]
    M, k = A.shape
    Q, Rf = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(Rf))
    if k and diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise np.linalg.LinAlgError("matrix is numerically rank deficient")
    P = np.eye(M, dtype=complex) - Q @ Q.conj().T
    return 0.5 * (P + P.conj().T)


def wsf_weights(decomp: SubspaceDecomposition, kind: str = "optimal") -> np.ndarray:
    """WSF weighting ``(L_s - nu I)^2 L_s^{-1}`` or the identity.

    Negative ``lambda - nu`` differences are clipped to 0 with a warning.
    """
    N = decomp.n_signal
    if kind == "identity":
        return np.eye(N)
    if kind != "optimal":
        raise DomainError(f"unknown weighting {kind!r}")
    lam = decomp.Ls
    gap = lam - decomp.noise_var_est
    if np.any(gap < 0):
        warnings.warn("signal eigenvalue below noise estimate; weight clipped to 0",
                      RuntimeWarning, stacklevel=2)
        gap = np.clip(gap, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(lam > 0, gap**2 / lam, 0.0)
    return np.diag(w)


def spatial_smoothing(coarray_vector, L: int) -> np.ndarray:
    """Forward spatial smoothing of a contiguous coarray vector.

    ``coarray_vector`` holds the lag values for lags ``-l..l`` (length
    ``2l + 1``).  Every length-``L`` window ``z_i`` is used, giving
    ``2l + 2 - L`` windows, and the result is their averaged outer product.
    """
    z = np.asarray(coarray_vector, dtype=complex).ravel()
    if z.size % 2 == 0:
        raise DomainError("coarray vector must have odd length 2l+1")
    ell = (z.size - 1) // 2
    if not 1 <= L <= ell + 1:
        raise DomainError(f"window length L={L} exceeds l+1={ell + 1}")
    n_win = z.size - L + 1
    # column i holds lags (i - l) .. (i - l + L - 1)
    windows = np.stack([z[i:i + L] for i in range(n_win)], axis=1)
    Rss = windows @ windows.conj().T / n_win
    return 0.5 * (Rss + Rss.conj().T)


def music_null_spectrum(Un: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Standard noise-subspace MUSIC null spectrum ``|Un^H a|^2 / a^H a``."""
    num = np.sum(np.abs(Un.conj().T @ A) ** 2, axis=0)
    return num / np.sum(np.abs(A) ** 2, axis=0)
