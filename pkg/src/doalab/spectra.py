"""Single-source and Partial Relaxation null spectra, N-deepest-minima search,
and the exhaustive two-source DML oracle.

Every spectrum function is vectorized over ``theta``: pass a scalar to get a
float back, or an array of angles (degrees) to get an array.  The data matrix
``Y`` for the DML-family spectra is the unnormalized ``X X^H`` (or any
Hermitian PSD matrix such as ``T * R``), so the concentrated expressions hold
literally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import DomainError, FOV, steering_block
from .subspace import SubspaceDecomposition

DEFAULT_STEP = 0.5


def make_grid(step: float = DEFAULT_STEP, lo: float = FOV[0], hi: float = FOV[1]) -> np.ndarray:
    """Uniform grid strictly inside ``(lo, hi)`` with spacing ``step``."""
    n = int(np.floor((hi - lo) / step + 1e-9))
    grid = lo + step * np.arange(1, n + 1)
    return grid[grid < hi - 1e-12]


@dataclass
class NullSpectrum:
    grid: np.ndarray
    values: np.ndarray
    method: str = ""

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape:
            raise DomainError("grid and values must have the same length")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("spectrum values must be finite")


@dataclass
class EstimateResult:
    thetas_hat: np.ndarray
    spectrum: NullSpectrum | None = None
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.thetas_hat = np.sort(np.asarray(self.thetas_hat, dtype=float))


def _angles(theta):
    th = np.asarray(theta, dtype=float)
    return th, th.ndim == 0


def _out(values, scalar):
    return float(values[0]) if scalar else values


def _hermitian(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=complex)
    return 0.5 * (Y + Y.conj().T)


def _quad(A, Y):
    """Real parts of ``a_k^H Y a_k`` for every column."""
    return np.real(np.einsum("mk,mn,nk->k", A.conj(), Y, A))


def _projected_batch(Y, A):
    """Stack of ``P_a Y P_a`` with ``P_a`` the complement projector of column a."""
    norms = np.sum(np.abs(A) ** 2, axis=0)
    U = A / np.sqrt(norms)                      # unit columns, M x K
    YU = Y @ U                                  # M x K
    q = np.real(np.einsum("mk,mk->k", U.conj(), YU))
    Ut = U.T                                    # K x M
    YUt = YU.T
    B = (Y[None, :, :]
         - Ut[:, :, None] * YUt.conj()[:, None, :]
         - YUt[:, :, None] * Ut.conj()[:, None, :]
         + q[:, None, None] * Ut[:, :, None] * Ut.conj()[:, None, :])
    return 0.5 * (B + np.conj(np.swapaxes(B, 1, 2)))


def _load_if_singular(R, where: str):
    """Return an invertible version of R and whether diagonal loading fired."""
    M = R.shape[0]
    w = np.linalg.eigvalsh(R)
    if w.min() <= 1e-12 * max(abs(w.max()), np.finfo(float).tiny):
        eps = 1e-8 * np.real(np.trace(R)) / M
        warnings.warn(f"{where}: singular covariance, diagonal loading {eps:.3g} applied",
                      RuntimeWarning, stacklevel=3)
        return R + eps * np.eye(M), True
    return R, False


# --- single-source column -------------------------------------------------

def spectrum_beamformer(Y, geometry, theta):
    """``tr(P_a^perp Y)``: conventional beamformer as a null spectrum."""
    th, scalar = _angles(theta)
    Y = _hermitian(Y)
    A = steering_block(geometry, np.atleast_1d(th))
    vals = np.real(np.trace(Y)) - _quad(A, Y) / np.sum(np.abs(A) ** 2, axis=0)
    return _out(np.clip(vals, 0.0, None), scalar)


def spectrum_music(decomp: SubspaceDecomposition, W, geometry, theta):
    """``tr(P_a^perp U_s W U_s^H)``, signal-subspace-weighted MUSIC variant."""
    th, scalar = _angles(theta)
    Y = _signal_matrix(decomp, W)
    A = steering_block(geometry, np.atleast_1d(th))
    vals = np.real(np.trace(Y)) - _quad(A, Y) / np.sum(np.abs(A) ** 2, axis=0)
    return _out(np.clip(vals, 0.0, None), scalar)


def spectrum_capon_fit(R, geometry, theta):
    """Single-source covariance fit; returns ``(value, capon_power)``.

    The fit power is the Capon spectrum ``1 / a^H R^{-1} a`` (the largest
    power keeping ``R - s a a^H`` PSD) and the value is the Frobenius misfit
    ``||R - s a a^H||_F^2``.
    """
    th, scalar = _angles(theta)
    R = _hermitian(R)
    Rl, _ = _load_if_singular(R, "capon_fit")
    A = steering_block(geometry, np.atleast_1d(th))
    Ri = np.linalg.inv(Rl)
    power = 1.0 / _quad(A, Ri)
    aa = np.sum(np.abs(A) ** 2, axis=0)
    value = (np.real(np.vdot(R, R)) - 2 * power * _quad(A, R) + power**2 * aa**2)
    value = np.clip(value, 0.0, None)
    if scalar:
        return float(value[0]), float(power[0])
    return value, power


# --- partial relaxation column --------------------------------------------

def _tail_sum(eigs_ascending, N, square=False):
    """Sum of eigenvalues ``lambda_N..lambda_M`` in descending order, i.e. the
    ``M - N + 1`` smallest."""
    M = eigs_ascending.shape[-1]
    tail = eigs_ascending[..., : M - N + 1]
    return np.sum(tail**2 if square else tail, axis=-1)


def spectrum_pr_dml(Y, geometry, N: int, theta):
    """PR-DML: sum of the ``M - N + 1`` smallest eigenvalues of ``P_a^perp Y``."""
    th, scalar = _angles(theta)
    Y = _hermitian(Y)
    M = Y.shape[0]
    if not 1 <= N < M:
        raise DomainError("PR spectra need 1 <= N < M")
    A = steering_block(geometry, np.atleast_1d(th))
    eigs = np.linalg.eigvalsh(_projected_batch(Y, A))
    return _out(np.clip(_tail_sum(eigs, N), 0.0, None), scalar)


def _signal_matrix(decomp, W):
    W = np.asarray(W)
    if W.ndim == 1:
        W = np.diag(W)
    Us = decomp.Us
    return _hermitian(Us @ W @ Us.conj().T)


def spectrum_pr_wsf(decomp: SubspaceDecomposition, W, geometry, N: int, theta):
    """PR-WSF: PR-DML applied to ``U_s W U_s^H``."""
    return spectrum_pr_dml(_signal_matrix(decomp, W), geometry, N, theta)


def spectrum_pr_ccf(R, geometry, N: int, theta):
    """PR-CCF: sum of squares of the ``M - N + 1`` smallest eigenvalues of the
    Capon-deflated residual ``R - a a^H / (a^H R^{-1} a)``."""
    th, scalar = _angles(theta)
    R = _hermitian(R)
    M = R.shape[0]
    if not 1 <= N < M:
        raise DomainError("PR spectra need 1 <= N < M")
    Rl, _ = _load_if_singular(R, "pr_ccf")
    A = steering_block(geometry, np.atleast_1d(th))
    power = 1.0 / _quad(A, np.linalg.inv(Rl))
    res = R[None] - power[:, None, None] * (A.T[:, :, None] * A.T.conj()[:, None, :])
    res = 0.5 * (res + np.conj(np.swapaxes(res, 1, 2)))
    eigs = np.linalg.eigvalsh(res)
    return _out(_tail_sum(eigs, N, square=True), scalar)


# --- search ---------------------------------------------------------------

def _local_minima(values: np.ndarray) -> np.ndarray:
    v = values
    inner = (v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])
    return np.nonzero(inner)[0] + 1


def parabolic_offset(fm, f0, fp) -> float:
    """Vertex offset (in grid steps) of the parabola through three samples."""
    den = fm - 2.0 * f0 + fp
    if den <= 0:
        return 0.0
    return float(np.clip(0.5 * (fm - fp) / den, -0.5, 0.5))


def find_n_deepest_minima(spectrum: NullSpectrum, N: int,
                          cost: Callable | None = None,
                          refine: str = "local") -> EstimateResult:
    """The ``N`` deepest strict local minima of a sampled null spectrum.

    Boundary samples are never local minima.  Ties in depth go to the smaller
    angle.  Each minimum is refined with a parabola through its grid triple
    (``refine="parabolic"``), by a bounded scalar search of ``cost`` over the
    neighbouring cells (``refine="local"``), or not at all (``"none"``).  If
    fewer than ``N`` minima exist, the smallest remaining samples fill in and
    a warning is recorded.
    """
    grid, v = spectrum.grid, spectrum.values
    if grid.size < 3:
        raise DomainError("spectrum grid needs at least 3 points")
    idx = _local_minima(v)
    order = np.lexsort((grid[idx], v[idx]))
    chosen = [int(i) for i in idx[order][:N]]
    warn = []
    if len(chosen) < N:
        warn.append(f"only {len(chosen)} local minima found for N={N}; "
                    "filled with smallest remaining samples")
        rest = [i for i in np.lexsort((grid, v)) if i not in chosen]
        chosen += [int(i) for i in rest[: N - len(chosen)]]
    est = []
    for i in chosen:
        est.append(_refine(grid, v, i, cost, refine))
    diag = {"grid_indices": chosen, "minima_values": [float(v[i]) for i in chosen],
            "n_local_minima": int(idx.size)}
    return EstimateResult(np.array(est), spectrum, diag, warn)


def _refine(grid, v, i, cost, refine):
    if refine == "none" or i == 0 or i == grid.size - 1:
        return float(grid[i])
    step_l = grid[i] - grid[i - 1]
    step_r = grid[i + 1] - grid[i]
    if refine == "local" and cost is not None:
        lo, hi = grid[i] - step_l, grid[i] + step_r
        res = minimize_scalar(lambda t: float(cost(t)), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-7})
        if res.fun <= v[i]:
            return float(res.x)
        return float(grid[i])
    off = parabolic_offset(v[i - 1], v[i], v[i + 1])
    return float(grid[i] + off * (step_r if off > 0 else step_l))


def spectral_estimate(cost: Callable, N: int, grid, method: str,
                      refine: str = "local") -> EstimateResult:
    """Evaluate a vectorized cost over ``grid`` and pick the N deepest minima."""
    grid = np.asarray(grid, dtype=float)
    spec = NullSpectrum(grid, cost(grid), method)
    res = find_n_deepest_minima(spec, N, cost=cost, refine=refine)
    res.diagnostics["method"] = method
    return res


# --- multi-source DML -----------------------------------------------------

@dataclass
class DMLSurface:
    grid: np.ndarray
    values: np.ndarray
    minima: list
    n_local_minima: int
    argmin: tuple
    min_value: float


def _pair_costs(Y, A):
    """Full two-source concentrated DML cost ``tr(P_[ai,aj]^perp Y)``."""
    G = A.conj().T @ A
    Q = A.conj().T @ Y @ A
    gd = np.real(np.diag(G))
    qd = np.real(np.diag(Q))
    det = np.outer(gd, gd) - np.abs(G) ** 2
    num = (np.outer(qd, gd) + np.outer(gd, qd) - 2 * np.real(G * Q.T))
    trY = np.real(np.trace(Y))
    with np.errstate(divide="ignore", invalid="ignore"):
        fit = num / det
    single = qd / gd
    singular = det <= 1e-10 * np.outer(gd, gd)
    fit = np.where(singular, np.maximum.outer(single, single), fit)
    return trY - fit


def surface_local_minima(values: np.ndarray):
    """Strict 8-neighbour local minima away from the border and the diagonal."""
    V = values
    c = V[1:-1, 1:-1]
    mask = np.ones_like(c, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = V[1 + di: V.shape[0] - 1 + di, 1 + dj: V.shape[1] - 1 + dj]
            mask &= c < nb
    ii, jj = np.nonzero(mask)
    ii, jj = ii + 1, jj + 1
    keep = ii != jj
    return ii[keep], jj[keep]


def dml_cost_surface(Y, geometry, grid, N: int = 2) -> DMLSurface:
    """Two-source DML cost over ``grid x grid``.

    The surface is symmetric; the diagonal (coinciding angles) carries the
    single-source cost and is excluded from the minima.  ``minima`` lists the
    upper-triangle local minima ``(theta1, theta2, value)`` with
    ``theta1 < theta2`` sorted by value; ``n_local_minima`` counts the interior
    minima on the full square, as plotted.
    """
    if N != 2:
        raise DomainError("surface rendering is limited to N = 2")
    grid = np.asarray(grid, dtype=float)
    if grid.size < 3:
        raise DomainError("grid too coarse for a surface")
    Y = _hermitian(Y)
    A = steering_block(geometry, grid)
    V = _pair_costs(Y, A)
    V = 0.5 * (V + V.T)
    ii, jj = surface_local_minima(V)
    upper = ii < jj
    mins = sorted(((float(grid[i]), float(grid[j]), float(V[i, j]))
                   for i, j in zip(ii[upper], jj[upper])), key=lambda r: (r[2], r[0]))
    off = V.copy()
    np.fill_diagonal(off, np.inf)
    i, j = np.unravel_index(np.argmin(off), off.shape)
    i, j = min(i, j), max(i, j)
    return DMLSurface(grid, V, mins, int(ii.size), (float(grid[i]), float(grid[j])),
                      float(V[i, j]))


def dml_cost(Y, geometry, thetas) -> float:
    """Concentrated DML cost ``tr(P_A^perp Y)`` at a set of angles."""
    from .subspace import projector_complement
    A = steering_block(geometry, np.atleast_1d(thetas))
    return float(np.real(np.trace(projector_complement(A) @ _hermitian(Y))))


def exact_multisource_grid(criterion: str, data, geometry, N: int, grid,
                           W=None) -> EstimateResult:
    """Exhaustive DML/WSF minimizer over the N-fold grid (N <= 2); test oracle.

    For ``criterion="dml"`` ``data`` is ``X X^H``; for ``"wsf"`` it is a
    :class:`SubspaceDecomposition` and ``W`` its weighting (identity default).
    """
    if criterion == "dml":
        Y = _hermitian(data)
    elif criterion == "wsf":
        W = np.eye(data.n_signal) if W is None else W
        Y = _signal_matrix(data, W)
    else:
        raise DomainError(f"unknown criterion {criterion!r}")
    grid = np.asarray(grid, dtype=float)
    if N == 1:
        vals = spectrum_beamformer(Y, geometry, grid)
        k = int(np.argmin(vals))
        return EstimateResult(np.array([grid[k]]), NullSpectrum(grid, vals, criterion),
                              {"objective": float(vals[k])})
    if N == 2:
        A = steering_block(geometry, grid)
        V = _pair_costs(Y, A)
        V = 0.5 * (V + V.T)
        np.fill_diagonal(V, np.inf)
        i, j = np.unravel_index(np.argmin(V), V.shape)
        return EstimateResult(np.array([grid[min(i, j)], grid[max(i, j)]]), None,
                              {"objective": float(V[i, j])})
    raise DomainError("exhaustive search is limited to N <= 2")
