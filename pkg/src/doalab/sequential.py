"""Greedy sequential DoA estimators built on the DML criterion: MP, OMP, OLS
and PR-DML-OLS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import DomainError, steering_block
from .spectra import DEFAULT_STEP, EstimateResult, make_grid, parabolic_offset

METHODS = ("mp", "omp", "ols", "pr-dml-ols")

# augmented steering matrices worse conditioned than this are skipped
COND_LIMIT = 1e8


@dataclass
class SequentialState:
    k: int = 0
    A_hat: np.ndarray | None = None
    thetas_hat: list = field(default_factory=list)
    S_hat: np.ndarray | None = None
    criterion: str = "dml"


def _orth_basis(A_prev):
    if A_prev is None or A_prev.shape[1] == 0:
        return None
    Q, _ = np.linalg.qr(A_prev, mode="reduced")
    return Q


def _deflate(Q, A):
    """Components of the columns of A orthogonal to span(Q)."""
    if Q is None:
        return A
    return A - Q @ (Q.conj().T @ A)


def _ols_values(Y, Q, A):
    """``tr(P^perp_[A_prev, a] Y)`` for every candidate column of A."""
    At = _deflate(Q, A)
    if Q is None:
        base = np.real(np.trace(Y))
    else:
        base = np.real(np.trace(Y) - np.trace(Q.conj().T @ Y @ Q))
    norm_a = np.sum(np.abs(A) ** 2, axis=0)
    norm_t = np.sum(np.abs(At) ** 2, axis=0)
    quad = np.real(np.einsum("mk,mn,nk->k", At.conj(), Y, At))
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = base - quad / norm_t
    collinear = norm_t <= norm_a / COND_LIMIT**2
    vals = np.where(collinear, np.inf, vals)
    return vals


def ols_selection_value(X, geometry, A_prev, theta):
    """Concentrated OLS selection value ``tr(P^perp_[A_prev, a(theta)] X X^H)``.

    ``theta`` may be scalar or an array; near-collinear augmentations give
    ``+inf``.
    """
    X = np.asarray(X)
    Y = X @ X.conj().T
    th = np.asarray(theta, dtype=float)
    A = steering_block(geometry, np.atleast_1d(th))
    vals = _ols_values(Y, _orth_basis(_as_prev(A_prev, X.shape[0])), A)
    return float(vals[0]) if th.ndim == 0 else vals


def _as_prev(A_prev, M):
    if A_prev is None:
        return None
    A_prev = np.asarray(A_prev, dtype=complex)
    if A_prev.ndim == 1:
        A_prev = A_prev[:, None]
    if A_prev.shape[0] != M:
        raise DomainError("A_prev has the wrong number of rows")
    return A_prev if A_prev.shape[1] else None


def _prdmlols_values(Y, Q, A, n_relaxed):
    """Sum of the eigenvalues of ``P Y P`` (P the complement projector of
    ``[A_prev, a]``) left after discarding its ``n_relaxed`` largest."""
    M, K = A.shape
    At = _deflate(Q, A)
    norm_a = np.sum(np.abs(A) ** 2, axis=0)
    norm_t = np.sum(np.abs(At) ** 2, axis=0)
    collinear = norm_t <= norm_a / COND_LIMIT**2
    U = At / np.sqrt(np.where(collinear, 1.0, norm_t))
    Pp = np.eye(M) - (Q @ Q.conj().T if Q is not None else 0)
    P = Pp[None] - U.T[:, :, None] * U.T.conj()[:, None, :]
    B = P @ Y[None] @ P
    B = 0.5 * (B + np.conj(np.swapaxes(B, 1, 2)))
    eigs = np.linalg.eigvalsh(B)
    vals = np.sum(eigs[:, : M - n_relaxed], axis=1)
    return np.where(collinear, np.inf, np.clip(vals, 0.0, None))


def prdmlols_selection_value(X, geometry, A_prev, theta, N: int):
    """PR-DML-OLS selection value at iteration ``k = cols(A_prev) + 1``.

    The ``N - k`` relaxed columns absorb the ``N - k`` largest eigenvalues of
    the projected data, so the value is the sum of the remaining ones.
    """
    X = np.asarray(X)
    M = X.shape[0]
    Y = X @ X.conj().T
    prev = _as_prev(A_prev, M)
    k = (0 if prev is None else prev.shape[1]) + 1
    if k > N:
        raise DomainError("iteration index exceeds N")
    th = np.asarray(theta, dtype=float)
    A = steering_block(geometry, np.atleast_1d(th))
    vals = _prdmlols_values(Y, _orth_basis(prev), A, N - k)
    return float(vals[0]) if th.ndim == 0 else vals


def _pick(grid, vals, masked, refine, criterion):
    cand = np.where(masked, np.inf, vals)
    i = int(np.argmin(cand))
    if not np.isfinite(cand[i]):
        return None, i
    theta = float(grid[i])
    if refine == "none" or not 0 < i < grid.size - 1:
        return theta, i
    if not (np.isfinite(vals[i - 1]) and np.isfinite(vals[i + 1])):
        return theta, i
    if not (vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]):
        return theta, i
    if refine == "local":
        res = minimize_scalar(lambda t: float(criterion(np.array([t]))[0]),
                              bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1e-7})
        if np.isfinite(res.fun) and res.fun <= vals[i]:
            theta = float(res.x)
        return theta, i
    off = parabolic_offset(vals[i - 1], vals[i], vals[i + 1])
    theta += off * (grid[i + 1] - grid[i] if off > 0 else grid[i] - grid[i - 1])
    return theta, i


def run_sequential(method: str, X, geometry, N: int, grid=None,
                   refine: str = "local") -> EstimateResult:
    """Estimate N DoAs one at a time with MP, OMP, OLS or PR-DML-OLS.

    Each iteration takes the global minimum of its selection criterion over
    the grid and refines it inside the neighbouring cells, either by a bounded
    scalar search of the criterion (``refine="local"``) or by a parabola
    through the three samples (``"parabolic"``).  Previously selected grid
    points and their immediate neighbours are masked; earlier estimates are
    never revisited.
    """
    method = method.lower()
    if method not in METHODS:
        raise DomainError(f"unknown sequential method {method!r}")
    X = np.asarray(X, dtype=complex)
    M = X.shape[0]
    if not 1 <= N < M:
        raise DomainError("sequential estimation needs 1 <= N < M")
    grid = make_grid(DEFAULT_STEP) if grid is None else np.asarray(grid, dtype=float)
    Y = X @ X.conj().T
    Y = 0.5 * (Y + Y.conj().T)
    state = SequentialState(criterion=method)
    masked = np.zeros(grid.size, dtype=bool)
    objective, warn = [], []
    S_hat = np.zeros((0, X.shape[1]), dtype=complex)
    A_hat = np.zeros((M, 0), dtype=complex)
    for k in range(1, N + 1):
        if method in ("mp", "omp"):
            E = X - A_hat @ S_hat
            R_e = E @ E.conj().T
            tr_e = np.real(np.trace(R_e))

            def criterion(th, R_e=R_e, tr_e=tr_e):
                A = steering_block(geometry, th)
                return tr_e - np.real(np.einsum("mk,mn,nk->k", A.conj(), R_e, A)) / M
        elif method == "ols":
            Q = _orth_basis(A_hat if k > 1 else None)

            def criterion(th, Q=Q):
                return _ols_values(Y, Q, steering_block(geometry, th))
        else:
            Q = _orth_basis(A_hat if k > 1 else None)

            def criterion(th, Q=Q, n_rel=N - k):
                return _prdmlols_values(Y, Q, steering_block(geometry, th), n_rel)
        vals = criterion(grid)
        theta, i = _pick(grid, vals, masked, refine, criterion)
        if theta is None:
            warn.append(f"iteration {k}: no admissible candidate left")
            break
        masked[max(i - 1, 0): i + 2] = True
        a = steering_block(geometry, [theta])
        if method == "mp":
            E = X - A_hat @ S_hat
            s = (a.conj().T @ E) / np.real(a.conj().T @ a)
            S_hat = np.vstack([S_hat, s])
            A_hat = np.hstack([A_hat, a])
        elif method == "omp":
            A_hat = np.hstack([A_hat, a])
            S_hat = np.linalg.lstsq(A_hat, X, rcond=None)[0]
        else:
            A_hat = np.hstack([A_hat, a])
        state.thetas_hat.append(theta)
        resid = X - A_hat @ S_hat if method in ("mp", "omp") else None
        if resid is not None:
            objective.append(float(np.real(np.vdot(resid, resid))))
        else:
            objective.append(float(vals[i]))
    state.k = len(state.thetas_hat)
    state.A_hat, state.S_hat = A_hat, S_hat if method in ("mp", "omp") else None
    diag = {"method": method, "objective": objective, "iterations": state.k,
            "selection_order": list(state.thetas_hat)}
    return EstimateResult(np.array(state.thetas_hat), None, diag, warn)
