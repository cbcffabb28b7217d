"""Grid-based sparse DoA recovery.

The dictionary is an oversampled steering matrix over a fixed angle grid.
Three problems are provided:

* ``l20_brute_force``: the cardinality-constrained least-squares problem,
  solved by exhaustive support enumeration (oracle use at desk scale only);
* ``mmp_solve``: the convex l2,1-regularized multiple-measurement problem
  ``||X - A S||_F^2 + mu * sum_k ||s_k||_2``, by proximal gradient;
* ``sparrow_bcd``: the equivalent SPARROW trace problem
  ``tr((A D A^H + mu/(2 sqrt T) I)^{-1} R) + tr(D)`` over nonnegative
  diagonal ``D``, by cyclic block-coordinate descent.

At the optimum the two convex problems are linked by ``d_k = ||s_k|| / sqrt(T)``
and their optimal values differ by the factor ``mu * sqrt(T) / 2``.

A semidefinite formulation of SPARROW would plug in next to ``sparrow_bcd``
with the same signature; it is not provided since it needs a general SDP
solver.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainError, steering_block
from .spectra import DEFAULT_STEP, EstimateResult, NullSpectrum, make_grid

# entries below this fraction of the maximum count as zero when reading supports
SUPPORT_FLOOR = 1e-6

BRUTE_FORCE_BUDGET = 100_000


@dataclass(frozen=True)
class Dictionary:
    """Oversampled steering dictionary over a sorted angle grid."""

    grid: np.ndarray
    matrix: np.ndarray

    @property
    def K(self) -> int:
        return int(self.grid.size)

    @property
    def M(self) -> int:
        return int(self.matrix.shape[0])


def build_dictionary(geometry, grid_step: float | None = DEFAULT_STEP,
                     grid=None) -> Dictionary:
    """Steering dictionary on a uniform grid of ``grid_step`` degrees, or on an
    explicit ``grid``."""
    if grid is None:
        if grid_step is None or grid_step <= 0:
            raise DomainError("grid_step must be positive")
        grid = make_grid(grid_step)
    grid = np.sort(np.asarray(grid, dtype=float).ravel())
    A = steering_block(geometry, grid)
    if grid.size < A.shape[0]:
        raise DomainError(f"dictionary needs K >= M (K={grid.size}, M={A.shape[0]})")
    return Dictionary(grid, A)


def row_norms(S) -> np.ndarray:
    return np.linalg.norm(np.asarray(S), axis=1)


def support_of(values, floor: float = SUPPORT_FLOOR) -> np.ndarray:
    """Indices whose magnitude exceeds ``floor`` times the maximum."""
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0 or v.max() <= 0:
        return np.zeros(0, dtype=int)
    return np.nonzero(v > floor * v.max())[0]


# --- l2,0 oracle -----------------------------------------------------------

@dataclass
class BruteForceResult:
    support: tuple
    S: np.ndarray
    residual: float
    supports_tried: int


def l20_brute_force(X, dictionary: Dictionary, N: int,
                    budget: int = BRUTE_FORCE_BUDGET) -> BruteForceResult:
    """Exact minimizer of ``||X - A S||_F^2`` subject to at most N nonzero rows.

    Every size-N support is enumerated and solved by least squares; larger
    problems than ``budget`` supports are refused.
    """
    X = np.asarray(X, dtype=complex)
    if X.ndim == 1:
        X = X[:, None]
    A = dictionary.matrix
    K = dictionary.K
    if not 1 <= N <= K:
        raise DomainError("need 1 <= N <= K")
    count = math.comb(K, N)
    if count > budget:
        raise DomainError(f"brute force refused: C({K},{N}) = {count} supports "
                          f"exceeds the budget of {budget}")
    best = (np.inf, None, None)
    for supp in itertools.combinations(range(K), N):
        As = A[:, supp]
        coef = np.linalg.lstsq(As, X, rcond=None)[0]
        res = X - As @ coef
        val = float(np.real(np.vdot(res, res)))
        if val < best[0] - 1e-12 * max(1.0, abs(best[0]) if np.isfinite(best[0]) else 1.0):
            best = (val, supp, coef)
    S = np.zeros((K, X.shape[1]), dtype=complex)
    S[list(best[1])] = best[2]
    return BruteForceResult(tuple(int(i) for i in best[1]), S, best[0], count)


# --- MMP -------------------------------------------------------------------

@dataclass
class MMPSolution:
    S: np.ndarray
    objective: float
    iterations: int
    converged: bool
    mu: float
    trace: list = field(default_factory=list)

    @property
    def row_norms(self) -> np.ndarray:
        return row_norms(self.S)


def mmp_objective(X, A, S, mu: float) -> float:
    R = X - A @ S
    return float(np.real(np.vdot(R, R)) + mu * np.sum(row_norms(S)))


def group_soft_threshold(V, tau: float) -> np.ndarray:
    """Row-wise proximal map of ``tau * sum_k ||v_k||``."""
    nrm = row_norms(V)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > tau, 1.0 - tau / nrm, 0.0)
    return V * scale[:, None]


def mmp_solve(X, dictionary: Dictionary, mu: float, tol: float = 1e-10,
              max_iter: int = 20000, accelerate: bool = True, S0=None) -> MMPSolution:
    """Proximal-gradient solver for ``||X - A S||_F^2 + mu ||S||_{2,1}``.

    The gradient step is ``1 / L`` with ``L = 2 lambda_max(A^H A)``.  With
    ``accelerate`` the Nesterov momentum is restarted whenever the objective
    would increase, so the accepted iterates never go uphill.  Iteration stops
    when both the relative objective change and the relative iterate change
    fall below ``tol``; otherwise the best iterate is returned with
    ``converged=False``.

    With more snapshots than sensors the rows of the optimal ``S`` lie in the
    row space of ``X``, so the problem is solved on the M-column reduction
    ``X V`` (``V`` the right singular vectors) and mapped back exactly.
    """
    if mu <= 0:
        raise DomainError("mu must be positive")
    X = np.asarray(X, dtype=complex)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] > X.shape[0] and S0 is None:
        _, _, Vh = np.linalg.svd(X, full_matrices=False)
        sol = mmp_solve(X @ Vh.conj().T, dictionary, mu, tol, max_iter, accelerate)
        sol.S = sol.S @ Vh
        sol.objective = mmp_objective(X, dictionary.matrix, sol.S, mu)
        return sol
    A = dictionary.matrix
    AH = A.conj().T
    AHX = AH @ X
    G = AH @ A
    L = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    step = 1.0 / L
    S = np.zeros((A.shape[1], X.shape[1]), dtype=complex) if S0 is None \
        else np.asarray(S0, dtype=complex).copy()
    f = mmp_objective(X, A, S, mu)
    trace = [f]
    Z, t = S.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (G @ Z - AHX)
        S_new = group_soft_threshold(Z - step * grad, mu * step)
        f_new = mmp_objective(X, A, S_new, mu)
        if f_new > f and accelerate and t > 1.0:
            # momentum overshoot: restart from the last accepted point
            Z, t = S.copy(), 1.0
            continue
        dS = np.linalg.norm(S_new - S)
        rel_f = abs(f - f_new) / max(abs(f), np.finfo(float).tiny)
        rel_s = dS / max(np.linalg.norm(S), np.finfo(float).tiny)
        if accelerate:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            Z = S_new + ((t - 1.0) / t_new) * (S_new - S)
            t = t_new
        else:
            Z = S_new
        S, f = S_new, min(f, f_new)
        trace.append(f)
        if rel_f < tol and (rel_s < math.sqrt(tol) or dS == 0.0):
            converged = True
            break
    return MMPSolution(S, mmp_objective(X, A, S, mu), it, converged, float(mu), trace)


# --- SPARROW ---------------------------------------------------------------

@dataclass
class SparrowSolution:
    d: np.ndarray
    objective: float
    iterations: int
    converged: bool
    mu: float
    snapshots_T: int
    trace: list = field(default_factory=list)

    @property
    def lam(self) -> float:
        return sparrow_lambda(self.mu, self.snapshots_T)


def sparrow_lambda(mu: float, T: int) -> float:
    return mu / (2.0 * math.sqrt(T))


def sparrow_objective(R, A, d, lam: float) -> float:
    M = A.shape[0]
    Q = (A * np.asarray(d, dtype=float)) @ A.conj().T + lam * np.eye(M)
    return float(np.real(np.trace(np.linalg.solve(Q, R))) + np.sum(d))


def bcd_coordinate_update(s: float, r: float, d_k: float) -> float:
    """Closed-form minimizer of the SPARROW objective along one coordinate.

    ``s = a_k^H U a_k`` and ``r = a_k^H U R U a_k`` are taken
    at the current inverse ``U = (A D A^H + lam I)^{-1}`` with coordinate value
    ``d_k``.  Removing the coordinate gives ``s0 = s / (1 - d_k s)`` and
    ``r0 = r / (1 - d_k s)^2``; along the coordinate the objective is
    ``const - x r0 / (1 + x s0) + x``, minimized over ``x >= 0`` at
    ``max(0, (sqrt(r0) - 1) / s0)``.
    """
    den = 1.0 - d_k * s
    s0 = s / den
    r0 = r / den**2
    return max(0.0, (math.sqrt(max(r0, 0.0)) - 1.0) / s0)


def _check_psd(R):
    R = np.asarray(R, dtype=complex)
    M = R.shape[0]
    if R.shape != (M, M):
        raise DomainError("covariance must be square")
    if not np.allclose(R, R.conj().T, atol=1e-10 * max(1.0, np.abs(R).max())):
        raise DomainError("covariance must be Hermitian")
    R = 0.5 * (R + R.conj().T)
    if np.linalg.eigvalsh(R)[0] < -1e-10 * max(1.0, np.abs(R).max()):
        raise DomainError("covariance must be positive semidefinite")
    return R


def sparrow_bcd(R, dictionary: Dictionary, mu: float, T: int, tol: float = 1e-10,
                max_iter: int = 2000, d0=None) -> SparrowSolution:
    """Cyclic block-coordinate descent for the SPARROW problem.

    Each sweep first evaluates, for every coordinate at once, whether it would
    move; coordinates sitting at zero whose optimality condition holds are
    skipped, the others are updated one at a time with
    :func:`bcd_coordinate_update` and a Sherman-Morrison update of the inverse.
    The inverse is refreshed from scratch after every sweep.  Every coordinate
    step is an exact minimization, so the objective never increases.
    """
    if mu <= 0:
        raise DomainError("mu must be positive")
    if T < 1:
        raise DomainError("T must be >= 1")
    R = _check_psd(R)
    A = dictionary.matrix
    M, K = A.shape
    lam = sparrow_lambda(mu, T)
    d = np.zeros(K) if d0 is None else np.clip(np.asarray(d0, dtype=float), 0.0, None)

    def inverse(d):
        return np.linalg.inv((A * d) @ A.conj().T + lam * np.eye(M))

    U = inverse(d)
    f = float(np.real(np.trace(U @ R)) + d.sum())
    trace = [f]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        UA = U @ A
        s_all = np.real(np.einsum("mk,mk->k", A.conj(), UA))
        r_all = np.real(np.einsum("mk,mn,nk->k", UA.conj(), R, UA))
        idle = (d == 0) & (r_all <= 1.0)
        for k in np.nonzero(~idle)[0]:
            a = A[:, k]
            Ua = U @ a
            s = float(np.real(np.vdot(a, Ua)))
            r = float(np.real(np.vdot(Ua, R @ Ua)))
            new = bcd_coordinate_update(s, r, d[k])
            delta = new - d[k]
            if delta == 0.0:
                continue
            U = U - (delta / (1.0 + delta * s)) * np.outer(Ua, Ua.conj())
            d[k] = new
        U = inverse(d)
        f_new = float(np.real(np.trace(U @ R)) + d.sum())
        trace.append(f_new)
        if abs(f - f_new) <= tol * max(abs(f), np.finfo(float).tiny):
            f = f_new
            converged = True
            break
        f = f_new
    return SparrowSolution(d, f, it, converged, float(mu), int(T), trace)


def noise_std_estimate(R, N: int | None = None) -> float:
    """Noise standard deviation from the ``M - N`` smallest eigenvalues (the
    smallest one when N is unknown)."""
    w = np.linalg.eigvalsh(np.asarray(R, dtype=complex))
    M = w.size
    tail = w[: M - N] if N is not None and 0 <= N < M else w[:1]
    return float(np.sqrt(max(np.mean(tail), 0.0)))


def default_mu(R, M: int, K: int, T: int, N: int | None = None, c: float = 1.0) -> float:
    """Regularization ``c * sigma * sqrt(M T log K)``.

    ``sqrt(M log K) * sigma`` is the usual group-lasso noise level for one
    snapshot; with the squared-error data term summed over T snapshots the
    noise row norms ``||a_k^H N||`` grow like ``sqrt(T)``, hence the extra
    factor.
    """
    sigma = noise_std_estimate(R, N)
    return c * sigma * math.sqrt(M * T * math.log(K))


# --- support extraction ----------------------------------------------------

def support_to_doas(values, grid, N: int) -> EstimateResult:
    """Grid angles of the N largest local maxima of a row-norm profile.

    A plateau counts once, at its smallest angle; equal peak heights also go
    to the smaller angle.  When fewer than N positive local maxima exist the
    remaining picks are the largest leftover values, with a warning.
    """
    v = np.asarray(values, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float).ravel()
    if v.shape != grid.shape:
        raise DomainError("values and grid must have the same length")
    K = v.size
    if not 1 <= N <= K:
        raise DomainError("need 1 <= N <= K")
    left = np.concatenate([[-np.inf], v[:-1]])
    right = np.concatenate([v[1:], [-np.inf]])
    peaks = np.nonzero((v > left) & (v >= right) & (v > 0))[0]
    order = peaks[np.argsort(-v[peaks], kind="stable")]
    chosen = list(order[:N])
    warn = []
    if len(chosen) < N:
        msg = f"only {len(chosen)} local maxima found; filled with largest values"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        warn.append(msg)
        rest = [i for i in np.argsort(-v, kind="stable") if i not in chosen]
        chosen += rest[: N - len(chosen)]
    spec = NullSpectrum(grid, -v, "row-norms")
    return EstimateResult(grid[np.array(chosen, dtype=int)], spec,
                          {"peak_values": v[np.array(chosen, dtype=int)].tolist()}, warn)


def sparrow_estimate(X, geometry, N: int, mu: float | None = None,
                     grid_step: float = DEFAULT_STEP, grid=None, c: float = 1.0,
                     tol: float = 1e-8, max_iter: int = 2000) -> EstimateResult:
    """SPARROW DoA estimate from snapshots: BCD on the sample covariance, then
    the N largest peaks of ``d``."""
    X = np.asarray(X, dtype=complex)
    M, T = X.shape
    R = X @ X.conj().T / T
    dic = build_dictionary(geometry, grid_step, grid)
    if mu is None:
        mu = default_mu(R, M, dic.K, T, N, c)
    sol = sparrow_bcd(R, dic, mu, T, tol, max_iter)
    res = support_to_doas(sol.d, dic.grid, N)
    res.diagnostics.update(mu=mu, iterations=sol.iterations, converged=sol.converged,
                           objective=sol.objective, d=sol.d)
    if not sol.converged:
        res.warnings.append("SPARROW BCD hit max_iter")
    return res


def mmp_estimate(X, geometry, N: int, mu: float | None = None,
                 grid_step: float = DEFAULT_STEP, grid=None, c: float = 1.0,
                 tol: float = 1e-8, max_iter: int = 5000) -> EstimateResult:
    """MMP DoA estimate: proximal gradient, then the N largest row-norm peaks."""
    X = np.asarray(X, dtype=complex)
    M, T = X.shape
    dic = build_dictionary(geometry, grid_step, grid)
    if mu is None:
        mu = default_mu(X @ X.conj().T / T, M, dic.K, T, N, c)
    sol = mmp_solve(X, dic, mu, tol, max_iter)
    res = support_to_doas(sol.row_norms, dic.grid, N)
    res.diagnostics.update(mu=mu, iterations=sol.iterations, converged=sol.converged,
                           objective=sol.objective, row_norms=sol.row_norms)
    if not sol.converged:
        res.warnings.append("MMP solver hit max_iter")
    return res
