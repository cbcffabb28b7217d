"""DoA estimation with shift-invariant and partly calibrated arrays.

Only the lags between paired sensors are assumed known.  A shift structure
pairs a reference row with a shifted row displaced by a known lag ``delta``;
for a source at ``theta`` the shifted response equals the reference one times
``psi = exp(-1j*pi*delta*cos(theta))``, whatever the (possibly unknown) gain
and phase shared by the pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DomainError
from .spectra import (DEFAULT_STEP, EstimateResult, NullSpectrum, find_n_deepest_minima,
                      make_grid)
from .subspace import SubspaceDecomposition


@dataclass(frozen=True)
class ShiftStructure:
    """Known lags and, per lag, the (reference rows, shifted rows) selectors."""

    shifts: tuple
    pair_selectors: tuple

    def __post_init__(self):
        if len(self.shifts) != len(self.pair_selectors) or not self.shifts:
            raise DomainError("need one selector pair per shift")
        shifts, sels = [], []
        for delta, (ref, sh) in zip(self.shifts, self.pair_selectors):
            if delta <= 0:
                raise DomainError("shifts must be positive")
            ref = tuple(int(i) for i in ref)
            sh = tuple(int(i) for i in sh)
            if len(ref) != len(sh) or not ref:
                raise DomainError("selector blocks must have equal, nonzero heights")
            if min(ref + sh) < 0:
                raise DomainError("selector rows must be nonnegative")
            shifts.append(float(delta))
            sels.append((ref, sh))
        object.__setattr__(self, "shifts", tuple(shifts))
        object.__setattr__(self, "pair_selectors", tuple(sels))

    @property
    def K(self) -> int:
        return len(self.shifts)

    def check_rows(self, M: int):
        for ref, sh in self.pair_selectors:
            if max(ref + sh) >= M:
                raise DomainError(f"selector row out of range for M={M}")

    def blocks(self, U) -> list:
        """``(U_ref, U_shift)`` row blocks of ``U`` for every shift."""
        U = np.asarray(U)
        self.check_rows(U.shape[0])
        return [(U[list(ref)], U[list(sh)]) for ref, sh in self.pair_selectors]


def ula_shift(M: int, delta: int = 1) -> ShiftStructure:
    """Single shift of a ULA: rows ``0..M-1-delta`` against ``delta..M-1``."""
    if not 1 <= delta < M:
        raise DomainError("need 1 <= delta < M")
    return ShiftStructure((float(delta),), ((tuple(range(M - delta)), tuple(range(delta, M))),))


def shifts_from_subarrays(geometry, subarrays, shifts=None,
                          tol: float = 1e-9) -> ShiftStructure:
    """Shift structure of a partly calibrated array.

    Only sensor pairs inside the same subarray are used, so per-subarray gain
    or phase offsets cancel.  For every lag ``delta`` in ``shifts`` (default:
    the distinct positive intra-subarray lags between neighbouring sensors)
    all pairs ``(i, j)`` with ``d_j - d_i = delta`` are collected.
    """
    pos = geometry.as_array() if hasattr(geometry, "as_array") else np.asarray(geometry, float)
    subs = [sorted(int(i) for i in s) for s in subarrays]
    if shifts is None:
        lags = set()
        for s in subs:
            for a, b in zip(s[:-1], s[1:]):
                lags.add(round(float(pos[b] - pos[a]), 9))
        shifts = sorted(lags)
    sels, kept = [], []
    for delta in shifts:
        ref, sh = [], []
        for s in subs:
            for i in s:
                for j in s:
                    if abs(pos[j] - pos[i] - delta) < tol:
                        ref.append(i)
                        sh.append(j)
        if ref:
            sels.append((tuple(ref), tuple(sh)))
            kept.append(float(delta))
    if not kept:
        raise DomainError("no sensor pair realizes any of the requested shifts")
    return ShiftStructure(tuple(kept), tuple(sels))


def _angles_from_psi(psi, delta: float) -> np.ndarray:
    u = -np.angle(psi) / (np.pi * delta)
    if np.any(np.abs(u) > 1 + 1e-9):
        raise DomainError(f"shift delta={delta} aliases: rotation phase maps outside "
                          "[-1, 1]; use a lag of at most 1 half-wavelength")
    return np.rad2deg(np.arccos(np.clip(u, -1.0, 1.0)))


def esprit(decomp: SubspaceDecomposition, shift: ShiftStructure,
           method: str = "ls") -> EstimateResult:
    """LS or TLS ESPRIT on a single-shift structure.

    Solves ``U_ref Psi ~= U_shift`` and maps the eigenvalues of ``Psi`` to
    angles with ``theta = arccos(-arg(psi) / (pi * delta))``.
    """
    if shift.K != 1:
        raise DomainError("ESPRIT takes exactly one shift")
    delta = shift.shifts[0]
    (U1, U2), = shift.blocks(decomp.Us)
    N = decomp.n_signal
    if U1.shape[0] < N:
        raise DomainError(f"block height {U1.shape[0]} is below the source count {N}")
    method = method.lower()
    if method == "ls":
        Psi = np.linalg.lstsq(U1, U2, rcond=None)[0]
    elif method == "tls":
        # right singular vectors of [U1 U2]; the last N span the TLS solution
        _, _, Vh = np.linalg.svd(np.hstack([U1, U2]))
        V = Vh.conj().T
        V12 = V[:N, N:]
        V22 = V[N:, N:]
        Psi = -V12 @ np.linalg.inv(V22)
    else:
        raise DomainError(f"unknown ESPRIT variant {method!r}")
    psi = np.linalg.eigvals(Psi)
    thetas = _angles_from_psi(psi, delta)
    warn = []
    if delta > 1:
        # the phase pi*delta*cos(theta) wraps, which psi alone cannot reveal
        warn.append(f"shift delta={delta} exceeds half a wavelength; angles may be aliased")
    return EstimateResult(thetas, None, {"psi": psi, "variant": method, "delta": delta}, warn)


@dataclass(frozen=True)
class RareMatrixSample:
    theta: float
    matrix: np.ndarray
    min_eigval: float


def _check_blocks(blocks, shifts):
    if len(blocks) != len(shifts) or not blocks:
        raise DomainError("need one block pair per shift")
    n = None
    out = []
    for U1, U2 in blocks:
        U1 = np.asarray(U1, dtype=complex)
        U2 = np.asarray(U2, dtype=complex)
        if U1.ndim != 2 or U1.shape != U2.shape:
            raise DomainError("reference and shifted blocks must have equal shapes")
        if n is None:
            n = U1.shape[1]
        elif U1.shape[1] != n:
            raise DomainError("all blocks must have the same column count")
        out.append((U1, U2))
    return out


def _rare_terms(blocks, shifts):
    """Per shift, the Gram pieces ``(G, C)`` with ``G = U1^H U1 + U2^H U2`` and
    ``C = U1^H U2``."""
    return [(U1.conj().T @ U1 + U2.conj().T @ U2, U1.conj().T @ U2, float(delta))
            for (U1, U2), delta in zip(blocks, shifts)]


def _rare_batch(terms, theta) -> np.ndarray:
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    c = np.cos(np.deg2rad(th))
    n = terms[0][0].shape[0]
    Mt = np.zeros((th.size, n, n), dtype=complex)
    for G, C, delta in terms:
        z = np.exp(1j * np.pi * delta * c)[:, None, None]
        Mt += G[None] - C[None] * z - C.conj().T[None] * np.conj(z)
    return 0.5 * (Mt + np.conj(np.swapaxes(Mt, 1, 2)))


def rare_matrix(theta: float, blocks, shifts) -> RareMatrixSample:
    """``M(theta) = sum_k (U2 - U1 psi_k)^H (U2 - U1 psi_k)`` with
    ``psi_k = exp(-1j*pi*delta_k*cos(theta))``."""
    blocks = _check_blocks(blocks, shifts)
    Mt = _rare_batch(_rare_terms(blocks, shifts), theta)[0]
    return RareMatrixSample(float(theta), Mt, float(np.linalg.eigvalsh(Mt)[0]))


def rare_spectrum(blocks, shifts, grid, N: int, variant: str = "eig",
                  refine: str = "local") -> EstimateResult:
    """RARE estimate: the N deepest minima of ``lambda_min(M(theta))`` (or of
    ``det M(theta)`` with ``variant="det"``)."""
    blocks = _check_blocks(blocks, shifts)
    n = blocks[0][0].shape[1]
    if not 1 <= N <= n:
        raise DomainError("N must not exceed the block column count")
    terms = _rare_terms(blocks, shifts)

    def cost(theta):
        Mt = _rare_batch(terms, theta)
        if variant == "det":
            vals = np.real(np.linalg.det(Mt))
        elif variant == "eig":
            vals = np.linalg.eigvalsh(Mt)[:, 0]
        else:
            raise DomainError(f"unknown RARE variant {variant!r}")
        return np.clip(vals, 0.0, None)

    grid = make_grid(DEFAULT_STEP) if grid is None else np.asarray(grid, dtype=float)
    spec = NullSpectrum(grid, cost(grid), f"rare-{variant}")
    res = find_n_deepest_minima(spec, N, cost=lambda t: float(cost(np.array([t]))[0]),
                                refine=refine)
    res.diagnostics["method"] = "rare"
    return res


def rare_estimate(decomp: SubspaceDecomposition, shift: ShiftStructure, grid=None,
                  variant: str = "eig", refine: str = "local") -> EstimateResult:
    return rare_spectrum(shift.blocks(decomp.Us), shift.shifts, grid, decomp.n_signal,
                         variant, refine)


def concentrated_multishift_objective(T_matrix, blocks, shifts, thetas) -> float:
    """``sum_n t_n^H M(theta_n) t_n`` for the columns ``t_n`` of the
    nonsingular transform ``T_matrix``.

    Evaluated through the trace form
    ``sum_k ||U2_k T - U1_k T Psi_k||_F^2`` with
    ``Psi_k = diag(exp(-1j*pi*delta_k*cos(theta_n)))``.
    """
    blocks = _check_blocks(blocks, shifts)
    Tm = np.asarray(T_matrix, dtype=complex)
    n = blocks[0][0].shape[1]
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    if Tm.shape != (n, th.size):
        raise DomainError("T_matrix must have one column per angle and match the blocks")
    if Tm.shape[0] != Tm.shape[1]:
        raise DomainError("T_matrix must be square")
    sv = np.linalg.svd(Tm, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise DomainError("T_matrix is singular")
    total = 0.0
    c = np.cos(np.deg2rad(th))
    for (U1, U2), delta in zip(blocks, shifts):
        psi = np.exp(-1j * np.pi * delta * c)
        D = U2 @ Tm - (U1 @ Tm) * psi[None, :]
        total += float(np.real(np.vdot(D, D)))
    return total
