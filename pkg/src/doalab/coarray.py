"""More sources than sensors through the difference coarray.

For uncorrelated sources the covariance entry ``R[i, j]`` depends on the
sensor pair only through the lag ``u = d_i - d_j``:
``R[i, j] = sum_n p_n exp(-1j*pi*u*cos(theta_n)) + nu * [u == 0]``.
Averaging all entries that share a lag gives one virtual snapshot on the
coarray; its contiguous part ``-l..l`` behaves like the covariance column of
a ULA with ``l + 1`` elements and is processed by spatial smoothing and MUSIC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ArrayGeometry, DomainError, CoarrayStructure, difference_coarray
from .spectra import DEFAULT_STEP, EstimateResult, make_grid, spectral_estimate
from .subspace import eigendecompose, spatial_smoothing


@dataclass(frozen=True)
class CoarraySnapshot:
    """Per-lag averaged covariance values.

    ``lags`` and ``lag_values`` cover every unique lag; ``contiguous_segment``
    holds the values for lags ``-l..l``.
    """

    lags: np.ndarray
    lag_values: np.ndarray
    contiguous_segment: np.ndarray
    source_count_hint: int | None = None

    @property
    def half_length(self) -> int:
        return (self.contiguous_segment.size - 1) // 2

    def value(self, lag: int) -> complex:
        idx = np.searchsorted(self.lags, lag)
        if idx >= self.lags.size or self.lags[idx] != lag:
            raise KeyError(lag)
        return complex(self.lag_values[idx])


def vectorize_covariance(R, structure: CoarrayStructure | ArrayGeometry,
                         source_count_hint: int | None = None) -> CoarraySnapshot:
    """Average the covariance entries of every lag.

    The values at ``u`` and ``-u`` are then symmetrized as
    ``(c_u + conj(c_-u)) / 2`` so the snapshot is exactly conjugate symmetric
    and the zero lag is real.
    """
    if isinstance(structure, ArrayGeometry):
        structure = difference_coarray(structure)
    if not isinstance(structure, CoarrayStructure):
        raise DomainError("need a coarray structure of an integer-grid geometry")
    R = np.asarray(R, dtype=complex)
    lags = structure.lags
    vals = np.empty(lags.size, dtype=complex)
    for n, u in enumerate(lags):
        pairs = structure.selection_map[int(u)]
        rows, cols = zip(*pairs)
        vals[n] = R[list(rows), list(cols)].mean()
    # lags are sorted and symmetric, so reversing pairs u with -u
    vals = 0.5 * (vals + np.conj(vals[::-1]))
    zero = lags.size // 2
    vals[zero] = vals[zero].real
    ell = structure.contiguous_half_length
    segment = vals[zero - ell: zero + ell + 1].copy()
    return CoarraySnapshot(lags.copy(), vals, segment, source_count_hint)


class IdentifiabilityError(DomainError):
    """Raised when more sources are requested than the coarray can resolve."""


def coarray_music(R, geometry: ArrayGeometry, N: int, grid=None, L: int | None = None,
                  refine: str = "local") -> EstimateResult:
    """Coarray MUSIC for uncorrelated sources.

    Pipeline: lag averaging, contiguous segment ``-l..l``, spatial smoothing
    with window ``L`` (default ``l + 1``), eigendecomposition and MUSIC on the
    virtual ULA with ``L`` elements.  Correlated or coherent sources violate
    the model and are not resolved.
    """
    structure = difference_coarray(geometry)
    ell = structure.contiguous_half_length
    L = ell + 1 if L is None else int(L)
    if not 1 <= L <= ell + 1:
        raise DomainError(f"window length must be in 1..{ell + 1}")
    if not 1 <= N < L:
        raise IdentifiabilityError(
            f"coarray MUSIC resolves at most {L - 1} sources with window L={L} "
            f"(contiguous lags -{ell}..{ell} of {structure.n_unique} unique lags); "
            f"got N={N}")
    snap = vectorize_covariance(R, structure, N)
    # window entries at lags s..s+L-1 are proportional to a virtual ULA response
    Rss = spatial_smoothing(snap.contiguous_segment, L)
    decomp = eigendecompose(Rss, N)
    Un = decomp.Un
    virtual = np.arange(L, dtype=float)
    grid = make_grid(DEFAULT_STEP) if grid is None else np.asarray(grid, dtype=float)

    def cost(theta):
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        A = np.exp(-1j * np.pi * np.outer(virtual, np.cos(np.deg2rad(th))))
        vals = np.sum(np.abs(Un.conj().T @ A) ** 2, axis=0) / L
        return float(vals[0]) if np.ndim(theta) == 0 else vals

    res = spectral_estimate(cost, N, grid, "coarray-music", refine)
    res.diagnostics.update(L=L, contiguous_half_length=ell)
    return res


def identifiability_budget(geometry) -> dict:
    """Lag accounting for a linear array.

    ``real_equations`` counts the real-valued independent entries of the
    vectorized covariance (one per unique lag: the zero lag is real and each
    pair ``+-u`` carries one complex value).  With N angles, N powers and the
    noise level as unknowns, ``2N + 1 <= real_equations`` gives the counting
    bound.  Off-grid geometries get their unique differences counted directly
    and no contiguous segment.
    """
    if isinstance(geometry, ArrayGeometry) and geometry.is_integer_grid:
        st = difference_coarray(geometry)
        unique = st.n_unique
        ell = st.contiguous_half_length
        M = geometry.M
    else:
        pos = geometry.as_array() if isinstance(geometry, ArrayGeometry) \
            else np.asarray(geometry, dtype=float)
        M = pos.size
        diffs = np.round(np.subtract.outer(pos, pos).ravel(), 9)
        unique = int(np.unique(diffs).size)
        ell = 0
    return {
        "M": int(M),
        "unique_lags": int(unique),
        "real_equations": int(unique),
        "contiguous_half_length": int(ell),
        "contiguous_lags": int(2 * ell + 1),
        "max_sources_coarray_music": int(ell),
        "counting_bound": int((unique - 1) // 2),
    }
