"""Linear array geometries, steering vectors and difference-coarray structure.

Positions are expressed in half-wavelength units and angles in degrees,
measured from the array axis, inside the open field of view (0, 180).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

FOV = (0.0, 180.0)

# tolerance used to decide whether a real position sits on the integer grid
_GRID_TOL = 1e-9


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


@dataclass(frozen=True)
class ArrayGeometry:
    """Sensor positions of a linear array.

    Attributes
    ----------
    positions : tuple of float
        Sensor positions in half-wavelength units, strictly increasing and
        starting at 0.
    kind : str
        One of ``arbitrary``, ``ula``, ``thinned-ula``, ``nested``, ``coprime``.
    baseline : float
        Common spacing for integer-grid geometries (1.0 means half a
        wavelength).
    params : tuple
        Construction parameters, e.g. ``(M1, M2)`` for nested arrays.
    """

    positions: tuple[float, ...]
    kind: str = "arbitrary"
    baseline: float = 1.0
    params: tuple = ()
    integer_positions: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 1 or pos.size == 0:
            raise DomainError("positions must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(pos)):
            raise DomainError("positions must be finite")
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise DomainError("positions must be strictly increasing")
        if pos[0] != 0.0:
            raise DomainError("positions must be translation-normalized (first = 0)")
        if self.baseline <= 0:
            raise DomainError("baseline must be positive")
        object.__setattr__(self, "positions", tuple(float(p) for p in pos))
        if self.integer_positions is None:
            ratio = pos / self.baseline
            if np.all(np.abs(ratio - np.round(ratio)) < _GRID_TOL):
                ints = tuple(int(v) for v in np.round(ratio))
                object.__setattr__(self, "integer_positions", ints)
        elif self.kind != "arbitrary":
            ints = np.asarray(self.integer_positions) * self.baseline
            if not np.allclose(ints, pos, atol=_GRID_TOL):
                raise DomainError("integer_positions inconsistent with positions")

    @property
    def M(self) -> int:
        return len(self.positions)

    @property
    def is_integer_grid(self) -> bool:
        return self.integer_positions is not None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "positions": [float(p) for p in self.positions],
               "baseline": float(self.baseline)}
        if self.params:
            out["params"] = list(self.params)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ArrayGeometry":
        kind = data.get("kind", "arbitrary")
        params = tuple(data.get("params", ()))
        if "positions" not in data:
            return parse_geometry(kind + ":" + ",".join(str(p) for p in params))
        return cls(tuple(data["positions"]), kind=kind,
                   baseline=float(data.get("baseline", 1.0)), params=params)


def _normalize(positions) -> np.ndarray:
    pos = np.unique(np.asarray(positions, dtype=float))
    return pos - pos[0]


def make_arbitrary(positions) -> ArrayGeometry:
    """Arbitrary linear array; positions are sorted and shifted to start at 0."""
    return ArrayGeometry(tuple(_normalize(positions)), kind="arbitrary")


def make_ula(M: int, spacing: float = 1.0) -> ArrayGeometry:
    if M < 1:
        raise DomainError("ULA needs at least one sensor")
    return ArrayGeometry(tuple(spacing * np.arange(M)), kind="ula",
                         baseline=spacing, params=(M,))


def make_thinned_ula(indices, spacing: float = 1.0) -> ArrayGeometry:
    """ULA with missing sensors, given by the occupied integer slots."""
    idx = np.unique(np.asarray(indices, dtype=int))
    idx = idx - idx[0]
    return ArrayGeometry(tuple(spacing * idx), kind="thinned-ula", baseline=spacing,
                         params=tuple(int(i) for i in idx))


def make_nested(M1: int, M2: int) -> ArrayGeometry:
    """Two-level nested array.

    The inner ULA has ``M1`` sensors at spacing 1 starting at the origin, the
    outer ULA has ``M2`` sensors at spacing ``M1 + 1`` starting at ``M1``.
    """
    if M1 < 1 or M2 < 1:
        raise DomainError("nested array needs M1, M2 >= 1")
    inner = np.arange(M1)
    outer = M1 + (M1 + 1) * np.arange(M2)
    pos = np.unique(np.concatenate([inner, outer]))
    return ArrayGeometry(tuple(float(p) for p in pos), kind="nested",
                         params=(M1, M2))


def make_coprime(M1: int, M2: int, F: int = 1, offset: int = 0) -> ArrayGeometry:
    """Coprime array built from two interleaved ULAs.

    Subarray one has ``M1`` sensors at spacing ``M2``; subarray two has
    ``M2 - 1`` sensors at spacing ``M1 // F`` and is displaced by ``offset``
    baselines.  Sensors falling on the same slot (the shared origin for the
    default ``offset=0``) are merged.
    """
    if M1 < 1 or M2 < 1:
        raise DomainError("coprime array needs positive M1, M2")
    if math.gcd(M1, M2) != 1:
        raise DomainError(f"M1={M1} and M2={M2} are not coprime")
    if not (1 <= F <= M1) or M1 % F:
        raise DomainError(f"compression factor F={F} must divide M1={M1}")
    L1, L2 = M2, M1 // F
    if math.gcd(L1, L2) != 1:
        raise DomainError(f"subarray spacings {L1}, {L2} are not coprime")
    sub1 = L1 * np.arange(M1)
    sub2 = offset + L2 * np.arange(M2 - 1)
    pos = _normalize(np.concatenate([sub1, sub2]))
    return ArrayGeometry(tuple(float(p) for p in pos), kind="coprime",
                         params=(M1, M2, F, offset))


def parse_geometry(text: str) -> ArrayGeometry:
    """Parse ``ula:10``, ``nested:3,3``, ``coprime:3,4,1``, ``thinned-ula:0,1,4``
    or ``positions:0,1,2.5``."""
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    args = [a for a in rest.replace(" ", "").split(",") if a]
    if kind == "ula":
        return make_ula(int(args[0]), float(args[1]) if len(args) > 1 else 1.0)
    if kind == "nested":
        return make_nested(int(args[0]), int(args[1]))
    if kind == "coprime":
        ints = [int(a) for a in args]
        return make_coprime(*ints)
    if kind in ("thinned-ula", "thinned"):
        return make_thinned_ula([int(a) for a in args])
    if kind in ("positions", "arbitrary"):
        return make_arbitrary([float(a) for a in args])
    raise DomainError(f"unknown geometry kind {kind!r}")


def _check_angles(theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(th)) or np.any(th <= FOV[0]) or np.any(th >= FOV[1]):
        raise DomainError("angles must lie in the open interval (0, 180) degrees")
    return th


def _positions(geometry) -> np.ndarray:
    if isinstance(geometry, ArrayGeometry):
        return geometry.as_array()
    return np.asarray(geometry, dtype=float)


def steering_vector(geometry, theta: float) -> np.ndarray:
    """Array response ``exp(-1j*pi*d_m*cos(theta))`` for one angle in degrees."""
    th = _check_angles(theta)
    if th.ndim != 0:
        raise DomainError("steering_vector takes a scalar angle")
    return np.exp(-1j * np.pi * _positions(geometry) * np.cos(np.deg2rad(th)))


def steering_block(geometry, thetas) -> np.ndarray:
    """Steering vectors for an arbitrary batch of angles (no ordering check).

    Used internally for grids and for candidate evaluation.
    """
    th = np.atleast_1d(_check_angles(thetas))
    return np.exp(-1j * np.pi * np.outer(_positions(geometry), np.cos(np.deg2rad(th))))


def steering_derivative(geometry, thetas) -> np.ndarray:
    """Derivative of the steering vectors with respect to the angle in radians."""
    th = np.deg2rad(np.atleast_1d(_check_angles(thetas)))
    d = _positions(geometry)
    A = np.exp(-1j * np.pi * np.outer(d, np.cos(th)))
    return 1j * np.pi * np.outer(d, np.sin(th)) * A


def steering_matrix(geometry, thetas) -> np.ndarray:
    """M x N steering matrix for strictly increasing angles in degrees."""
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    if th.ndim != 1 or th.size == 0:
        raise DomainError("need at least one angle")
    if th.size > 1 and np.any(np.diff(th) <= 0):
        raise DomainError("angles must be strictly increasing and distinct")
    return steering_block(geometry, th)


@dataclass(frozen=True)
class CoarrayStructure:
    lags: np.ndarray
    multiplicity: np.ndarray
    contiguous_half_length: int
    selection_map: dict

    @property
    def n_unique(self) -> int:
        return int(self.lags.size)

    def pairs(self, lag: int) -> list[tuple[int, int]]:
        return self.selection_map.get(int(lag), [])


def difference_coarray(geometry: ArrayGeometry) -> CoarrayStructure:
    """Enumerate all pairwise lags ``d_i - d_j`` of an integer-grid geometry."""
    if not isinstance(geometry, ArrayGeometry) or not geometry.is_integer_grid:
        raise DomainError("difference coarray requires an integer-grid geometry")
    ints = geometry.integer_positions
    sel: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for i, di in enumerate(ints):
        for j, dj in enumerate(ints):
            sel[di - dj].append((i, j))
    lags = np.array(sorted(sel), dtype=int)
    mult = np.array([len(sel[u]) for u in lags], dtype=int)
    present = set(sel)
    ell = 0
    while (ell + 1) in present and -(ell + 1) in present:
        ell += 1
    return CoarrayStructure(lags, mult, ell, {int(k): v for k, v in sorted(sel.items())})


def kruskal_rank_check(geometry, K: int, trials: int = 100, seed=None,
                       tol: float = 1e-8) -> bool:
    """Randomized necessary check that every M angles give independent columns.

    Draws ``trials`` sets of ``M`` distinct angles from a ``K``-point grid over
    the field of view and tests the smallest singular value of the column-
    normalized M x M steering matrix against ``tol``.  ``geometry`` may be a
    raw position array, so degenerate layouts can be probed directly.
    """
    pos = _positions(geometry)
    M = pos.size
    if K < M:
        raise DomainError("K must be at least the number of sensors")
    if M == 1:
        return True
    grid = np.linspace(FOV[0], FOV[1], K + 2)[1:-1]
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        th = np.sort(rng.choice(grid, size=M, replace=False))
        A = steering_block(pos, th)
        A = A / np.linalg.norm(A, axis=0)
        if np.linalg.svd(A, compute_uv=False)[-1] <= tol:
            return False
    return True
