"""Name-based access to every estimator, all driven from a snapshot matrix.

``estimate(method, X, geometry, N, **options)`` is what the CLI and the Monte
Carlo harness call; each entry unpacks the options it understands and ignores
the rest.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import coarray, partcal, sequential, sparse, spectra
from .geometry import DomainError
from .spectra import DEFAULT_STEP, EstimateResult, make_grid
from .subspace import eigendecompose, sample_covariance, wsf_weights


def _grid(opts):
    if opts.get("grid") is not None:
        return np.asarray(opts["grid"], dtype=float)
    return make_grid(float(opts.get("grid_step", DEFAULT_STEP)))


def _refine(opts):
    return opts.get("refine", "local")


def _scatter(X):
    Y = X @ X.conj().T
    return 0.5 * (Y + Y.conj().T)


def _beamformer(X, g, N, **o):
    Y = _scatter(X)
    return spectra.spectral_estimate(lambda t: spectra.spectrum_beamformer(Y, g, t), N,
                                     _grid(o), "beamformer", _refine(o))


def _music(X, g, N, **o):
    d = eigendecompose(sample_covariance(X), N)
    W = np.eye(N)
    return spectra.spectral_estimate(lambda t: spectra.spectrum_music(d, W, g, t), N,
                                     _grid(o), "music", _refine(o))


def _capon(X, g, N, **o):
    R = sample_covariance(X)
    return spectra.spectral_estimate(lambda t: spectra.spectrum_capon_fit(R, g, t)[0], N,
                                     _grid(o), "capon", _refine(o))


def _pr_dml(X, g, N, **o):
    Y = _scatter(X)
    return spectra.spectral_estimate(lambda t: spectra.spectrum_pr_dml(Y, g, N, t), N,
                                     _grid(o), "pr-dml", _refine(o))


def _pr_wsf(X, g, N, **o):
    d = eigendecompose(sample_covariance(X), N)
    W = wsf_weights(d, o.get("weights", "optimal"))
    return spectra.spectral_estimate(lambda t: spectra.spectrum_pr_wsf(d, W, g, N, t), N,
                                     _grid(o), "pr-wsf", _refine(o))


def _pr_ccf(X, g, N, **o):
    R = sample_covariance(X)
    return spectra.spectral_estimate(lambda t: spectra.spectrum_pr_ccf(R, g, N, t), N,
                                     _grid(o), "pr-ccf", _refine(o))


def _sequential(name):
    def run(X, g, N, **o):
        return sequential.run_sequential(name, X, g, N, _grid(o), _refine(o))
    return run


def _sparrow(X, g, N, **o):
    return sparse.sparrow_estimate(X, g, N, mu=o.get("mu"), grid=_grid(o),
                                   c=float(o.get("c", 1.0)), tol=float(o.get("tol", 1e-8)),
                                   max_iter=int(o.get("max_iter", 2000)))


def _mmp(X, g, N, **o):
    return sparse.mmp_estimate(X, g, N, mu=o.get("mu"), grid=_grid(o),
                               c=float(o.get("c", 1.0)), tol=float(o.get("tol", 1e-8)),
                               max_iter=int(o.get("max_iter", 5000)))


def _shift_structure(g, o):
    if o.get("shift_structure") is not None:
        return o["shift_structure"]
    if o.get("subarrays"):
        return partcal.shifts_from_subarrays(g, o["subarrays"], o.get("shifts"))
    if g.kind == "ula":
        return partcal.ula_shift(g.M, int(o.get("delta", 1)))
    raise DomainError("ESPRIT/RARE need a subarray layout for non-ULA geometries")


def _esprit(X, g, N, **o):
    d = eigendecompose(sample_covariance(X), N)
    return partcal.esprit(d, _shift_structure(g, o), o.get("variant", "ls"))


def _rare(X, g, N, **o):
    d = eigendecompose(sample_covariance(X), N)
    return partcal.rare_estimate(d, _shift_structure(g, o), _grid(o),
                                 o.get("variant", "eig"), _refine(o))


def _coarray_music(X, g, N, **o):
    return coarray.coarray_music(sample_covariance(X), g, N, _grid(o), o.get("L"),
                                 _refine(o))


def _dml_exact(X, g, N, **o):
    return spectra.exact_multisource_grid("dml", _scatter(X), g, N, _grid(o))


REGISTRY: dict[str, Callable[..., EstimateResult]] = {
    "beamformer": _beamformer,
    "music": _music,
    "capon": _capon,
    "pr-dml": _pr_dml,
    "pr-wsf": _pr_wsf,
    "pr-ccf": _pr_ccf,
    "mp": _sequential("mp"),
    "omp": _sequential("omp"),
    "ols": _sequential("ols"),
    "pr-dml-ols": _sequential("pr-dml-ols"),
    "sparrow": _sparrow,
    "mmp": _mmp,
    "esprit": _esprit,
    "rare": _rare,
    "coarray-music": _coarray_music,
    "dml-exact": _dml_exact,
}


def available() -> list[str]:
    return sorted(REGISTRY)


def estimate(method: str, X, geometry, N: int, **options) -> EstimateResult:
    """Run estimator ``method`` on the M x T snapshot matrix ``X``."""
    key = method.lower()
    if key not in REGISTRY:
        raise DomainError(f"unknown method {method!r}; choose from {', '.join(available())}")
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != geometry.M:
        raise DomainError("snapshots must be an M x T matrix matching the geometry")
    return REGISTRY[key](X, geometry, N, **options)
