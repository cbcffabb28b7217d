"""Cramer-Rao bound, RMSE with assignment matching, and the Monte Carlo harness.

Experiments are described by :class:`ExperimentConfig` (loadable from JSON or
YAML), run by :func:`run_experiment` and summarized in a :class:`ResultTable`
that writes a CSV and, optionally, a log-log SVG plot.  Per-trial random
generators are derived from ``(seed, sweep index, trial index)`` only, so every
method sees the same snapshots and the outcome does not depend on worker
scheduling.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .estimators import estimate
from .geometry import ArrayGeometry, DomainError, parse_geometry, steering_derivative, \
    steering_matrix
from .sigmodel import Scenario, simulate, simulate_partly_calibrated

WORKERS_ENV = "DOALAB_WORKERS"

# exhaustive permutation matching up to this many sources, Hungarian beyond
PERMUTATION_LIMIT = 6


# --- CRB -------------------------------------------------------------------

def crb_unconditional(geometry, thetas, P, nu: float, T: int) -> np.ndarray:
    """Per-source standard deviations (degrees) from the unconditional CRB.

    ``CRB^{-1} = (2T/nu) Re{(D^H P_A^perp D) * (P A^H R^{-1} A P)^T}`` with
    ``D`` the steering derivatives in radians and ``*`` the elementwise
    product.
    """
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    A = steering_matrix(geometry, th)
    M, N = A.shape
    if N >= M:
        raise DomainError("the CRB needs fewer sources than sensors")
    if nu <= 0 or T < 1:
        raise DomainError("need nu > 0 and T >= 1")
    P = np.asarray(P, dtype=complex)
    if P.ndim == 0 or P.ndim == 1:
        P = np.diag(np.broadcast_to(P, (N,))).astype(complex)
    if np.linalg.eigvalsh(0.5 * (P + P.conj().T))[0] < -1e-12:
        raise DomainError("source covariance must be positive semidefinite")
    D = steering_derivative(geometry, th)
    R = A @ P @ A.conj().T + nu * np.eye(M)
    Pp = np.eye(M) - A @ np.linalg.solve(A.conj().T @ A, A.conj().T)
    H = D.conj().T @ Pp @ D
    G = P @ A.conj().T @ np.linalg.solve(R, A) @ P
    F = (2.0 * T / nu) * np.real(H * G.T)
    sv = np.linalg.svd(F, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise DomainError("Fisher information is singular: the configuration is "
                          "not identifiable (coincident angles or rank-deficient sources)")
    crb = np.linalg.inv(F)
    return np.rad2deg(np.sqrt(np.diag(crb)))


def crb_aggregate(std_deg, kind: str = "mean") -> float:
    """Collapse per-source CRB deviations: ``"mean"`` of the deviations or
    ``"rms"``, the bound comparable to a pooled RMSE."""
    s = np.asarray(std_deg, dtype=float)
    if kind == "mean":
        return float(np.mean(s))
    if kind == "rms":
        return float(np.sqrt(np.mean(s**2)))
    raise DomainError(f"unknown aggregate {kind!r}")


# --- RMSE ------------------------------------------------------------------

def matched_errors(estimate_, truth) -> np.ndarray | None:
    """Errors of ``estimate_`` against ``truth`` under the assignment with
    minimum total squared error; ``None`` if the counts differ or an estimate
    is not finite."""
    est = np.asarray(estimate_, dtype=float).ravel()
    tru = np.asarray(truth, dtype=float).ravel()
    if est.size != tru.size or not np.all(np.isfinite(est)):
        return None
    if tru.size <= PERMUTATION_LIMIT:
        best, best_err = np.inf, None
        for perm in itertools.permutations(range(est.size)):
            err = est[list(perm)] - tru
            val = float(np.sum(err**2))
            if val < best:
                best, best_err = val, err
        return best_err
    cost = (est[:, None] - tru[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    err = np.empty(tru.size)
    err[cols] = est[rows] - tru[cols]
    return err


def rmse(estimates, truth, return_failures: bool = False):
    """Root mean squared error in degrees over trials and sources.

    Trials whose estimate count differs from the truth (or contains non-finite
    values) are failures: excluded from the RMSE and counted separately.
    """
    sq, failures = [], 0
    for est in estimates:
        err = matched_errors(est, truth)
        if err is None:
            failures += 1
        else:
            sq.append(err**2)
    value = float(np.sqrt(np.mean(np.concatenate(sq)))) if sq else float("nan")
    return (value, failures) if return_failures else value


def resolved(estimate_, truth, tol: float) -> bool:
    err = matched_errors(estimate_, truth)
    return err is not None and bool(np.all(np.abs(err) < tol))


# --- configuration ---------------------------------------------------------

SWEEPS = ("snapshots", "snr_db")


@dataclass
class ExperimentConfig:
    """Monte Carlo sweep description.

    ``scenario`` holds the scenario template: ``geometry`` (``"ula:10"`` or a
    geometry record), ``thetas``, ``snr_db``, ``noise_var``, ``snapshots``,
    ``model``, ``correlation`` and optionally ``subarrays``.  ``methods`` is a
    list of names or ``{"name": ..., "options": {...}}`` records.
    """

    scenario: dict
    sweep: str
    values: list
    methods: list
    trials: int = 500
    seed: int = 0
    name: str = "experiment"
    out_dir: str | None = None
    plot: bool = True
    crb: bool = False
    crb_aggregate: str = "mean"
    resolution_tol: float | None = None
    record_timing: bool = True
    workers: int | None = None

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise DomainError(f"sweep must be one of {SWEEPS}")
        if not self.values:
            raise DomainError("sweep values must be nonempty")
        if self.trials < 1:
            raise DomainError("trials must be >= 1")
        if not self.methods:
            raise DomainError("need at least one method")
        self.methods = _method_records(self.methods)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise DomainError(f"unknown experiment keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def method_names(self) -> list[str]:
        return [m.get("label", m["name"]) for m in _method_records(self.methods)]


def _method_records(methods) -> list[dict]:
    """Method names or records as ``{"name", "options"[, "label"]}`` dicts."""
    out = []
    for m in methods:
        rec = dict(m) if isinstance(m, dict) else {"name": m}
        rec["options"] = dict(rec.get("options") or {})
        out.append(rec)
    return out


def load_structured(path) -> dict:
    """Read a JSON or YAML file into a dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml
        return yaml.safe_load(text)
    return json.loads(text)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(load_structured(path))


def geometry_from_spec(spec) -> ArrayGeometry:
    if isinstance(spec, ArrayGeometry):
        return spec
    if isinstance(spec, str):
        return parse_geometry(spec)
    return ArrayGeometry.from_dict(spec)


def scenario_from_dict(data: dict) -> Scenario:
    """Build a :class:`Scenario` from a structured-text record.

    A partly calibrated layout is given by ``subarrays`` (lists of sensor
    indices) and optionally ``shifts`` (the known lags); the shifts are passed
    to the estimators by the harness, not stored on the scenario.
    """
    d = dict(data)
    geometry = geometry_from_spec(d.pop("geometry"))
    corr = d.pop("correlation", "uncorrelated")
    if not isinstance(corr, str):
        corr = np.asarray(corr, dtype=complex)
    kwargs = dict(geometry=geometry, thetas=tuple(d.pop("thetas")),
                  snapshots=int(d.pop("snapshots", 100)),
                  snr_db=float(d.pop("snr_db", 0.0)),
                  noise_var=float(d.pop("noise_var", 1.0)),
                  model=d.pop("model", "unconditional"), correlation=corr,
                  seed=int(d.pop("seed", 0)), subarrays=d.pop("subarrays", None))
    d.pop("shifts", None)
    if d:
        raise DomainError(f"unknown scenario keys: {sorted(d)}")
    return Scenario(**kwargs)


# --- results ---------------------------------------------------------------

CSV_COLUMNS = ("method", "sweep", "rmse_deg", "trials", "failures", "seconds", "resolution")


@dataclass
class ResultRow:
    method: str
    sweep: float
    rmse_deg: float
    trials: int
    failures: int
    seconds: float
    resolution: float | None = None


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    sweep_name: str = "snapshots"
    name: str = "experiment"

    def get(self, method: str, value) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.sweep == value:
                return r
        raise KeyError((method, value))

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.method, _fmt(r.sweep), _fmt(r.rmse_deg), r.trials, r.failures,
                        _fmt(r.seconds), "" if r.resolution is None else _fmt(r.resolution)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def plot(self, path, title: str | None = None):
        """Log-log RMSE plot (semilog-y for an SNR sweep) as a vector file."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        for m in self.methods():
            rows = [r for r in self.rows if r.method == m and np.isfinite(r.rmse_deg)]
            if not rows:
                continue
            x = [r.sweep for r in rows]
            y = [r.rmse_deg for r in rows]
            style = "k-" if m == "CRB" else "o-"
            ax.plot(x, y, style, label=m, markersize=3, linewidth=1)
        if self.sweep_name == "snapshots":
            ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("Number of snapshots T" if self.sweep_name == "snapshots" else "SNR (dB)")
        ax.set_ylabel("RMSE (deg)")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.10g}"


# --- runner ----------------------------------------------------------------

def _worker_count(config: ExperimentConfig) -> int:
    if config.workers is not None:
        return max(1, int(config.workers))
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def _trial_rng(seed: int, sweep_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(sweep_index), int(trial)])


def _run_trial(job):
    """One trial: simulate once, run every method.  Returns per-method
    ``(estimate or None, seconds)``."""
    scenario, methods, seed, vi, trial, shifts = job
    rng = _trial_rng(seed, vi, trial)
    opts_common = {}
    if scenario.subarrays:
        # partly calibrated: fresh unknown subarray phases every trial
        X, _ = simulate_partly_calibrated(scenario, scenario.subarrays, rng)
        opts_common["subarrays"] = scenario.subarrays
        if shifts is not None:
            opts_common["shifts"] = shifts
    else:
        X = simulate(scenario, rng=rng).entries
    out = []
    for m in methods:
        opts = dict(opts_common, **m["options"])
        t0 = time.perf_counter()
        try:
            est = estimate(m["name"], X, scenario.geometry, scenario.N, **opts).thetas_hat
        except Exception:  # a failed trial is recorded, never fatal to the sweep
            est = None
        out.append((est, time.perf_counter() - t0))
    return trial, out


def run_experiment(config: ExperimentConfig, progress=None) -> ResultTable:
    """Run a sweep and return its table; write CSV/SVG when ``out_dir`` is set."""
    base = scenario_from_dict(config.scenario)
    truth = np.asarray(base.thetas)
    methods = _method_records(config.methods)
    names = config.method_names()
    table = ResultTable(sweep_name=config.sweep, name=config.name)
    workers = _worker_count(config)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for vi, value in enumerate(config.values):
            change = {config.sweep: int(value) if config.sweep == "snapshots" else float(value)}
            scenario = base.with_(**change)
            jobs = [(scenario, methods, config.seed, vi, t,
                     config.scenario.get("shifts")) for t in range(config.trials)]
            results = list(pool.map(_run_trial, jobs, chunksize=8)) if pool \
                else [_run_trial(j) for j in jobs]
            results.sort(key=lambda r: r[0])
            for mi, name in enumerate(names):
                ests = [r[1][mi][0] for r in results]
                secs = float(sum(r[1][mi][1] for r in results))
                value_rmse, failures = rmse([e if e is not None else [] for e in ests],
                                            truth, return_failures=True)
                res = None
                if config.resolution_tol is not None:
                    res = float(np.mean([e is not None and resolved(e, truth,
                                                                     config.resolution_tol)
                                         for e in ests]))
                table.rows.append(ResultRow(name, value, value_rmse, config.trials, failures,
                                            secs if config.record_timing else 0.0, res))
            if config.crb:
                std = crb_unconditional(scenario.geometry, scenario.thetas,
                                        scenario.source_cov, scenario.noise_var,
                                        scenario.snapshots)
                table.rows.append(ResultRow("CRB", value,
                                            crb_aggregate(std, config.crb_aggregate), 0, 0, 0.0))
            if progress is not None:
                progress(vi, value)
    finally:
        if pool is not None:
            pool.shutdown()
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / f"{config.name}.csv")
        if config.plot:
            table.plot(out / f"{config.name}.svg", config.name)
    return table


# --- presets ---------------------------------------------------------------

FIG4_SNAPSHOTS = [10, 14, 21, 30, 43, 62, 89, 127, 183, 264, 379, 546, 785, 1129, 1624,
                  2336, 3360, 4833, 6952, 10000]

FIG4_SCENARIO = {"geometry": "ula:10", "thetas": [90.0, 93.0, 135.0, 140.0],
                 "snr_db": 3.0, "noise_var": 1.0, "model": "unconditional",
                 "correlation": "uncorrelated"}

FIG6_SCENARIO = {"geometry": "ula:6", "thetas": [90.0, 120.0], "snr_db": 10.0,
                 "noise_var": 1.0, "model": "unconditional", "correlation": "coherent"}

FIG3_SCENARIO = {"geometry": "ula:10", "thetas": [105.0, 120.0], "snr_db": 0.0,
                 "noise_var": 1.0, "snapshots": 100, "model": "unconditional",
                 "correlation": "uncorrelated"}

# a source counts as resolved when its matched error is below this (degrees)
FIG6_RESOLUTION_TOL = 1.0


def preset_config(name: str, trials: int = 500, seed: int = 0, out_dir=None,
                  values=None) -> ExperimentConfig:
    """Experiment config for the ``fig4`` and ``fig6`` presets."""
    if name == "fig4":
        return ExperimentConfig(
            scenario=dict(FIG4_SCENARIO), sweep="snapshots",
            values=list(values or FIG4_SNAPSHOTS),
            methods=["music", "pr-dml", "pr-dml-ols", "ols", "omp", "mp"],
            trials=trials, seed=seed, name="fig4", out_dir=out_dir, crb=True)
    if name == "fig6":
        return ExperimentConfig(
            scenario=dict(FIG6_SCENARIO), sweep="snapshots",
            values=list(values or [10, 30, 100, 300, 1000]),
            methods=["sparrow", "mmp", "music"], trials=trials, seed=seed, name="fig6",
            out_dir=out_dir, resolution_tol=FIG6_RESOLUTION_TOL)
    raise DomainError(f"unknown preset {name!r}")


@dataclass
class SurfaceSummary:
    seeds: int
    within_1deg: float
    enough_minima: float
    minima_counts: list
    argmins: list


def run_surface(seed: int = 0, grid_step: float = 0.25, scenario: dict | None = None,
                out_dir=None, name: str = "fig3"):
    """Two-source DML cost surface for one noise realization; writes the
    surface CSV (``theta1, theta2, value``), the minima CSV and an SVG heatmap
    when ``out_dir`` is given."""
    from .spectra import dml_cost_surface, make_grid
    sc = scenario_from_dict(scenario or FIG3_SCENARIO)
    X = simulate(sc, rng=_trial_rng(seed, 0, 0)).entries
    grid = make_grid(grid_step)
    surf = dml_cost_surface(X @ X.conj().T, sc.geometry, grid)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_surface(surf, out / f"{name}_surface.csv", out / f"{name}_minima.csv")
        plot_surface(surf, out / f"{name}.svg", truth=sc.thetas)
    return surf


def surface_statistics(seeds: int = 20, base_seed: int = 0, grid_step: float = 0.25,
                       scenario: dict | None = None, min_count: int = 40) -> SurfaceSummary:
    sc = scenario_from_dict(scenario or FIG3_SCENARIO)
    truth = np.asarray(sc.thetas)
    near, enough, counts, argmins = [], [], [], []
    for s in range(seeds):
        surf = run_surface(base_seed + s, grid_step, scenario)
        near.append(bool(np.all(np.abs(np.asarray(surf.argmin) - truth) <= 1.0)))
        enough.append(surf.n_local_minima >= min_count)
        counts.append(surf.n_local_minima)
        argmins.append(surf.argmin)
    return SurfaceSummary(seeds, float(np.mean(near)), float(np.mean(enough)), counts, argmins)


def write_surface(surf, surface_path, minima_path=None):
    g = surf.grid
    with open(surface_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta1", "theta2", "value"])
        for i in range(g.size):
            for j in range(g.size):
                w.writerow([_fmt(g[i]), _fmt(g[j]), _fmt(surf.values[i, j])])
    if minima_path is not None:
        with open(minima_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta1", "theta2", "value"])
            for t1, t2, v in surf.minima:
                w.writerow([_fmt(t1), _fmt(t2), _fmt(v)])


def plot_surface(surf, path, truth=None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.6, 4.8))
    g = surf.grid
    im = ax.imshow(surf.values, origin="lower", extent=(g[0], g[-1], g[0], g[-1]),
                   cmap="viridis", aspect="equal")
    fig.colorbar(im, ax=ax, label="DML cost")
    if surf.minima:
        pts = [(t2, t1) for t1, t2, _ in surf.minima]
        m = np.array(pts + [(b, a) for a, b in pts])
        ax.plot(m[:, 0], m[:, 1], "w.", markersize=2)
    if truth is not None:
        ax.plot([truth[1]], [truth[0]], "r+", markersize=8)
    ax.set_xlabel("theta2 (deg)")
    ax.set_ylabel("theta1 (deg)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def fig4_crb_curve(snapshots=FIG4_SNAPSHOTS, aggregate: str = "mean") -> list[float]:
    sc = scenario_from_dict(dict(FIG4_SCENARIO, snapshots=10))
    return [crb_aggregate(crb_unconditional(sc.geometry, sc.thetas, sc.source_cov,
                                            sc.noise_var, int(T)), aggregate)
            for T in snapshots]


def crb_ratio_check() -> float:
    """``CRB(4T) / CRB(T)`` on the fig4 preset scenario; 0.5 by the 1/sqrt(T) law."""
    a, b = fig4_crb_curve([100, 400])
    return b / a
