"""Command line interface: ``doalab <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, coarray, estimators, spectra
from .geometry import DomainError, parse_geometry
from .sigmodel import simulate, simulate_partly_calibrated
from .subspace import eigendecompose, sample_covariance, wsf_weights

SPECTRUM_METHODS = ("beamformer", "music", "capon", "pr-dml", "pr-wsf", "pr-ccf")


def _writer(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write_rows(path, header, rows):
    fh, close = _writer(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([bench._fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    finally:
        if close:
            fh.close()


def _load_inputs(args):
    """Snapshots, geometry, source count and scenario dict from the arguments."""
    scen_dict = bench.load_structured(args.scenario) if args.scenario else None
    if args.snapshots_file:
        X = np.load(args.snapshots_file)
        if scen_dict is not None:
            geometry = bench.geometry_from_spec(scen_dict["geometry"])
        elif args.geometry:
            geometry = parse_geometry(args.geometry)
        else:
            raise DomainError("--snapshots-file needs --geometry or --scenario")
        N = args.n_sources or (len(scen_dict["thetas"]) if scen_dict else None)
        if N is None:
            raise DomainError("--snapshots-file needs --n-sources")
        return X, geometry, int(N), scen_dict
    if scen_dict is None:
        raise DomainError("give --scenario or --snapshots-file")
    sc = bench.scenario_from_dict(scen_dict)
    if sc.subarrays:
        X, _ = simulate_partly_calibrated(sc, sc.subarrays)
    else:
        X = simulate(sc).entries
    return X, sc.geometry, int(args.n_sources or sc.N), scen_dict


def cmd_simulate(args):
    sc = bench.scenario_from_dict(bench.load_structured(args.scenario))
    if sc.subarrays:
        X, offsets = simulate_partly_calibrated(sc, sc.subarrays)
    else:
        X, offsets = simulate(sc).entries, None
    np.save(args.out, X)
    info = {"shape": list(X.shape), "scenario_hash": sc.digest(), "out": str(args.out)}
    if offsets is not None:
        info["phase_offsets"] = [float(v) for v in offsets]
    print(json.dumps(info))


def cmd_spectrum(args):
    X, g, N, _ = _load_inputs(args)
    grid = spectra.make_grid(args.grid_step)
    R = sample_covariance(X)
    Y = X @ X.conj().T
    m = args.method
    if m == "beamformer":
        vals = spectra.spectrum_beamformer(Y, g, grid)
    elif m == "music":
        vals = spectra.spectrum_music(eigendecompose(R, N), np.eye(N), g, grid)
    elif m == "capon":
        vals = spectra.spectrum_capon_fit(R, g, grid)[0]
    elif m == "pr-dml":
        vals = spectra.spectrum_pr_dml(Y, g, N, grid)
    elif m == "pr-wsf":
        d = eigendecompose(R, N)
        vals = spectra.spectrum_pr_wsf(d, wsf_weights(d), g, N, grid)
    else:
        vals = spectra.spectrum_pr_ccf(R, g, N, grid)
    _write_rows(args.out, ["angle", "value"], zip(grid, vals))


def cmd_surface(args):
    scen = bench.load_structured(args.scenario) if args.scenario else None
    surf = bench.run_surface(args.seed, args.grid_step, scen, args.out, args.name)
    print(json.dumps({"argmin": list(surf.argmin), "min_value": surf.min_value,
                      "n_local_minima": surf.n_local_minima, "out": args.out}))


def cmd_estimate(args):
    X, g, N, scen = _load_inputs(args)
    opts = {"grid_step": args.grid_step}
    if args.mu is not None:
        opts["mu"] = args.mu
    if args.c is not None:
        opts["c"] = args.c
    if args.refine:
        opts["refine"] = args.refine
    if args.variant:
        opts["variant"] = args.variant
    if scen and scen.get("subarrays"):
        opts["subarrays"] = scen["subarrays"]
        if scen.get("shifts") is not None:
            opts["shifts"] = scen["shifts"]
    res = estimators.estimate(args.method, X, g, N, **opts)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "estimates.csv" if out else None, ["index", "theta_deg"],
                enumerate(res.thetas_hat))
    diag = res.diagnostics
    if "objective" in diag and isinstance(diag["objective"], list):
        rows = [(k + 1, t, v) for k, (t, v) in
                enumerate(zip(diag["selection_order"], diag["objective"]))]
        _write_rows(out / "iterations.csv" if out else None,
                    ["iteration", "theta_deg", "objective"], rows)
    for key in ("d", "row_norms"):
        if key in diag and res.spectrum is not None:
            _write_rows(out / "pseudospectrum.csv" if out else None,
                        ["angle", key], zip(res.spectrum.grid, diag[key]))
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)


def cmd_coarray(args):
    g = parse_geometry(args.geometry)
    report = coarray.identifiability_budget(g)
    report["geometry"] = g.to_dict()
    if args.report:
        print(json.dumps(report, indent=2))
    else:
        print(f"{args.geometry}: {report['unique_lags']} unique lags, contiguous "
              f"-{report['contiguous_half_length']}..{report['contiguous_half_length']}, "
              f"coarray MUSIC up to N={report['max_sources_coarray_music']}, "
              f"counting bound N<={report['counting_bound']}")


def cmd_bench(args):
    if args.config:
        cfg = bench.load_config(args.config)
        if args.trials:
            cfg.trials = args.trials
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.out_dir = args.out
    elif args.preset == "fig3":
        out = args.out or "bench_out"
        surf = bench.run_surface(args.seed or 0, 0.25, None, out, "fig3")
        stats = bench.surface_statistics(args.trials or 20, args.seed or 0)
        summary = {"argmin": list(surf.argmin), "n_local_minima": surf.n_local_minima,
                   "seeds": stats.seeds, "global_min_within_1deg": stats.within_1deg,
                   "at_least_40_minima": stats.enough_minima,
                   "minima_counts": stats.minima_counts}
        Path(out, "fig3_summary.json").write_text(json.dumps(summary, indent=2))
        print(json.dumps(summary))
        return
    elif args.preset:
        values = [int(v) for v in args.values.split(",")] if args.values else None
        cfg = bench.preset_config(args.preset, args.trials or 500, args.seed or 0,
                                  args.out or "bench_out", values)
    else:
        raise DomainError("give --preset or --config")
    if args.workers:
        cfg.workers = args.workers

    def progress(i, v):
        print(f"[{cfg.name}] {cfg.sweep}={v} done ({i + 1}/{len(cfg.values)})",
              file=sys.stderr)

    table = bench.run_experiment(cfg, progress)
    sys.stdout.write(table.to_csv())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doalab", description="Direction-of-arrival "
                                "estimation library and benchmark harness.")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--scenario", help="scenario file (JSON or YAML)")
        sp.add_argument("--snapshots-file", "--snapshots", dest="snapshots_file",
                        help="raw M x T snapshot matrix (.npy)")
        sp.add_argument("--geometry", help="geometry, e.g. ula:10, nested:3,3")
        sp.add_argument("--n-sources", type=int, help="number of sources N")
        sp.add_argument("--grid-step", type=float, default=spectra.DEFAULT_STEP,
                        help="search grid step in degrees")

    sp = sub.add_parser("simulate", help="draw snapshots for a scenario")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", required=True, help="output .npy file")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("spectrum", help="write a null spectrum as CSV")
    data_args(sp)
    sp.add_argument("--method", choices=SPECTRUM_METHODS, default="music")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("surface", help="two-source DML cost surface (CSV + SVG)")
    sp.add_argument("--scenario", help="scenario file (default: the fig3 setting)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid-step", type=float, default=0.25)
    sp.add_argument("--name", default="surface")
    sp.add_argument("--out", default="surface_out")
    sp.set_defaults(func=cmd_surface)

    sp = sub.add_parser("estimate", help="estimate DoAs with one method")
    data_args(sp)
    sp.add_argument("--method", required=True, choices=estimators.available())
    sp.add_argument("--mu", type=float, help="sparse regularization parameter")
    sp.add_argument("--c", type=float, help="scale of the default mu")
    sp.add_argument("--refine", choices=("local", "parabolic", "none"))
    sp.add_argument("--variant", help="ls|tls for esprit, eig|det for rare")
    sp.add_argument("--out", help="output directory for CSV files (default stdout)")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("coarray", help="difference coarray identifiability report")
    sp.add_argument("--geometry", required=True)
    sp.add_argument("--report", action="store_true", help="full JSON report")
    sp.set_defaults(func=cmd_coarray)

    sp = sub.add_parser("bench", help="Monte Carlo benchmarks and figure presets")
    sp.add_argument("--preset", choices=("fig4", "fig3", "fig6"))
    sp.add_argument("--config", help="experiment config file (JSON or YAML)")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--values", help="comma-separated sweep values overriding the preset")
    sp.add_argument("--workers", type=int,
                    help=f"worker processes (default ${bench.WORKERS_ENV} or 1)")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (DomainError, FileNotFoundError, KeyError) as exc:
        print(f"doalab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
