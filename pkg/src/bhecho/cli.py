"""Batch front-end: ``bhecho <job> --config run.json --out results/``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import THERMODYNAMIC_JC, critical_scan, fit_decay, perturbative_prediction
from .config import JOB_KINDS, ConfigError, load
from .echo import SequenceSpec, auto_time_grid, echo_curve, make_scenario, sequence_echo
from .operators import get_basis, operator_set
from .propagator import PropagatorConfig
from .spectra import full_spectrum, ground_state, low_spectrum, spacing_ratio
from .states import fock_state, mott_state

logger = logging.getLogger("bhecho")

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3


class ComputeError(RuntimeError):
    pass


def _propagator_cfg(config):
    tol = config.get("tolerances", {})
    kw = {k: tol[k] for k in ("krylov_dim", "step_tolerance", "max_substeps") if k in tol}
    return PropagatorConfig(**kw)


def _eig_tol(config):
    return config.get("tolerances", {}).get("eig_tol", 1e-10)


def _initial_state(config, basis, J, U):
    init = config.get("initial", "mott")
    if init == "mott":
        return mott_state(basis)
    if init == "ground":
        H = operator_set(basis).hamiltonian(J=J, U=U)
        return ground_state(H, tol=_eig_tol(config), seed=config.get("seed", 0)).state
    return fock_state(basis, init["fock"])


def _explicit_grid(spec):
    if "times" in spec:
        t = np.asarray(spec["times"], dtype=float)
    elif "log" in spec:
        lo, hi = spec["log"]
        t = np.concatenate([[0.0], np.geomspace(lo, hi, spec.get("n_points", 50))])
    elif "t_max" in spec:
        t = np.linspace(0.0, spec["t_max"], spec.get("n_points", 200))
    else:
        return None
    if np.any(np.diff(t) < 0):
        raise ConfigError("time grid must be ascending")
    return t


def _rows(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else ("" if math.isnan(v) else f"{v:.17g}") for v in row))
    return "\n".join(lines) + "\n"


def _header(meta):
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


# ---------------------------------------------------------------------------
# jobs: each returns ({filename: (metadata, body)}, manifest_extra)


def job_echo_curve(config, threads):
    lat = config["lattice"]
    basis = get_basis(lat["n_sites"], lat["n_bosons"])
    J, U = config["J"], config["U"]
    cfg = _propagator_cfg(config)
    psi = _initial_state(config, basis, J, U)
    grid_spec = config["time_grid"]
    explicit = _explicit_grid(grid_spec)
    files, points, long_rows = {}, [], []
    for sc_cfg in config["scenarios"]:
        label = sc_cfg.get("label", sc_cfg["kind"])
        sc = make_scenario(sc_cfg["kind"], basis, J=J, U=U, magnitude=sc_cfg.get("magnitude", 0.0))
        if explicit is None:
            grid, _ = auto_time_grid(psi, sc, n_points=grid_spec.get("n_points", 200),
                                     target=grid_spec.get("target", 0.1), t_cap=grid_spec.get("t_cap", 1000.0),
                                     cfg=cfg)
        else:
            grid = explicit
        curve = echo_curve(psi, sc, grid, cfg)
        entry = {"label": label, "status": "ok", **sc.describe(), "warnings": curve.warnings}
        if "fit" in config:
            fc = config["fit"]
            try:
                fit = fit_decay(curve, fc.get("model", "gaussian"), fc.get("window", "shoulder"), fc.get("f_floor"))
                entry["fit"] = {"model": fit.model, "parameter": fit.parameter, "window": list(fit.window),
                                "rms_residual": fit.rms_residual, "n_points": fit.n_points}
            except ValueError as exc:
                entry["fit"] = {"error": str(exc)}
        points.append(entry)
        meta = {"protocol": "echo", **sc.describe(), "n_sites": lat["n_sites"], "n_bosons": lat["n_bosons"],
                "initial": json.dumps(config.get("initial", "mott"))}
        files[f"echo_{label}.csv"] = (meta, _rows(["t", "f"], zip(curve.times, curve.fidelities)))
        long_rows += [(label, t, f) for t, f in zip(curve.times, curve.fidelities)]
    files["echo_combined.csv"] = ({"layout": "long"}, _rows(["scenario", "t", "f"], long_rows))
    return files, {"points": points}


def job_sequence(config, threads):
    lat = config["lattice"]
    basis = get_basis(lat["n_sites"], lat["n_bosons"])
    seq = SequenceSpec(**config["sequence"])
    cfg = _propagator_cfg(config)
    psi = _initial_state(config, basis, seq.J, seq.U)
    grid = _explicit_grid(config["time_grid"])
    if grid is None:
        # sequence grids are chosen from the matching delta_u echo
        sc = make_scenario("delta_u", basis, J=seq.J, U=seq.U, magnitude=seq.delta_u)
        spec = config["time_grid"]
        grid, _ = auto_time_grid(psi, sc, n_points=spec.get("n_points", 200), target=spec.get("target", 0.1),
                                 t_cap=spec.get("t_cap", 100.0), cfg=cfg)
    curve = sequence_echo(psi, seq, basis, grid, cfg)
    meta = {k: v for k, v in curve.protocol.items()}
    meta.update(n_sites=lat["n_sites"], n_bosons=lat["n_bosons"])
    files = {"sequence.csv": (meta, _rows(["t", "f"], zip(curve.times, curve.fidelities)))}
    return files, {"points": [{"label": "sequence", "status": "ok", "warnings": curve.warnings}]}


def job_scan_critical(config, threads):
    g = config["J_grid"]
    n = int(round((g["stop"] - g["start"]) / g["step"])) + 1
    J_grid = np.round(g["start"] + g["step"] * np.arange(n), 12)
    files, points = {}, []
    for N in config["sizes"]:
        scan = critical_scan(
            N, J_grid, delta_j=config["delta_j"], U=config.get("U", 1.0), t_max=config.get("t_max", 0.05),
            n_times=config.get("n_times", 41), f_floor=config.get("f_floor", 0.8),
            compute_gap=config.get("gap", True), n_jobs=threads, cfg=_propagator_cfg(config),
            eig_tol=_eig_tol(config),
        )
        files[f"scan_N{N}.csv"] = ({}, scan.to_csv())
        for J, status in zip(scan.J_grid, scan.status):
            points.append({"n_sites": N, "J": float(J), "status": status})
        print(f"N={N}: peak |dalpha/dJ| = {scan.peak_height:.6f} at J = {scan.peak_location:.4f} U "
              f"(thermodynamic reference J_c = {THERMODYNAMIC_JC} U)")
    if all(p["status"] != "ok" for p in points):
        raise ComputeError("every scan point failed")
    return files, {"points": points, "reference_jc": THERMODYNAMIC_JC}


def job_spectrum(config, threads):
    lat = config["lattice"]
    basis = get_basis(lat["n_sites"], lat["n_bosons"])
    H = operator_set(basis).hamiltonian(J=config["J"], U=config["U"], F=config.get("F", 0.0))
    k = config.get("k", 2)
    extra = {}
    if k == "all":
        levels = full_spectrum(H)
        rows = [(str(i), e, 0.0) for i, e in enumerate(levels)]
        try:
            mean_r, details = spacing_ratio(levels, return_details=True)
            extra["spacing_ratio"] = {"mean_r": mean_r, "n_degenerate": details["n_degenerate"]}
        except ValueError as exc:
            extra["spacing_ratio"] = {"error": str(exc)}
    else:
        sl = low_spectrum(H, k=min(k, H.dim), tol=_eig_tol(config), method=config.get("method", "auto"),
                          vectors=False, seed=config.get("seed", 0))
        rows = [(str(i), e, r) for i, (e, r) in enumerate(zip(sl.eigenvalues, sl.residuals))]
        if len(sl.eigenvalues) > 1:
            extra["gap"] = sl.gap
    meta = {"J": config["J"], "U": config["U"], "F": config.get("F", 0.0), "n_sites": lat["n_sites"],
            "n_bosons": lat["n_bosons"], "dim": H.dim}
    files = {"spectrum.csv": (meta, _rows(["index", "eigenvalue", "residual"], rows))}
    return files, {"points": [{"label": "spectrum", "status": "ok"}], **extra}


def job_predict(config, threads):
    t = _explicit_grid(config["time_grid"])
    if t is None:
        raise ConfigError("predict needs an explicit time grid")
    p = perturbative_prediction(config["kind"], t, J=config.get("J", 1.0), U=config.get("U", 1.0),
                                magnitude=config["magnitude"], beta=config.get("beta"))
    rows = [(ti, fi, "1" if ok else "0") for ti, fi, ok in zip(t, p.value, p.in_window)]
    meta = {"kind": config["kind"], "J": config.get("J", 1.0), "U": config.get("U", 1.0),
            "magnitude": config["magnitude"], "validity_bound": p.validity_bound}
    files = {"prediction.csv": (meta, _rows(["t", "f_pred", "in_window"], rows))}
    return files, {"points": [{"label": "prediction", "status": "ok"}], "validity_bound": p.validity_bound}


JOBS = {
    "echo-curve": job_echo_curve,
    "sequence": job_sequence,
    "scan-critical": job_scan_critical,
    "spectrum": job_spectrum,
    "predict": job_predict,
}

PLANNED_OUTPUTS = {
    "echo-curve": lambda c: [f"echo_{s.get('label', s['kind'])}.csv" for s in c["scenarios"]] + ["echo_combined.csv"],
    "sequence": lambda c: ["sequence.csv"],
    "scan-critical": lambda c: [f"scan_N{n}.csv" for n in c["sizes"]],
    "spectrum": lambda c: ["spectrum.csv"],
    "predict": lambda c: ["prediction.csv"],
}


def run_job(job: str, config: dict, out: Path, threads: int | None = None, overwrite: bool = False,
            timestamp: bool = True) -> dict:
    """Run a validated job and write its CSV files plus ``manifest.json`` into ``out``."""
    out = Path(out)
    names = PLANNED_OUTPUTS[job](config) + ["manifest.json"]
    if len(set(names)) != len(names):
        raise ConfigError("output names collide; give scenarios distinct labels")
    existing = [n for n in names if (out / n).exists()]
    if existing and not overwrite:
        raise ConfigError(f"refusing to overwrite existing outputs in {out}: {', '.join(existing)}")
    threads = threads or config.get("threads") or os.cpu_count() or 1
    start = time.perf_counter()
    files, extra = JOBS[job](config, threads)
    wall = time.perf_counter() - start
    common = {"tool": "bhecho", "tool_version": __version__, "job": job,
              "config": json.dumps(config, sort_keys=True, separators=(",", ":"))}
    if timestamp:
        common["wall_time_s"] = f"{wall:.3f}"
        common["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    out.mkdir(parents=True, exist_ok=True)
    for name, (meta, body) in files.items():
        (out / name).write_text(_header({**common, **meta}) + body)
    manifest = {
        "tool": "bhecho",
        "tool_version": __version__,
        "job": job,
        "config": config,
        "tolerances": {**PropagatorConfig().__dict__, "eig_tol": 1e-10, **config.get("tolerances", {})},
        "outputs": sorted(files),
        "status": "ok",
        **extra,
    }
    if timestamp:
        manifest["wall_time_s"] = wall
        manifest["timestamp"] = common["timestamp"]
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    return manifest


def build_parser():
    parser = argparse.ArgumentParser(prog="bhecho", description=__doc__)
    parser.add_argument("--version", action="version", version=f"bhecho {__version__}")
    sub = parser.add_subparsers(dest="job", required=True)
    for job in JOB_KINDS:
        p = sub.add_parser(job)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir in the config)")
        p.add_argument("--threads", type=int, default=None,
                       help="workers for independent scan points (overrides threads in the config)")
        p.add_argument("--overwrite", action="store_true", help="replace existing output files")
        p.add_argument("--no-timestamp", action="store_true", help="omit wall time and timestamps")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _report(kind, exc):
    print(json.dumps({"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        _report("config", ConfigError("--threads must be >= 1"))
        return EXIT_CONFIG
    try:
        config = load(args.config, args.job)
        out = args.out or config.get("output_dir")
        if out is None:
            raise ConfigError("no output directory: pass --out or set output_dir")
        manifest = run_job(args.job, config, Path(out), threads=args.threads or config.get("threads"),
                           overwrite=args.overwrite, timestamp=not args.no_timestamp)
    except ConfigError as exc:
        _report("config", exc)
        return EXIT_CONFIG
    except Exception as exc:
        _report("compute", exc)
        return EXIT_COMPUTE
    print(json.dumps({"status": "ok", "outputs": manifest["outputs"]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
