"""Command-line front end.

Usage::

    susylab {analyze-potential,spectrum,splitting,evolve,sde,check-hypotheses}
        --config PATH [--out DIR] [--threads N] [--seed U64]

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import platform
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .config import COMMAND_SECTIONS, ExperimentConfig, load_config
from .disc import discretize, grid_for_h
from .dyncheck import HypothesisPlan, verify_hypotheses
from .errors import ConfigError, NumericalError, UnsupportedTopology
from .grid import Grid
from .potential import barrier_report, find_critical_points, parse_potential
from .semigroup import equilibration_report
from .spectral import (
    SplittingProblem,
    count_in_disc,
    eigs_near_zero,
    projection,
    radius_ladder,
    splitting_sweep,
)
from .stochastic import (
    invariant_distance,
    make_chain,
    make_kinetic,
    make_overdamped,
    simulate_ensemble,
    transition_slope,
    transition_statistics,
)
from .susy import SusySpec, assemble_chain, assemble_kfp, assemble_witten

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def csv_text(columns, rows, config_hash: str) -> str:
    lines = [f"# config_hash={config_hash}", ",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(payload: dict, config_hash: str) -> str:
    body = {"config_hash": config_hash, **_jsonable(payload)}
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=True) + "\n"


# ---------------------------------------------------------------------------
# builders


def build_spec(cfg: ExperimentConfig) -> SusySpec:
    try:
        return _build_spec(cfg)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, NumericalError):
            raise
        raise ConfigError(f"bad model section: {exc}", [str(exc)]) from exc


def _build_spec(cfg: ExperimentConfig) -> SusySpec:
    m = cfg["model"]
    fam, gamma = m["family"], m["gamma"]
    if fam == "witten":
        return assemble_witten(gamma, parse_potential(m["potential"]))
    if fam == "kfp":
        return assemble_kfp(gamma, parse_potential(m["potential"]))
    return assemble_chain(gamma, parse_potential(m["v1"]), parse_potential(m["v2"]), parse_potential(m["vc"]))


def position_box(spec: SusySpec, box) -> list:
    n = spec.position_dim or spec.dim
    if len(box) < n:
        raise ConfigError(f"box has {len(box)} intervals, need at least {n}", ["grid box dimension"])
    return list(box[:n])


def analyze(spec: SusySpec, box, seeds_per_axis: int):
    pts = find_critical_points(spec.effective_potential, position_box(spec, box), seeds_per_axis)
    return barrier_report(pts)


def build_grid(cfg: ExperimentConfig, spec: SusySpec, h: float) -> Grid:
    g = cfg["grid"]
    if len(g["box"]) != spec.dim:
        raise ConfigError(
            f"grid box has {len(g['box'])} intervals, spec dimension is {spec.dim}", ["grid box dimension"]
        )
    if g["n"]:
        n = g["n"] if len(g["n"]) > 1 else g["n"][0]
        return Grid.from_box(g["box"], n)
    return grid_for_h(g["box"], h, g["points_per_h"])


def metastable_indices(report) -> tuple[int, ...]:
    if report.is_double_well:
        return (0, 1)
    return (0,)


# ---------------------------------------------------------------------------
# commands


def cmd_analyze_potential(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    spec = build_spec(cfg)
    rep = analyze(spec, cfg["grid"]["box"], cfg["grid"]["seeds_per_axis"])
    payload = {"effective_potential": rep.to_dict()}
    atomic_write(out / "critical_points.json", json_text(payload, cfg.hash))
    return ["critical_points.json"]


def cmd_spectrum(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    spec = build_spec(cfg)
    rep = analyze(spec, cfg["grid"]["box"], cfg["grid"]["seeds_per_axis"])
    meta = metastable_indices(rep)
    s = cfg["solver"]
    rows, proj = [], []
    for h in cfg["sweep"]["h"]:
        op = discretize(spec, build_grid(cfg, spec, h), h, cfg["grid"]["stabilization"])
        res = eigs_near_zero(op, s["k"], s["tol"], s["max_iter"], s["seed"])
        rows += res.csv_rows()
        entry = {
            "h": h,
            "n_nodes": op.size,
            "count_h_over_10": count_in_disc(res, h / 10).count,
            "radius_ladder": radius_ladder(res),
            "biorthogonality_error": res.biorthogonality_error(),
        }
        for i in meta:
            entry[f"norm_pi{i}"] = projection(res, [i]).operator_norm_estimate
        proj.append(entry)
    atomic_write(out / "spectrum.csv", csv_text(["h", "re_mu", "im_mu", "residual", "index"], rows, cfg.hash))
    atomic_write(out / "projectors.json", json_text({"metastable": list(meta), "runs": proj}, cfg.hash))
    return ["spectrum.csv", "projectors.json"]


def cmd_splitting(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    spec = build_spec(cfg)
    rep = analyze(spec, cfg["grid"]["box"], cfg["grid"]["seeds_per_axis"])
    if not rep.barriers:
        raise UnsupportedTopology("splitting needs a double well or a well and a sea")
    g, s = cfg["grid"], cfg["solver"]
    prob = SplittingProblem(
        spec,
        g["box"],
        rep.effective_barrier,
        mu1_index=1 if rep.is_double_well else 0,
        points_per_h=g["points_per_h"],
        stabilization=g["stabilization"],
        k=s["k"],
        seed=s["seed"],
    )
    fit = splitting_sweep(prob, cfg["sweep"]["h"], threads=threads)
    rows = [r for res in fit.results for r in res.csv_rows()]
    atomic_write(out / "splitting.csv", csv_text(["h", "re_mu", "im_mu", "residual", "index"], rows, cfg.hash))
    payload = fit.to_dict()
    payload["expected_slope"] = fit.expected_slope
    payload["barrier"] = fit.barrier
    atomic_write(out / "splitting.json", json_text(payload, cfg.hash))
    return ["splitting.csv", "splitting.json"]


def cmd_evolve(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    spec = build_spec(cfg)
    rep = analyze(spec, cfg["grid"]["box"], cfg["grid"]["seeds_per_axis"])
    h = cfg["sweep"]["h"][0]
    s, e = cfg["solver"], cfg["evolution"]
    op = discretize(spec, build_grid(cfg, spec, h), h, cfg["grid"]["stabilization"])
    res = eigs_near_zero(op, s["k"], s["tol"], s["max_iter"], s["seed"])
    u0 = np.random.default_rng(e["seed"]).standard_normal(op.size)
    times = np.arange(0.0, e["t_end"] + 0.5 * e["dt"], e["dt"])
    ev = equilibration_report(op, res, u0, times, h, e["dt"], metastable_indices(rep))
    atomic_write(
        out / "evolution.csv", csv_text(["t", "remainder_norm", "state_norm"], ev.csv_rows(), cfg.hash)
    )
    payload = ev.to_dict()
    payload.update({"h": h, "dt": ev.dt_used, "window": list(ev.window)})
    atomic_write(out / "evolution.json", json_text(payload, cfg.hash))
    return ["evolution.csv", "evolution.json"]


def _sde_model(cfg, spec: SusySpec, h: float):
    m = cfg["model"]
    T = h / 2
    temps = m["temperatures"]
    if m["family"] == "witten":
        return make_overdamped(parse_potential(m["potential"]), m["gamma"], T)
    if m["family"] == "kfp":
        return make_kinetic(parse_potential(m["potential"]), m["gamma"], T)
    T1, T2 = (temps[0], temps[1]) if temps else (T, T)
    return make_chain(
        parse_potential(m["v1"]), parse_potential(m["v2"]), parse_potential(m["vc"]), m["gamma"], T1, T2
    )


def _initial_states(spec: SusySpec, rep, n_traj: int) -> np.ndarray:
    """Trajectories start at the wells of the effective potential, alternating."""
    minima = [p.location for p in rep.points if p.index == 0] or [rep.points[0].location]
    n = spec.position_dim or spec.dim
    X = np.zeros((n_traj, spec.dim))
    for j in range(n_traj):
        x = minima[j % len(minima)]
        X[j, :n] = x
        if spec.family_tag == "chain":
            X[j, 2 * n :] = x
    return X


def cmd_sde(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    spec = build_spec(cfg)
    rep = analyze(spec, cfg["grid"]["box"], cfg["grid"]["seeds_per_axis"])
    sd = cfg["sde"]
    runs, files, means, hs = [], [], [], []
    for i, h in enumerate(cfg["sweep"]["h"]):
        model = _sde_model(cfg, spec, h)
        ens = simulate_ensemble(
            model,
            sd["n_traj"],
            sd["t_end"],
            sd["dt"],
            sd["seed"] + i,
            stride=sd["stride"],
            x0=_initial_states(spec, rep, sd["n_traj"]),
            threads=threads,
        )
        ens.meta["config_hash"] = cfg.hash
        name = f"ensemble_{i}"
        atomic_write(out / f"{name}.bin", ens.to_bytes())
        atomic_write(out / f"{name}.json", json.dumps(ens.sidecar(), indent=2, sort_keys=True) + "\n")
        files += [f"{name}.bin", f"{name}.json"]
        entry = {"h": h, "model_id": model.model_id}
        if model.family_tag != "chain" or model.temperatures[0] == model.temperatures[-1]:
            entry["invariant_tv"] = {
                str(a): invariant_distance(ens, spec, h, sd["bins"], axes=(a,), burn_in=sd["burn_in"])
                for a in sd["axes"]
            }
        if sd["radius"] is not None and rep.is_double_well:
            st = transition_statistics(ens, rep, sd["radius"], sd["min_transitions"])
            entry["transitions"] = st.to_dict()
            means.append(st.mean)
            hs.append(h)
        runs.append(entry)
    payload = {"runs": runs}
    if len(hs) >= 2:
        slope, intercept, r2 = transition_slope(hs, means)
        payload["transition_fit"] = {
            "slope": slope,
            "intercept": intercept,
            "r_squared": r2,
            "expected_slope": 2 * rep.effective_barrier,
        }
    atomic_write(out / "sde.json", json_text(payload, cfg.hash))
    return files + ["sde.json"]


def cmd_check_hypotheses(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    spec = build_spec(cfg)
    d = cfg["dyncheck"]
    if len(d["box"]) != spec.dim:
        raise ConfigError(f"dyncheck box needs {spec.dim} intervals", ["dyncheck box dimension"])
    plan = HypothesisPlan(
        box=d["box"],
        T0=d["t0"],
        radii=tuple(d["radii"]),
        C=d["c"],
        directions=d["directions"],
        far_samples=d["far_samples"],
        far_exclusion=d["far_exclusion"],
        far_floor=d["far_floor"],
        measure_samples=d["measure_samples"],
        measure_threshold=d["measure_threshold"],
        measure_floor=d["measure_floor"],
        measure_exclusion=d["measure_exclusion"],
        seeds_per_axis=d["seeds_per_axis"],
        seed=d["seed"],
    )
    report = verify_hypotheses(spec, plan)
    atomic_write(out / "hypotheses.json", json_text(report.to_dict(), cfg.hash))
    return ["hypotheses.json"]


COMMANDS = {
    "analyze-potential": cmd_analyze_potential,
    "spectrum": cmd_spectrum,
    "splitting": cmd_splitting,
    "evolve": cmd_evolve,
    "sde": cmd_sde,
    "check-hypotheses": cmd_check_hypotheses,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="susylab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="experiment config file (INI sections)")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
    return p


def _write_metadata(out: Path, command: str, cfg_hash: str, files: list[str], status: str) -> None:
    meta = {
        "command": command,
        "config_hash": cfg_hash,
        "status": status,
        "files": files,
        "timestamp_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "versions": {
            "susylab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    atomic_write(out / "metadata.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print(json.dumps({"error": "config_error", "message": "--threads must be >= 1"}), file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print(json.dumps({"error": "config_error", "message": "--seed must fit in 64 bits"}), file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg.override_seed(args.seed)
    except ConfigError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg["output"]["dir"])
    try:
        files = COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        err = exc.to_dict()
        report = getattr(exc, "report", None)
        if report is not None and hasattr(report, "to_dict"):
            err["report"] = _jsonable(report.to_dict())
        atomic_write(out / "error.json", json.dumps(_jsonable(err), indent=2, sort_keys=True) + "\n")
        _write_metadata(out, args.command, cfg.hash, ["error.json"], "numerical_failure")
        print(json.dumps(_jsonable(err)), file=sys.stderr)
        return EXIT_NUMERICAL
    _write_metadata(out, args.command, cfg.hash, files, "ok")
    print(json.dumps({"status": "ok", "out": str(out), "files": files}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
