"""Command-line front end.

``sdmpc <command> [--config PATH] [--out DIR] [--jobs N] [--acceptance]``
with commands ``simulate``, ``table1``, ``figure1``, ``certify``,
``viability`` and ``sweep``.  Every command writes CSV/JSON artifacts into
``--out``; the same config always yields byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 mismatch with the reference values (``--acceptance`` only).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, KINDS, load_config
from .errors import SdmpcError
from .integrate import GridSpec
from .mpc import lyapunov_monitor, run_mpc, smallest_horizon

__all__ = ["main", "build_parser", "REFERENCE_TABLE1", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC",
           "EXIT_MISMATCH"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4

# reference smallest horizons; rows x0 in (0.5,0.5), (0.6,0.6), (0.7,0.7), columns delta in 0.1, 0.05, 0.03
REFERENCE_TABLE1 = {
    (0.5, 0.5): {0.1: 4, 0.05: 7, 0.03: 10},
    (0.6, 0.6): {0.1: 4, 0.05: 7, 0.03: 11},
    (0.7, 0.7): {0.1: 5, 0.05: 10, 0.03: 14},
}

log = logging.getLogger("sdmpc")


class Mismatch(Exception):
    """Raised in acceptance mode when results disagree with the reference values."""


# --------------------------------------------------------------------------- output helpers

def _num(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        if len(r) != len(header):
            raise ValueError("row length does not match header")
        w.writerow([_num(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")


def _fan_out(fn: Callable, tasks: List[tuple], jobs: int) -> list:
    """Run ``fn(*task)`` for every task; results come back in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------- workers (picklable)

def _load(src, kind, overrides):
    return load_config(src, kind, overrides)


def _table1_cell(src, overrides, x0, delta):
    cfg = _load(src, "table1", overrides)
    lo, hi = (int(v) for v in cfg["N_range"])
    return smallest_horizon(cfg.system, cfg.cost, cfg.constraints, np.asarray(x0, float), float(delta),
                            hi, float(cfg["t_sim"]), float(cfg["goal_radius"]), int(cfg["substeps"]),
                            cfg.solver_for(), cfg["success_mode"], lo)


def _sweep_row(src, overrides, x0, delta, N):
    cfg = _load(src, "sweep", overrides)
    run = run_mpc(cfg.system, cfg.cost, cfg.constraints, np.asarray(x0, float),
                  GridSpec(float(delta), int(cfg["substeps"]), int(N)), float(cfg["t_sim"]),
                  float(cfg["goal_radius"]), cfg.solver_for(), cfg["success_mode"])
    rep = lyapunov_monitor(run, 0.0) if len(run.steps) > 1 else None
    v0 = run.steps[0].value if run.steps else math.nan
    return [run.success, run.failure_reason or "", v0, rep.worst_residual if rep else math.nan]


def _figure1_run(src, overrides, x0, N):
    cfg = _load(src, "figure1", overrides)
    return run_mpc(cfg.system, cfg.cost, cfg.constraints, np.asarray(x0, float),
                   GridSpec(float(cfg["delta"]), int(cfg["substeps"]), int(N)), float(cfg["t_sim"]),
                   float(cfg["goal_radius"]), cfg.solver_for(), cfg["success_mode"])


# --------------------------------------------------------------------------- commands

def cmd_simulate(cfg: ExperimentConfig, src, overrides, out: Path, jobs: int, acceptance: bool) -> int:
    run = run_mpc(cfg.system, cfg.cost, cfg.constraints, np.asarray(cfg["x0"], float),
                  GridSpec(float(cfg["delta"]), int(cfg["substeps"]), int(cfg["N"])),
                  float(cfg["t_sim"]), float(cfg["goal_radius"]), cfg.solver_for(), cfg["success_mode"])
    (out / "steps.csv").write_text(run.steps_csv(), encoding="utf-8")
    _write_trajectory(out / "trajectory.csv", [("run", run)])
    write_json(out / "summary.json", run.summary())
    print(f"success={run.success} failure={run.failure_reason} steps={len(run.steps)}")
    return EXIT_OK


def _write_trajectory(path: Path, runs):
    rows = []
    header = None
    for label, run in runs:
        tr = run.closed_loop
        n, m = tr.states.shape[1], tr.controls.shape[1]
        header = ["run", "t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)]
        for i, t in enumerate(tr.times):
            u = tr.controls[i] if i < len(tr.controls) else [math.nan] * m
            rows.append([label, t, *tr.states[i], *u])
    write_csv(path, header, rows)


def cmd_table1(cfg: ExperimentConfig, src, overrides, out: Path, jobs: int, acceptance: bool) -> int:
    x0s = [tuple(float(v) for v in x) for x in cfg["x0_list"]]
    deltas = [float(d) for d in cfg["delta_list"]]
    tasks = [(src, overrides, x, d) for x in x0s for d in deltas]
    t0 = time.perf_counter()
    results = _fan_out(_table1_cell, tasks, jobs)
    log.info("table1: %d cells in %.1f s", len(tasks), time.perf_counter() - t0)
    table = {}
    rows = []
    for i, x in enumerate(x0s):
        vals = results[i * len(deltas):(i + 1) * len(deltas)]
        table[x] = dict(zip(deltas, vals))
        rows.append([*x, *vals])
    n = len(x0s[0]) if x0s else 0
    header = [f"x0_{i + 1}" for i in range(n)] + [f"N(delta={d!r})" for d in deltas]
    write_csv(out / "table1.csv", header, rows)
    compared, worst = [], 0
    for x, row in table.items():
        for d, N in row.items():
            ref = REFERENCE_TABLE1.get(x, {}).get(d)
            if ref is None:
                continue
            dev = math.inf if N is None else abs(N - ref)
            worst = max(worst, dev)
            compared.append({"x0": list(x), "delta": d, "N": N, "reference": ref, "deviation": dev})
    write_json(out / "table1.json", {"cells": [{"x0": list(x), "delta": d, "N": N}
                                               for x, r in table.items() for d, N in r.items()],
                                     "comparison": compared, "max_deviation": worst,
                                     "success_mode": cfg["success_mode"],
                                     "constraint_nodes": cfg.solver_for().constraint_nodes})
    for x, row in table.items():
        print(" ".join([f"x0={list(x)}"] + [f"d={d}:{'none' if N is None else N}" for d, N in row.items()]))
    if acceptance and compared and worst > 1:
        raise Mismatch(f"smallest horizons deviate by {worst} from the reference values")
    return EXIT_OK


def cmd_figure1(cfg: ExperimentConfig, src, overrides, out: Path, jobs: int, acceptance: bool) -> int:
    from .viability import barrier_polyline_csv, double_integrator_kernel

    runs_cfg = [(tuple(float(v) for v in x), int(N)) for x, N in cfg["runs"]]
    results = _fan_out(_figure1_run, [(src, overrides, x, N) for x, N in runs_cfg], jobs)
    labels = [f"x0=({x[0]!r},{x[1]!r}),N={N}" for x, N in runs_cfg]
    _write_trajectory(out / "figure1_trajectories.csv", list(zip(labels, results)))
    summaries = []
    for (x, N), run in zip(runs_cfg, results):
        s = run.summary()
        s["max_node_violation"] = float(run.closed_loop.max_violation(cfg.constraints))
        s["terminal_norm"] = float(np.linalg.norm(run.closed_loop.final_state))
        summaries.append(s)
        print(f"x0={list(x)} N={N} success={run.success} failure={run.failure_reason} "
              f"t_end={s['final_time']:.2f} |x_end|={s['terminal_norm']:.3g}")
    if cfg.system_name == "double_integrator":
        (out / "barrier.csv").write_text(barrier_polyline_csv(double_integrator_kernel()), encoding="utf-8")
    write_json(out / "figure1.json", {"runs": summaries, "delta": cfg["delta"], "t_sim": cfg["t_sim"],
                                      "goal_radius": cfg["goal_radius"]})
    (out / "figure1.gp").write_text(gnuplot_script(labels), encoding="utf-8")
    failed = [s for s in summaries if not s["success"]]
    if acceptance and failed:
        raise Mismatch(f"{len(failed)} of {len(summaries)} runs failed")
    return EXIT_OK


def gnuplot_script(labels: Sequence[str]) -> str:
    """Gnuplot commands plotting the trajectory CSV over the barrier polyline."""
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 'x_1'; set ylabel 'x_2'",
        "set xrange [-1:1]; set yrange [-1:1]",
        "set size square",
        "plot \\",
        "  'barrier.csv' using ($1==0?$3:1/0):4 with lines lc 'black' title 'barrier', \\",
        "  'barrier.csv' using ($1==1?$3:1/0):4 with lines lc 'black' notitle, \\",
    ]
    colours = ["red", "blue", "dark-green", "magenta", "orange", "cyan"]
    for i, lab in enumerate(labels):
        end = ", \\" if i < len(labels) - 1 else ""
        lines.append(f"  'figure1_trajectories.csv' using (strcol(1) eq '{lab}' ? $3 : 1/0):4 "
                     f"with lines lc '{colours[i % len(colours)]}' title '{lab}'{end}")
    return "\n".join(lines) + "\n"


def cmd_certify(cfg: ExperimentConfig, src, overrides, out: Path, jobs: int, acceptance: bool) -> int:
    from .certify import certify

    rep = certify(cfg.system, cfg.cost, cfg.constraints, np.asarray(cfg["K"], float), float(cfg["delta"]),
                  N_range=None if cfg["N_range"] is None else range(int(cfg["N_range"][0]),
                                                                    int(cfg["N_range"][1]) + 1),
                  radius=cfg["radius"], T_long=float(cfg["T_long"]), substeps=int(cfg["substeps"]),
                  options=cfg.solver_for())
    d = rep.as_dict()
    write_json(out / "certificate.json", d)
    c = rep.certificate
    print(f"N_bar={rep.N_bar} alpha={c.alpha:.4g} passes={c.passes} gamma={rep.lq.gamma:.6f} "
          f"M={rep.M:.4g} C={rep.C:.4g} Cbar={rep.Cbar:.4g}")
    if acceptance and not c.passes:
        raise Mismatch("no certified horizon")
    return EXIT_OK


def cmd_viability(cfg: ExperimentConfig, src, overrides, out: Path, jobs: int, acceptance: bool) -> int:
    from .certify import bound_value_on_scaled_kernel, solve_care
    from .viability import (barrier_polyline_csv, double_integrator_kernel, inner_approximation,
                            interior_ball_radius)

    lin, cons, cost = cfg.system, cfg.constraints, cfg.cost
    solve_care(lin, cost)
    grid = inner_approximation(lin, cons, float(cfg["resolution"]), float(cfg["horizon"]), cost,
                               margin=int(cfg["margin"]))
    (out / "occupancy.csv").write_text(grid.occupancy_csv(), encoding="utf-8")
    report: Dict[str, Any] = {"resolution": grid.resolution, "margin": int(cfg["margin"]),
                              "grid_volume": grid.volume,
                              "interior_ball_radius": interior_ball_radius(lin, cons)}
    if cfg.system_name == "double_integrator":
        kernel = double_integrator_kernel()
        (out / "barrier.csv").write_text(barrier_polyline_csv(kernel), encoding="utf-8")
        exact = 4.0 - 1.0 / 3.0
        pts = np.array(np.meshgrid(*grid.axes, indexing="ij")).reshape(len(grid.axes), -1).T
        outside = [p for p, ins in zip(pts, grid.inside.ravel()) if ins and not kernel.contains(p)]
        lam = float(cfg["lambda"])
        b = bound_value_on_scaled_kernel(lin, cons, cost, lam, kernel, per_axis=int(cfg.params.get("per_axis", 5)))
        report.update({"analytic_volume": exact, "volume_defect": (exact - grid.volume) / exact,
                       "vertices_outside_analytic": len(outside), "scaled_kernel_bound": b.as_dict()})
        if acceptance and (outside or report["volume_defect"] > 0.05):
            write_json(out / "viability.json", report)
            raise Mismatch("grid approximation is not a tight inner approximation")
    write_json(out / "viability.json", report)
    print(" ".join(f"{k}={v}" for k, v in sorted(report.items()) if not isinstance(v, dict)))
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, src, overrides, out: Path, jobs: int, acceptance: bool) -> int:
    x0s = [tuple(float(v) for v in x) for x in cfg["x0_list"]]
    deltas = [float(d) for d in cfg["delta_list"]]
    nr = cfg["N_range"] or []
    Ns = list(range(int(nr[0]), int(nr[1]) + 1)) if len(nr) == 2 else []
    keys = [(x, d, N) for x in x0s for d in deltas for N in Ns]
    results = _fan_out(_sweep_row, [(src, overrides, *k) for k in keys], jobs)
    n = len(x0s[0]) if x0s else 2
    header = [f"x0_{i + 1}" for i in range(n)] + ["delta", "N", "success", "failure_reason", "V_T",
                                                   "worst_residual"]
    write_csv(out / "sweep.csv", header, [[*x, d, N, *r] for (x, d, N), r in zip(keys, results)])
    print(f"{len(keys)} rows, {sum(bool(r[0]) for r in results)} successful")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "table1": cmd_table1, "figure1": cmd_figure1,
            "certify": cmd_certify, "viability": cmd_viability, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdmpc", description="Sampled-data MPC experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in KINDS:
        s = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().splitlines()[0]
                           if COMMANDS[name].__doc__ else name)
        s.add_argument("--config", type=Path, default=None, help="INI config file")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.add_argument("--acceptance", action="store_true",
                       help="compare with reference values; exit 4 on mismatch")
        s.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                       help="override an [experiment] parameter")
    return p


def _parse_overrides(items) -> Dict[str, Any]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        overrides = _parse_overrides(args.set)
        src = None if args.config is None else str(args.config)
        cfg = load_config(src, args.command, overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, src, overrides, args.out, args.jobs, args.acceptance)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Mismatch as exc:
        print(f"acceptance mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (SdmpcError, ArithmeticError, np.linalg.LinAlgError) as exc:
        hint = " (decrease delta)" if "delta" in str(exc) and "decrease" not in str(exc) else ""
        print(f"numerical failure: {type(exc).__name__}: {exc}{hint}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
