"""Command-line entry point: ``gasmor {validate,simulate,reduce,sweep,compare}``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Option precedence: command-line flags, then ``--config`` (JSON), then defaults.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import fixtures
from .evaluation import (DEFAULT_EPS, ErrorCurve, EvaluationReport, compare, morscore, plot_data_csv,
                         report_csv, summary_csv, sweep)
from .model import GRAVITY_MODES, MODELS, build_model, model_summary_csv
from .network import (NetworkError, apply_height_profiles, parse_network, parse_profiles, parse_scenario,
                      serialize_network, serialize_scenario, validate)
from .reductors import REDUCTORS, collect_snapshots, galerkin_project, gain_mismatch, apply_gain_matching, \
    save_rom, train_basis
from .solvers import SOLVERS, integrate, make_stepper

log = logging.getLogger("gasmor")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "network": None,
    "scenario": None,
    "profile": None,
    "fixture": "hypothetical",
    "model": "ode_end",
    "solver": "imex1",
    "reductor": None,
    "gravity": "dynamic",
    "dt": None,
    "rtol": 1e-3,
    "rmax": 100,
    "eps_digits": 16,
    "gain_matching": "off",
    "stride": 1,
    "jobs": 1,
    "out": "gasmor-out",
}


class UsageError(Exception):
    pass


def _common_parser():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON file with option defaults (keys as long flag names)")
    g.add_argument("--network", help="network file (.net.csv); defaults to the bundled fixture")
    g.add_argument("--scenario", help="scenario file (.scn.csv)")
    g.add_argument("--profile", help="height profile file (.prof.csv)")
    g.add_argument("--fixture", choices=fixtures.FIXTURES, help="bundled fixture used when --network is absent")
    g.add_argument("--model", choices=MODELS, help="spatial discretization (default ode_end)")
    g.add_argument("--solver", choices=SOLVERS, help="time stepper (default imex1)")
    g.add_argument("--reductor", choices=REDUCTORS, action="append",
                   help="reductor id; repeat for several (sweep default: all)")
    g.add_argument("--gravity", choices=GRAVITY_MODES, help="gravity term (default dynamic)")
    g.add_argument("--dt", type=float, help="time step [s]; defaults to the scenario hint")
    g.add_argument("--rtol", type=float, help="relative tolerance of the adaptive solver")
    g.add_argument("--rmax", type=int, help="largest reduced order (default 100)")
    g.add_argument("--eps-digits", type=int, help="MORscore precision digits (default 16)")
    g.add_argument("--gain-matching", choices=("on", "off"), help="add steady-gain feedthrough (default off)")
    g.add_argument("--stride", type=int, help="order stride in sweeps (default 1)")
    g.add_argument("--jobs", type=int, help="worker threads (default 1)")
    g.add_argument("--out", help="output directory (default gasmor-out)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="gasmor",
        description="Gas network transient simulation and model order reduction.",
        epilog=f"models: {', '.join(MODELS)}; solvers: {', '.join(SOLVERS)}; reductors: {', '.join(REDUCTORS)}",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a network and dump a model summary")
    sub.add_parser("simulate", parents=[common], help="simulate the full model, write trajectory CSV + SVG")
    sub.add_parser("reduce", parents=[common], help="train one reductor at width --rmax and persist the ROM")
    sub.add_parser("sweep", parents=[common], help="error-vs-order sweep for one or more reductors")
    cmp_ = sub.add_parser("compare", parents=[common], help="rank reductors from sweep report CSVs")
    cmp_.add_argument("reports", nargs="*", help="report CSV files (default: <out>/report.csv)")
    return parser


def resolve(args) -> argparse.Namespace:
    """Merge flags over config-file values over built-in defaults."""
    conf = {}
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            conf = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
        unknown = set(conf) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, valid in (("model", MODELS), ("solver", SOLVERS), ("gravity", GRAVITY_MODES)):
            if key in conf and conf[key] not in valid:
                raise UsageError(f"invalid {key} {conf[key]!r} in config; valid ids: {', '.join(valid)}")
        if "reductor" in conf:
            reds = conf["reductor"] if isinstance(conf["reductor"], list) else [conf["reductor"]]
            bad = [r for r in reds if r not in REDUCTORS]
            if bad:
                raise UsageError(f"invalid reductor {bad[0]!r} in config; valid ids: {', '.join(REDUCTORS)}")
            conf["reductor"] = reds
    merged = dict(DEFAULTS)
    merged.update(conf)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    ns = argparse.Namespace(**merged)
    ns.command = args.command
    ns.reports = getattr(args, "reports", [])
    ns.verbose = args.verbose
    for name in ("network", "scenario", "profile"):
        path = getattr(ns, name)
        if path is not None and not os.path.exists(path):
            raise UsageError(f"{name} file not found: {path}")
    if ns.network is not None and ns.scenario is None and ns.command != "validate":
        raise UsageError("--scenario is required with --network")
    if ns.rmax is not None and ns.rmax < 1:
        raise UsageError("--rmax must be positive")
    return ns


def load_inputs(cfg):
    if cfg.network is None:
        net, scn = fixtures.load_fixture(cfg.fixture, profiles=cfg.profile is None)
        if cfg.profile is not None:
            with open(cfg.profile, encoding="utf-8") as fh:
                net = apply_height_profiles(net, parse_profiles(fh.read()))
        return net, scn
    with open(cfg.network, encoding="utf-8") as fh:
        net = parse_network(fh.read())
    if cfg.profile:
        with open(cfg.profile, encoding="utf-8") as fh:
            net = apply_height_profiles(net, parse_profiles(fh.read()))
    scn = None
    if cfg.scenario:
        with open(cfg.scenario, encoding="utf-8") as fh:
            scn = parse_scenario(fh.read(), net)
    return net, scn


def _model(cfg, net, scn):
    return build_model(net, scn, scheme=cfg.model, gravity=cfg.gravity)


def _forcing(cfg, model, scn):
    f = model.forcing(scn)
    if cfg.dt is not None:
        from .systems import Forcing
        f = Forcing(f.horizon, cfg.dt, f.fn)
    return f


def _stepper(cfg):
    return make_stepper(cfg.solver, rtol=cfg.rtol)


def _output_labels(net):
    return [f"flux:{n}" for n in net.supply_nodes] + [f"pressure:{n}" for n in net.demand_nodes]


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    log.info("wrote %s", path)
    return path


def training_key(cfg, net, scn, extra=()):
    h = hashlib.sha256()
    for part in (serialize_network(net), serialize_scenario(scn), cfg.model, cfg.gravity, cfg.solver,
                 repr(cfg.dt), *map(str, extra)):
        h.update(part.encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# commands


def cmd_validate(cfg):
    net, scn = load_inputs(cfg)
    rep = validate(net)
    for line in rep.lines():
        print(line)
    print(f"tree={rep.is_tree} nodes={rep.n_nodes} pipes={rep.n_pipes} supply={rep.n_supply} demand={rep.n_demand}")
    if scn is not None:
        os.makedirs(cfg.out, exist_ok=True)
        model = _model(cfg, net, scn)
        _write(os.path.join(cfg.out, "model_summary.csv"), model_summary_csv(model))
    return EXIT_OK if rep.ok else EXIT_USAGE


def cmd_simulate(cfg):
    net, scn = load_inputs(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    model = _model(cfg, net, scn)
    traj = integrate(model, _stepper(cfg), _forcing(cfg, model, scn))
    labels = _output_labels(net)
    rows = ["t," + ",".join(labels)]
    for t, y in zip(traj.times, traj.outputs_abs):
        rows.append(f"{t:.10g}," + ",".join(f"{v:.12e}" for v in y))
    _write(os.path.join(cfg.out, "trajectory.csv"), "\n".join(rows) + "\n")
    from .plotting import plot_scenario, plot_trajectory
    plot_scenario(scn, net, os.path.join(cfg.out, "scenario.svg"), title="test scenario")
    plot_trajectory(traj, labels, os.path.join(cfg.out, "trajectory.svg"),
                    title=f"{cfg.model} / {cfg.solver}")
    print(f"simulated {len(traj.times)} samples ({cfg.model}, {cfg.solver}); outputs in {cfg.out}")
    return EXIT_OK


def cmd_reduce(cfg):
    net, scn = load_inputs(cfg)
    model = _model(cfg, net, scn)
    reductor = (cfg.reductor or ["eds_ro_l"])[0]
    r = cfg.rmax
    if r > model.n:
        warnings.warn(f"--rmax {r} exceeds state dimension {model.n}; clipped", stacklevel=1)
        print(f"warning: --rmax {r} exceeds state dimension {model.n}; clipped", file=sys.stderr)
        r = model.n
    forcing = _forcing(cfg, model, scn)
    snaps = collect_snapshots(model, cfg.solver, forcing=forcing, jobs=cfg.jobs)
    V = train_basis(reductor, snaps, r, C=model.C)
    prov = {"reductor": reductor, "r": int(V.shape[1]), "model": cfg.model, "solver": cfg.solver,
            "gravity": cfg.gravity, "training": training_key(cfg, net, scn, (reductor, r))}
    rom = galerkin_project(model, V, provenance=prov)
    D, gerr = gain_mismatch(model, rom)
    if cfg.gain_matching == "on":
        rom = apply_gain_matching(rom, D)
    directory = os.path.join(cfg.out, f"rom_{reductor}")
    digest = save_rom(rom, directory)
    print(f"{reductor}: r={rom.r} mean |D|={gerr:.3e} manifest={digest} -> {directory}")
    return EXIT_OK


def cmd_sweep(cfg):
    net, scn = load_inputs(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    model = _model(cfg, net, scn)
    forcing = _forcing(cfg, model, scn)
    eps = 10.0 ** (-cfg.eps_digits)
    reductors = cfg.reductor or list(REDUCTORS)
    fom = integrate(model, _stepper(cfg), forcing)
    snaps = collect_snapshots(model, cfg.solver, forcing=forcing, jobs=cfg.jobs)
    key = training_key(cfg, net, scn)
    reports = []
    for red in reductors:
        rep = sweep(model, cfg.solver, red, forcing, cfg.rmax, gain_matching=cfg.gain_matching == "on",
                    stride=cfg.stride, eps=eps, snapshots=snaps, fom=fom, jobs=cfg.jobs, scenario_key=key)
        log.info("%s: morscore %.3f", red, rep.morscore)
        reports.append(rep)
    _write(os.path.join(cfg.out, "report.csv"), report_csv(reports))
    _write(os.path.join(cfg.out, "summary.csv"), summary_csv(reports))
    rows, plot_data = compare(reports)
    _write(os.path.join(cfg.out, "plot_data.csv"), plot_data_csv(plot_data))
    from .plotting import plot_error_curves, plot_scenario
    plot_error_curves(plot_data, os.path.join(cfg.out, "errors.svg"),
                      title=f"{cfg.model} / {cfg.solver}", eps=None)
    plot_scenario(scn, net, os.path.join(cfg.out, "scenario.svg"), title="test scenario")
    _print_ranking(rows)
    return EXIT_OK


def _print_ranking(rows):
    print(f"{'rank':>4}  {'reductor':<10} {'MORscore':>8}  {'avg gain error':>14}")
    for row in rows:
        print(f"{row['rank']:>4}  {row['reductor']:<10} {row['morscore']:>8.3f}  {row['avg_gain_error']:>14.3e}")


def read_report_csv(path, eps=DEFAULT_EPS):
    """Rebuild per-reductor reports from a ``reductor,r,error,gain_error`` file."""
    data: dict[str, list[tuple[int, float, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["reductor", "r", "error", "gain_error"]:
            raise UsageError(f"{path}: not a report CSV (expected header reductor,r,error,gain_error)")
        for row in reader:
            data.setdefault(row["reductor"], []).append(
                (int(row["r"]), float(row["error"]), float(row["gain_error"])))
    reports = []
    for red, rows in data.items():
        orders = np.array([r for r, _, _ in rows])
        errors = np.array([e for _, e, _ in rows])
        gains = np.array([g for _, _, g in rows])
        curve = ErrorCurve(orders, errors, ~np.isfinite(errors))
        r_max = int(orders.max())
        reports.append(EvaluationReport(red, curve, morscore(curve, eps, r_max), float(np.nanmean(gains)),
                                        gains, math.nan, math.nan, r_max, eps))
    return reports


def cmd_compare(cfg):
    paths = cfg.reports or [os.path.join(cfg.out, "report.csv")]
    eps = 10.0 ** (-cfg.eps_digits)
    reports = []
    for p in paths:
        if not os.path.exists(p):
            raise UsageError(f"report file not found: {p}")
        reports += read_report_csv(p, eps)
    rows, plot_data = compare(reports)
    os.makedirs(cfg.out, exist_ok=True)
    out = ["rank,reductor,morscore,avg_gain_error"]
    out += [f"{r['rank']},{r['reductor']},{r['morscore']:.6f},{r['avg_gain_error']:.6e}" for r in rows]
    _write(os.path.join(cfg.out, "ranking.csv"), "\n".join(out) + "\n")
    from .plotting import plot_error_curves
    plot_error_curves(plot_data, os.path.join(cfg.out, "compare.svg"), title="reductor comparison")
    _print_ranking(rows)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[cfg.command](cfg)
    except (UsageError, NetworkError, FileNotFoundError) as exc:
        print(f"gasmor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"gasmor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
