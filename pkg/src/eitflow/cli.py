"""Command line entry point: ``eitflow run | verify | sweep``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .constitutive import ClosureError
from .fields import save_snapshot_csv, sym_to_full
from .scenario import ScenarioError, build_scenario, initial_state, load_scenario, probe_indices, resolve
from .solver import BlowUpError, run
from .thermo import AdmissibilityError

_CLOSURE_KEYS = ("kappa", "eta", "zeta", "tau1", "tau2", "tau0", "gamma1", "gamma2", "t_ref")
_RELAXATION_PARAMS = ("tau", "tau1", "tau2", "tau0", "closure.tau1", "closure.tau2", "closure.tau0")
_SWEEP_COLUMNS = (
    "value",
    "status",
    "n_steps",
    "dt",
    "final_time",
    "energy_drift",
    "min_production",
    "ledger_error",
    "cit_distance",
    "front_speed",
    "diffusive",
)


# run -------------------------------------------------------------------------------


def _snapshot_columns(state, model):
    nd = model.grid.ndim
    cols = [("rho", state.rho), ("s", state.s), ("T", model.eq.temperature(state.rho, state.s)), ("u", state.u)]
    if state.q is not None:
        cols.append(("q", state.q))
    if state.sigma is not None:
        cols.append(("sigma", sym_to_full(state.sigma, nd)))
    cols.append(("varsigma", state.varsigma))
    return cols


def _write_probes(path, record):
    names = sorted(record.probes)
    with open(path, "w") as fh:
        fh.write(f"# eitflow-probes v1 scenario={record.scenario_hash}\n")
        fh.write(",".join(["time"] + names) + "\n")
        for i, t in enumerate(record.time):
            fh.write(",".join([repr(float(t))] + [repr(float(record.probes[n][i])) for n in names]) + "\n")


def _summary_lines(sc, result, record):
    lines = [
        f"scenario: {sc.name}",
        f"hash: {sc.hash}",
        f"mode: {sc.closure.mode.value}",
        f"grid: {'x'.join(str(n) for n in sc.grid.shape)}",
        f"seed: {sc.seed}",
    ]
    if result is not None:
        lines += [f"steps: {result.n_steps}", f"dt: {result.dt!r}", f"final time: {result.state.t!r}"]
    lines.append(f"status: {'failed (' + record.failure + ')' if record.failed else 'ok'}")
    if len(record.time) >= 2:
        lines.append(diag.energy_audit(record).summary())
        lines.append(diag.entropy_audit(record).summary())
        lines.append(f"mass: relative drift {diag.mass_drift(record):.3e}")
    return lines


def cmd_run(args):
    sc = _load(args.scenario, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    every = int(sc.output.get("record_every", 1)) or 1
    snap_every = int(sc.output.get("snapshot_every", 0))
    state = initial_state(sc)
    result = None
    try:
        result = run(
            state,
            sc.model,
            sc.control,
            record_every=every,
            probes=probe_indices(sc),
            snapshot_every=snap_every or None,
            scenario_hash=sc.hash,
        )
        record = result.record
    except BlowUpError as exc:
        record = exc.record
    record.write_csv(out / "record.csv")
    if record.probes:
        _write_probes(out / "probes.csv", record)
    if result is not None:
        snaps = result.snapshots or [result.state]
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for i, st in enumerate(snaps):
            header = f"scenario={sc.hash} t={st.t!r}"
            save_snapshot_csv(snap_dir / f"snapshot_{i:04d}.csv", sc.grid, _snapshot_columns(st, sc.model), header)
    lines = _summary_lines(sc, result, record)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 3 if record.failed else 0


# verify ----------------------------------------------------------------------------


def cmd_verify(args):
    from .verification import run_suite

    checks = run_suite(args.suite)
    print(f"{'':6s}{'suite':11s} {'check':44s} {'value':>12s}  threshold")
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


# sweep -----------------------------------------------------------------------------


def apply_parameter(config, param, value):
    """Copy of ``config`` with ``param`` set to ``value``.

    ``param`` is a closure coefficient name, a dotted key path, or ``tau``,
    which sets every active relaxation time together (``tau0`` follows the
    single-``beta`` rule when shear and bulk viscosity are both present).
    """
    cfg = json.loads(json.dumps(config))
    closure = cfg.setdefault("closure", {})
    if param == "tau":
        nd = len(cfg["grid"]["n"]) if isinstance(cfg["grid"]["n"], list) else int(cfg["grid"].get("ndim", 1))
        kappa, eta, zeta = (float(closure.get(k, 0.0)) for k in ("kappa", "eta", "zeta"))
        if kappa > 0:
            closure["tau1"] = value
        if eta > 0:
            closure["tau2"] = value
        if zeta > 0:
            closure["tau0"] = nd * zeta * value / (2.0 * eta) if eta > 0 else value
        return cfg
    path = ["closure", param] if param in _CLOSURE_KEYS else param.split(".")
    node = cfg
    for key in path[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ScenarioError(f"<sweep>:0: {param}: {key} is not a mapping")
    node[path[-1]] = value
    return cfg


def _cit_config(config):
    cfg = json.loads(json.dumps(config))
    cfg["mode"] = "CIT"
    cfg["closure"] = {k: v for k, v in cfg.get("closure", {}).items() if k in ("kappa", "eta", "zeta")}
    cfg.get("model", {}).pop("frozen_flow", None)
    return cfg


def _sweep_one(payload):
    cfg, source, seed, run_dir = payload
    sc = build_scenario(cfg, source)
    if seed is not None:
        sc.seed = seed
    state = initial_state(sc)
    row = {"status": "ok"}
    try:
        result = run(state, sc.model, sc.control, record_every=1, probes=probe_indices(sc), scenario_hash=sc.hash)
        record = result.record
    except BlowUpError as exc:
        result, record = None, exc.record
        row["status"] = "failed"
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        record.write_csv(Path(run_dir) / "record.csv")
    row["energy_drift"] = diag.energy_audit(record).relative_drift if len(record.time) > 1 else math.nan
    audit = diag.entropy_audit(record)
    row["min_production"] = audit.min_production
    row["ledger_error"] = audit.ledger_error
    final = None
    if result is not None:
        row.update(n_steps=result.n_steps, dt=result.dt, final_time=result.state.t)
        final = (result.state.rho, result.state.s, result.state.u, result.state.t)
    row["front_speed"], row["diffusive"] = _front_speed(sc, record)
    return row, final


def _front_speed(sc, record):
    names = sorted(record.probes)
    if len(names) < 2 or sc.initial.get("kind") != "gaussian-pulse-T" or len(record.time) < 3:
        return math.nan, ""
    center = np.asarray(sc.initial.get("center", [o + 0.5 * L for o, L in zip(sc.grid.origin, sc.grid.lengths)]), dtype=float)
    X = sc.grid.coordinates().reshape(sc.grid.ndim, -1)
    idx = probe_indices(sc)
    dist = [float(np.linalg.norm(X[:, idx[n][1]] - center)) for n in names]
    order = np.argsort(dist)
    est = diag.second_sound_speed(record.time, [record.probes[names[i]] for i in order], [dist[i] for i in order])
    return est.speed, str(est.diffusive).lower()


def _format(v):
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def cmd_sweep(args):
    values = _parse_values(args.values)
    path = resolve(args.scenario)
    base = load_scenario(path)
    configs = [apply_parameter(base.config, args.param, v) for v in values]
    for cfg in configs:
        build_scenario(cfg, str(path))  # validate every variant before any run starts
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [(cfg, str(path), args.seed, str(out / "runs" / f"{i:03d}")) for i, cfg in enumerate(configs)]

    # the CIT distance is the tau -> 0 limit, so it only makes sense when a
    # relaxation time is what varies; the CIT run is then shared by all values
    reference = None
    wants_reference = base.closure.mode.evolves_fluxes and args.param in _RELAXATION_PARAMS
    if wants_reference:
        payloads.append((_cit_config(base.config), str(path), args.seed, str(out / "runs" / "cit")))
    jobs = max(1, min(args.jobs or os.cpu_count() or 1, len(payloads)))
    if jobs == 1:
        outcomes = [_sweep_one(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_one, payloads))
    if wants_reference:
        reference = outcomes.pop()[1]

    rows = []
    for v, (row, final) in zip(values, outcomes):
        row["value"] = v
        row["cit_distance"] = math.nan
        if reference is not None and final is not None and abs(final[3] - reference[3]) < 1e-12:
            sq = (final[0] - reference[0]) ** 2 + np.sum((final[2] - reference[2]) ** 2, axis=0) + (final[1] - reference[1]) ** 2
            row["cit_distance"] = math.sqrt(base.grid.integrate(sq))
        rows.append(row)

    with open(out / "sweep.csv", "w") as fh:
        fh.write(f"# eitflow-sweep v1 scenario={base.hash} param={args.param}\n")
        fh.write(",".join(_SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_format(row.get(c, math.nan)) for c in _SWEEP_COLUMNS) + "\n")
    print(f"{args.param:>10s}  {'cit_distance':>14s}  {'front_speed':>12s}  status")
    for row in rows:
        print(f"{row['value']:10.4g}  {row['cit_distance']:14.6e}  {row['front_speed']:12.6f}  {row['status']}")
    return 0 if all(r["status"] == "ok" for r in rows) else 3


def _parse_values(raw):
    values = []
    for item in raw or []:
        for part in item.replace(",", " ").split():
            try:
                values.append(float(part))
            except ValueError as exc:
                raise ScenarioError(f"<sweep>:0: values: {part!r} is not a number") from exc
    if not values:
        raise ScenarioError("<sweep>:0: values: at least one value is required")
    return values


# entry -----------------------------------------------------------------------------


def _load(name, seed):
    sc = load_scenario(resolve(name))
    if seed is not None:
        sc.seed = seed
    return sc


def build_parser():
    parser = argparse.ArgumentParser(prog="eitflow", description="Extended irreversible thermodynamics fluid solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate one scenario and write record, probes, snapshots and summary")
    p_run.add_argument("--scenario", required=True, help="scenario YAML path or bundled scenario name")
    p_run.add_argument("--out-dir", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="run invariant suites and print a pass/fail table")
    p_ver.add_argument("--suite", default="all", choices=["fields", "thermo", "material", "finite-dim", "balances", "all"])
    p_ver.set_defaults(func=cmd_verify)

    p_sw = sub.add_parser("sweep", help="one run per parameter value, merged into sweep.csv")
    p_sw.add_argument("--scenario", required=True)
    p_sw.add_argument("--param", required=True, help="closure coefficient, dotted key path, or 'tau'")
    p_sw.add_argument("--values", nargs="*", default=[], help="numbers, space or comma separated")
    p_sw.add_argument("--out-dir", required=True)
    p_sw.add_argument("--seed", type=int, default=None)
    p_sw.add_argument("--jobs", type=int, default=0, help="worker processes (default: one per run, capped at CPU count)")
    p_sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ClosureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AdmissibilityError as exc:
        print(f"error: inadmissible initial state: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
