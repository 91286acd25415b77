"""Scenario files: YAML grammar, validation with line numbers, and state setup.

Top-level keys (all optional except ``grid`` and ``mode``)::

    name:      free text
    seed:      integer for randomised initial perturbations
    grid:      {n: int | [int, int], length: float | [..], periodic: bool | [..]}
    mode:      EULER | CIT | EIT | EIT_JS | EIT_HIGHER
    eos:       {K, gamma_ad, c_v, s_ref}
    closure:   {kappa, eta, zeta, tau1, tau2, tau0, gamma1, gamma2,
                order, chain_kappa, chain_tau, t_ref}
    model:     {form: A | B, frozen_flow, nonequilibrium_stresses, hyperdiffusion}
    boundary:  {velocity: noslip | slip}
    initial:   {kind: uniform | gaussian-pulse-T | shear-layer | manufactured, ...}
    control:   {cfl, dt, t_end, n_steps, scheme: RK4 | SSP-RK3}
    output:    {record_every, snapshot_every, probes: {name: {field, x}}}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .constitutive import ClosureError, ClosureSpec, Mode
from .fields import AxisKind, Grid
from .solver import BoundaryPolicy, Model, StepControl, cit_fluxes, initial_fields
from .thermo import EquilibriumEOS


class ScenarioError(ValueError):
    """Invalid scenario file; the message carries ``file:line: key: reason``."""


_SCHEMA = {
    "name": str,
    "seed": int,
    "grid": {"n": (int, list), "ndim": int, "length": (float, int, list), "periodic": (bool, list)},
    "mode": str,
    "eos": {"K": (float, int), "gamma_ad": (float, int), "c_v": (float, int), "s_ref": (float, int)},
    "closure": {
        "kappa": (float, int),
        "eta": (float, int),
        "zeta": (float, int),
        "tau1": (float, int),
        "tau2": (float, int),
        "tau0": (float, int),
        "gamma1": (float, int),
        "gamma2": (float, int),
        "order": int,
        "chain_kappa": list,
        "chain_tau": list,
        "t_ref": (float, int),
    },
    "model": {"form": str, "frozen_flow": bool, "nonequilibrium_stresses": bool, "hyperdiffusion": (float, int)},
    "boundary": {"velocity": str},
    "initial": dict,
    "control": {"cfl": (float, int), "dt": (float, int), "t_end": (float, int), "n_steps": int, "scheme": str},
    "output": {"record_every": int, "snapshot_every": int, "probes": dict},
}

_INITIAL_KEYS = {
    "uniform": {"kind", "rho0", "T0", "u0", "fluxes"},
    "gaussian-pulse-T": {"kind", "rho0", "T0", "amplitude", "width", "center", "fluxes"},
    "shear-layer": {"kind", "rho0", "T0", "U", "thickness", "perturbation", "fluxes"},
    "manufactured": {
        "kind",
        "rho0",
        "T0",
        "rho_amp",
        "T_amp",
        "u_amp",
        "q_amp",
        "sigma_amp",
        "modes",
        "random_phases",
        "fluxes",
    },
}


def _load_with_lines(text, source):
    """Parse YAML keeping the line of every mapping key (1-based)."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 0
        raise ScenarioError(f"{source}:{line}: parse error: {exc}") from exc
    lines = {}

    def convert(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = k.value
                sub = f"{path}.{key}" if path else key
                if key in out:
                    raise ScenarioError(f"{source}:{k.start_mark.line + 1}: {sub}: duplicate key")
                lines[sub] = k.start_mark.line + 1
                out[key] = convert(v, sub)
                lines[sub] = k.start_mark.line + 1
            return out
        if isinstance(node, yaml.SequenceNode):
            return [convert(v, f"{path}[{i}]") for i, v in enumerate(node.value)]
        return yaml.safe_load(yaml.serialize(node))

    if root is None:
        raise ScenarioError(f"{source}:1: empty scenario")
    data = convert(root, "")
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}:1: top level must be a mapping")
    return data, lines


@dataclass
class Scenario:
    name: str
    config: dict
    grid: Grid
    eq: EquilibriumEOS
    closure: ClosureSpec
    model: Model
    control: StepControl
    initial: dict
    output: dict
    seed: int = 0
    source: str = "<string>"
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self):
        canon = json.dumps(self.config, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_closure(self, **changes):
        cfg = json.loads(json.dumps(self.config))
        cfg.setdefault("closure", {}).update(changes)
        return build_scenario(cfg, self.source)


def _fail(source, lines, path, message):
    line = lines.get(path)
    while line is None and "." in path:
        path_up = path.rsplit(".", 1)[0]
        line = lines.get(path_up)
        if line is not None:
            break
        path = path_up
    raise ScenarioError(f"{source}:{line or 1}: {path}: {message}")


def _check_schema(data, schema, source, lines, prefix=""):
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            _fail(source, lines, path, f"unknown key (allowed: {', '.join(sorted(schema))})")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                _fail(source, lines, path, "expected a mapping")
            _check_schema(value, expected, source, lines, path)
            continue
        types = expected if isinstance(expected, tuple) else (expected,)
        if isinstance(value, bool) and bool not in types:
            _fail(source, lines, path, f"expected {'/'.join(t.__name__ for t in types)}, got bool")
        if not isinstance(value, types):
            _fail(source, lines, path, f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


def _per_axis(value, ndim, caster):
    if isinstance(value, list):
        if len(value) != ndim:
            raise ValueError(f"needs {ndim} entries")
        return tuple(caster(v) for v in value)
    return (caster(value),) * ndim


def build_scenario(data, source="<string>", lines=None):
    lines = lines or {}
    _check_schema(data, _SCHEMA, source, lines)
    for required in ("grid", "mode"):
        if required not in data:
            _fail(source, lines, required, "missing required key")

    gcfg = data["grid"]
    if "n" not in gcfg:
        _fail(source, lines, "grid", "grid.n is required")
    n = gcfg["n"]
    ndim = len(n) if isinstance(n, list) else int(gcfg.get("ndim", 1))
    if ndim not in (1, 2):
        _fail(source, lines, "grid.n", "only 1 or 2 dimensions are supported")
    try:
        shape = _per_axis(n, ndim, int)
        length = _per_axis(gcfg.get("length", 1.0), ndim, float)
        periodic = _per_axis(gcfg.get("periodic", True), ndim, bool)
    except ValueError as exc:
        _fail(source, lines, "grid", str(exc))
    try:
        grid = Grid(
            shape,
            tuple(L / m for L, m in zip(length, shape)),
            tuple(AxisKind.PERIODIC if p else AxisKind.WALL for p in periodic),
        )
    except ValueError as exc:
        _fail(source, lines, "grid", str(exc))

    try:
        mode = Mode(data["mode"])
    except ValueError:
        _fail(source, lines, "mode", f"unknown mode {data['mode']!r} (allowed: {', '.join(m.value for m in Mode)})")

    try:
        eq = EquilibriumEOS(**{k: float(v) for k, v in data.get("eos", {}).items()})
    except ValueError as exc:
        _fail(source, lines, "eos", str(exc))

    ccfg = dict(data.get("closure", {}))
    for key in ("chain_kappa", "chain_tau"):
        if key in ccfg:
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in ccfg[key]):
                _fail(source, lines, f"closure.{key}", "expected a list of numbers")
    closure = ClosureSpec(mode=mode, **ccfg)
    try:
        closure.validate(ndim)
    except ClosureError as exc:
        msg = str(exc)
        named = next((k for k in ccfg if msg.startswith(k) or f" {k} " in f" {msg} "), None)
        _fail(source, lines, f"closure.{named}" if named else ("closure" if "closure" in data else "mode"), msg)

    mcfg = data.get("model", {})
    if mcfg.get("form", "A") not in ("A", "B"):
        _fail(source, lines, "model.form", "must be A or B")
    bcfg = data.get("boundary", {})
    if bcfg.get("velocity", "noslip") not in ("noslip", "slip"):
        _fail(source, lines, "boundary.velocity", "must be noslip or slip")
    boundary = BoundaryPolicy(**bcfg)
    model = Model(grid, closure, eq, boundary, **mcfg)
    if model.hyperdiffusion < 0:
        _fail(source, lines, "model.hyperdiffusion", "must be nonnegative")

    ctl = dict(data.get("control", {}))
    if "t_end" not in ctl and "n_steps" not in ctl:
        _fail(source, lines, "control" if "control" in data else "mode", "control needs t_end or n_steps")
    if ctl.get("scheme", "RK4") not in ("RK4", "SSP-RK3"):
        _fail(source, lines, "control.scheme", "must be RK4 or SSP-RK3")
    for key in ("cfl", "dt", "t_end"):
        if key in ctl and not ctl[key] > 0:
            _fail(source, lines, f"control.{key}", "must be positive")
    if "n_steps" in ctl and ctl["n_steps"] < 1:
        _fail(source, lines, "control.n_steps", "must be at least 1")
    control = StepControl(
        cfl=float(ctl.get("cfl", 0.2)),
        dt=None if "dt" not in ctl else float(ctl["dt"]),
        t_end=None if "t_end" not in ctl else float(ctl["t_end"]),
        n_steps=ctl.get("n_steps"),
        scheme=ctl.get("scheme", "RK4"),
    )

    icfg = data.get("initial", {"kind": "uniform"})
    kind = icfg.get("kind", "uniform")
    if kind not in _INITIAL_KEYS:
        _fail(source, lines, "initial.kind", f"unknown kind {kind!r} (allowed: {', '.join(_INITIAL_KEYS)})")
    for key in icfg:
        if key not in _INITIAL_KEYS[kind]:
            _fail(source, lines, f"initial.{key}", f"not a parameter of {kind!r}")
    if icfg.get("fluxes", "zero") not in ("zero", "cit"):
        _fail(source, lines, "initial.fluxes", "must be zero or cit")
    if kind == "shear-layer" and ndim != 2:
        _fail(source, lines, "initial.kind", "shear-layer needs a 2D grid")
    for key in ("rho0", "T0", "width", "thickness"):
        if key in icfg and not (isinstance(icfg[key], (int, float)) and icfg[key] > 0):
            _fail(source, lines, f"initial.{key}", "must be a positive number")

    ocfg = dict(data.get("output", {}))
    for name, spec in ocfg.get("probes", {}).items():
        path = f"output.probes.{name}"
        if not isinstance(spec, dict) or set(spec) - {"field", "x"} or "x" not in spec:
            _fail(source, lines, path, "probe needs {field, x}")
        if spec.get("field", "T") not in ("T", "rho", "s", "u", "q"):
            _fail(source, lines, f"{path}.field", "must be one of T, rho, s, u, q")
        if len(np.atleast_1d(spec["x"])) != ndim:
            _fail(source, lines, f"{path}.x", f"needs {ndim} coordinates")
    for key in ("record_every", "snapshot_every"):
        if key in ocfg and ocfg[key] < 0:
            _fail(source, lines, f"output.{key}", "must be nonnegative")

    return Scenario(
        name=data.get("name", Path(source).stem),
        config=data,
        grid=grid,
        eq=eq,
        closure=closure,
        model=model,
        control=control,
        initial=icfg,
        output=ocfg,
        seed=int(data.get("seed", 0)),
        source=source,
        lines=lines,
    )


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}:0: cannot read: {exc}") from exc
    data, lines = _load_with_lines(text, str(path))
    return build_scenario(data, str(path), lines)


def parse_scenario(text, source="<string>"):
    data, lines = _load_with_lines(text, source)
    return build_scenario(data, source, lines)


def bundled_names():
    root = resources.files("eitflow") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_path(name):
    root = resources.files("eitflow") / "scenarios"
    return Path(str(root / f"{name}.yaml"))


def resolve(path_or_name):
    p = Path(path_or_name)
    if p.exists():
        return p
    if path_or_name in bundled_names():
        return bundled_path(path_or_name)
    raise ScenarioError(f"{path_or_name}:0: no such file or bundled scenario")


# initial states ------------------------------------------------------------------


def initial_state(sc, seed=None):
    """Build the starting :class:`FieldSet` from the ``initial`` block."""
    g = sc.grid
    m = sc.model
    cfg = sc.initial
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    kind = cfg.get("kind", "uniform")
    X = g.coordinates()
    rho0 = float(cfg.get("rho0", 1.0))
    T0 = float(cfg.get("T0", 1.0))
    rho = np.full(g.shape, rho0)
    T = np.full(g.shape, T0)
    u = np.zeros((g.ndim,) + g.shape)
    q = sigma = None
    center_default = [o + 0.5 * L for o, L in zip(g.origin, g.lengths)]

    if kind == "uniform":
        u0 = cfg.get("u0", [0.0] * g.ndim)
        for a in range(g.ndim):
            u[a] = float(u0[a])
    elif kind == "gaussian-pulse-T":
        c = np.asarray(cfg.get("center", center_default), dtype=float).reshape((g.ndim,) + (1,) * g.ndim)
        r2 = np.sum((X - c) ** 2, axis=0)
        T = T0 * (1.0 + float(cfg.get("amplitude", 0.01)) * np.exp(-0.5 * r2 / float(cfg.get("width", 0.05)) ** 2))
    elif kind == "shear-layer":
        Ly = g.lengths[1]
        y = X[1] - g.origin[1]
        d = float(cfg.get("thickness", 0.05 * Ly))
        U = float(cfg.get("U", 0.1))
        u[0] = U * (np.tanh((y - 0.25 * Ly) / d) - np.tanh((y - 0.75 * Ly) / d) - 1.0)
        eps = float(cfg.get("perturbation", 0.0))
        if eps:
            kx = 2 * np.pi / g.lengths[0]
            phase = rng.uniform(0, 2 * np.pi)
            u[1] = eps * U * np.sin(kx * X[0] + phase)
    elif kind == "manufactured":
        modes = int(cfg.get("modes", 1))
        random_phases = bool(cfg.get("random_phases", False))
        ks = [2 * np.pi * modes / L for L in g.lengths]

        def wave(i):
            ph = rng.uniform(0, 2 * np.pi, g.ndim) if random_phases else 0.37 * (i + 1) * np.arange(1, g.ndim + 1)
            out = np.ones(g.shape)
            for a in range(g.ndim):
                out = out * np.cos(ks[a] * X[a] + ph[a]) if (i + a) % 2 == 0 else out * np.sin(ks[a] * X[a] + ph[a])
            return out

        rho = rho0 * (1.0 + float(cfg.get("rho_amp", 0.0)) * wave(0))
        T = T0 * (1.0 + float(cfg.get("T_amp", 0.0)) * wave(1))
        ua = float(cfg.get("u_amp", 0.0))
        for a in range(g.ndim):
            u[a] = ua * wave(2 + a)
        qa = float(cfg.get("q_amp", 0.0))
        if qa:
            q = np.stack([qa * wave(5 + a) for a in range(g.ndim)])
        sa = float(cfg.get("sigma_amp", 0.0))
        if sa:
            ncomp = 1 if g.ndim == 1 else 3
            sigma = np.stack([sa * wave(8 + c) for c in range(ncomp)])
    s = sc.eq.entropy_for_temperature(rho, T)
    st = initial_fields(m, rho, s, u)
    if cfg.get("fluxes", "zero") == "cit" and m.evolves_fluxes:
        q_cit, sigma_cit = cit_fluxes(st, m)
        q, sigma = q_cit, sigma_cit
        if not m.closure.heat_active:
            q = None
    return initial_fields(m, rho, s, u, sigma if m.carries_sigma else None, q if m.carries_q else None)


def probe_indices(sc):
    """Map probe names to ``(field, flat cell index)`` nearest to each position."""
    g = sc.grid
    X = g.coordinates().reshape(g.ndim, -1)
    out = {}
    for name, spec in sc.output.get("probes", {}).items():
        pos = np.asarray(np.atleast_1d(spec["x"]), dtype=float).reshape(g.ndim, 1)
        idx = int(np.argmin(np.sum((X - pos) ** 2, axis=0)))
        out[name] = (spec.get("field", "T"), idx)
    return out


__all__ = [
    "Scenario",
    "ScenarioError",
    "build_scenario",
    "bundled_names",
    "bundled_path",
    "initial_state",
    "load_scenario",
    "parse_scenario",
    "probe_indices",
    "resolve",
]
