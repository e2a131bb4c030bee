"""Command-line front end: run experiments from YAML definition files.

Every run writes its artifacts plus ``manifest.json`` (sha256 of each file,
the seed and the config hash) into the output directory.  Exit status 0 on
success, 2 on an invalid config, 3 when a compute guard trips.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .spacetime.fields import SCALAR, VECTOR, FieldSample
from .spacetime.grid import Direction, SpaceTimeGrid
from .spacetime.io import write_field

SCHEMA_VERSION = 1
log = logging.getLogger("bwlab")


class ConfigError(ValueError):
    """Invalid experiment definition; ``line`` is 1-based when known."""

    def __init__(self, msg: str, line: int | None = None, key: str | None = None):
        self.line, self.key = line, key
        where = f"line {line}" if line is not None else "config"
        super().__init__(f"{where}: {key + ': ' if key else ''}{msg}")


# schema -----------------------------------------------------------------------
# A schema is a dict of key -> (type, required) where type is a type name or a
# nested dict.  Field specs are numbers, bump mappings or lists of bumps.

BUMP = {"amplitude": ("float", False), "center": ("floats", True), "radius": ("floats", True),
        "power": ("int", False)}
GRID = {"n": ("int", True), "nx": ("int", True), "T": ("float", False), "L": ("float", False),
        "nt": ("int", False), "cfl": ("float", False)}
COEFFS = {"A": ("field", False), "B": ("field", False), "C": ("fields", False), "q": ("field", False)}
DIRECTION = {"angle": ("float", False), "omega": ("floats", False), "epsilon": ("float", False)}
SWEEP = {"directions": ("int", True), "radius": ("float", True), "count": ("int", True),
         "h": ("floats", False)}

COMMON = {"schema": ("int", True), "command": ("str", True), "grid": (GRID, True), "seed": ("int", False),
          "label": ("str", False)}
COMMANDS = {
    "solve": {"coefficients": (COEFFS, False), "initial": ("field", False), "record": ("str", False)},
    "go": {"coefficients": (COEFFS, False), "direction": (DIRECTION, False), "eta": ("floats", False),
           "weight": ("str", False), "sign": ("str", False), "h": ("floats", False), "guard": ("float", False)},
    "carleman": {"coefficients": (COEFFS, False), "direction": (DIRECTION, False), "h": ("floats", False),
                 "eps": ("float", False), "corpus": ("int", False), "method": ("str", False),
                 "guard": ("float", False)},
    "lrt": {"field": ("field", True), "sweep": (SWEEP, True), "box": ("boxes", True), "shape": ("int", True),
            "lam": ("float", False)},
    "recover": {"background": (COEFFS, False), "difference": (COEFFS, True), "mode": ("str", False),
                "sweep": (SWEEP, True), "box": ("boxes", True), "shape": ("int", True), "lam": ("float", False),
                "prior": ("str", False), "stages": ("strs", False), "omega0": ("floats", False),
                "margin": ("float", False), "guard": ("float", False)},
}
CHOICES = {"command": tuple(COMMANDS), "weight": ("none", "linear"), "sign": ("growing", "decaying"),
           "mode": ("oracle", "data"), "record": ("full", "traces"), "method": ("stencil", "expansion"),
           "prior": ("identity", "gradient")}


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, kind: str, key: str):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"expected a {kind}", _line(node), key)
    val = yaml.safe_load(node.value) if node.tag != "tag:yaml.org,2002:str" else node.value
    if kind == "int":
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError("expected an integer", _line(node), key)
        return val
    if kind == "float":
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError("expected a number", _line(node), key)
        return float(val)
    if kind == "str":
        if not isinstance(val, str):
            raise ConfigError("expected a string", _line(node), key)
        if key in CHOICES and val not in CHOICES[key]:
            raise ConfigError(f"must be one of {', '.join(CHOICES[key])}", _line(node), key)
        return val
    raise AssertionError(kind)


def _seq(node, key: str):
    if not isinstance(node, yaml.SequenceNode):
        raise ConfigError("expected a list", _line(node), key)
    return node.value


def _field(node, key: str):
    if isinstance(node, yaml.ScalarNode):
        return _scalar(node, "float", key)
    if isinstance(node, yaml.MappingNode):
        return [_mapping(node, BUMP, key)]
    return [_mapping(item, BUMP, key) for item in _seq(node, key)]


def _value(node, kind, key: str):
    if isinstance(kind, dict):
        return _mapping(node, kind, key)
    if kind in ("int", "float", "str"):
        return _scalar(node, kind, key)
    if kind == "floats":
        return [_scalar(x, "float", key) for x in _seq(node, key)]
    if kind == "strs":
        return [_scalar(x, "str", key) for x in _seq(node, key)]
    if kind == "field":
        return _field(node, key)
    if kind == "fields":
        return [_field(x, key) for x in _seq(node, key)]
    if kind == "boxes":
        out = []
        for x in _seq(node, key):
            pair = [_scalar(y, "float", key) for y in _seq(x, key)]
            if len(pair) != 2 or pair[1] <= pair[0]:
                raise ConfigError("box entries are [lo, hi] with lo < hi", _line(x), key)
            out.append(tuple(pair))
        return out
    raise AssertionError(kind)


def _mapping(node, schema: dict, where: str):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("expected a mapping", _line(node), where)
    out = {}
    for knode, vnode in node.value:
        key = knode.value
        if key not in schema:
            raise ConfigError("unknown key", _line(knode), key)
        if key in out:
            raise ConfigError("duplicate key", _line(knode), key)
        out[key] = _value(vnode, schema[key][0], key)
    for key, (_, req) in schema.items():
        if req and key not in out:
            raise ConfigError("missing required key", _line(node), key)
    return out


def parse_config(text: str) -> dict:
    """Validate a YAML experiment definition against the schema; raises ConfigError."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax: {getattr(exc, 'problem', exc)}", None if mark is None else mark.line + 1)
    if root is None:
        raise ConfigError("empty config")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", _line(root))
    cmd = None
    for knode, vnode in root.value:
        if knode.value == "command":
            cmd = _scalar(vnode, "str", "command")
    if cmd is None:
        raise ConfigError("missing required key", _line(root), "command")
    cfg = _mapping(root, {**COMMON, **COMMANDS[cmd]}, "config")
    if cfg["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {cfg['schema']} (expected {SCHEMA_VERSION})",
                          _line(root), "schema")
    _check_dims(cfg, root)
    return cfg


def _check_dims(cfg: dict, root):
    n = cfg["grid"]["n"]
    if n not in (1, 2, 3):
        raise ConfigError("n must be 1, 2 or 3", _line(root), "n")

    def bumps(spec, key):
        if isinstance(spec, list):
            for b in spec:
                if len(b["center"]) != n + 1 or len(b["radius"]) != n + 1:
                    raise ConfigError(f"center and radius need {n + 1} entries (t, x1..x{n})", None, key)
    for sect in ("coefficients", "background", "difference"):
        c = cfg.get(sect)
        if c is None:
            continue
        for k in ("A", "B", "q"):
            if k in c:
                bumps(c[k], k)
        if "C" in c:
            if len(c["C"]) != n:
                raise ConfigError(f"C needs {n} components", None, "C")
            for comp in c["C"]:
                bumps(comp, "C")
    for k in ("field", "initial"):
        if k in cfg:
            bumps(cfg[k], k)
    if cfg["command"] in ("go", "carleman") and "h" in cfg and len(cfg["h"]) < 3:
        raise ConfigError("h needs at least 3 values", None, "h")
    if "box" in cfg and len(cfg["box"]) != n + 1:
        raise ConfigError(f"box needs {n + 1} intervals", None, "box")


# field construction -----------------------------------------------------------

def _bump(spec: dict):
    amp = spec.get("amplitude", 1.0)
    p = spec.get("power", 4)

    def fn(*coords):
        out = amp
        for y, c, r in zip(coords, spec["center"], spec["radius"]):
            z = (y - c) / r
            out = out * np.where(np.abs(z) < 1, np.cos(0.5 * np.pi * z) ** p, 0.0)
        return out
    return fn


def field_function(spec):
    """Callable f(t, x1, ..) for a field spec (constant or sum of cos^p bumps)."""
    if spec is None:
        return None
    if isinstance(spec, float):
        return lambda *c: np.full(np.broadcast(*c).shape, spec)
    parts = [_bump(b) for b in spec]
    return lambda *c: sum(f(*c) for f in parts)


def make_grid(g: dict) -> SpaceTimeGrid:
    return SpaceTimeGrid.uniform(g["n"], g.get("T", 1.0), g.get("L", 1.0), g["nx"], g.get("nt"), g.get("cfl", 0.5))


def make_coeffs(grid: SpaceTimeGrid, spec: dict | None):
    from .solver import CoefficientSet
    spec = spec or {}
    C = None if "C" not in spec else [field_function(c) for c in spec["C"]]
    return CoefficientSet.from_functions(grid, field_function(spec.get("A")), field_function(spec.get("B")), C,
                                         field_function(spec.get("q")))


def make_direction(spec: dict | None, n: int) -> Direction:
    spec = spec or {}
    eps = spec.get("epsilon", 0.3)
    if "omega" in spec:
        return Direction.from_vector(spec["omega"], eps)
    if n == 2:
        return Direction.from_angle(spec.get("angle", 0.0), eps)
    return Direction(tuple(np.eye(n)[0]), eps)


# output -----------------------------------------------------------------------

class Output:
    """Output directory that remembers every file it wrote."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(name)
        return p

    def field(self, name: str, values: np.ndarray, grid: SpaceTimeGrid):
        rank = SCALAR if values.ndim == grid.n + 1 else VECTOR
        write_field(self.path(name), FieldSample(grid, values, rank))

    def json(self, name: str, obj):
        self.path(name).write_text(json.dumps(_plain(obj), indent=1, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows):
        lines = [",".join(header)] + [",".join(_fmt(v) for v in r) for r in rows]
        self.path(name).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating, int, np.integer)) and not isinstance(v, bool) \
        else str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_manifest(out: Output, cfg_text: str, seed: int, command: str) -> Path:
    files = []
    for name in sorted(set(out.files)):
        data = (out.root / name).read_bytes()
        files.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    man = {"command": command, "seed": seed, "schema": SCHEMA_VERSION,
           "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(), "files": files}
    p = out.root / "manifest.json"
    p.write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
    return p


def verify_manifest(root) -> bool:
    """True when every listed file exists with the recorded hash."""
    root = Path(root)
    man = json.loads((root / "manifest.json").read_text())
    return all(hashlib.sha256((root / f["file"]).read_bytes()).hexdigest() == f["sha256"] for f in man["files"])


# commands ---------------------------------------------------------------------

def run_solve(cfg: dict, out: Output, ctx: dict):
    from .solver import IBVPData, energy_report, solve_ibvp
    grid = make_grid(cfg["grid"])
    coeffs = make_coeffs(grid, cfg.get("coefficients"))
    data = IBVPData.zeros(grid)
    init = field_function(cfg.get("initial"))
    if init is not None:
        m = grid.mesh()
        t0 = np.full((1,) * (grid.n + 1), grid.t0)
        psi0 = np.broadcast_to(init(t0, *m[1:]), (1,) + grid.nx)[0].astype(float)
        data = IBVPData(data.f, data.g, (psi0,) + data.psi[1:])
    hist = solve_ibvp(coeffs, data, record="full")
    out.field("u.bwlab1", hist.u, grid)
    out.field("w.bwlab1", hist.w, grid)
    rep = energy_report(hist, data)
    out.csv("energy.csv", ["t"] + sorted(rep["series"]),
            [[grid.t[k]] + [rep["series"][s][k] for s in sorted(rep["series"])] for k in range(grid.nt)])
    out.json("solve_report.json", {"left": rep["left"], "right": rep["right"], "ratio": rep["ratio"],
                                   "events": hist.events, "grid": grid.describe()})


def run_go(cfg: dict, out: Output, ctx: dict):
    from .go import (DECAYING, GROWING, FrequencyVector, adjoint_coefficients, build_amplitudes,
                     verify_residual_order)
    grid = make_grid(cfg["grid"])
    coeffs = make_coeffs(grid, cfg.get("coefficients"))
    d = make_direction(cfg.get("direction"), grid.n)
    sign = DECAYING if cfg.get("sign", "growing") == "decaying" else GROWING
    op = adjoint_coefficients(coeffs) if sign == DECAYING else coeffs
    xi = None if "eta" not in cfg else FrequencyVector.on_hyperplane(cfg["eta"], d)
    weight = None if cfg.get("weight", "none") == "none" else cfg["weight"]
    hs = ctx.get("h_sweep") or cfg.get("h") or [0.4, 0.2, 0.1]
    guard = cfg.get("guard", 10.0)
    ans = build_amplitudes(op, d, xi, weight, sign)
    full = verify_residual_order(op, ans, hs, True, guard)
    lead = verify_residual_order(op, ans, hs, False, guard)
    out.csv("residual.csv", ["h", "R_full", "R_leading"], zip(full["h"], full["R"], lead["R"]))
    out.json("go_report.json", {"slope_full": full["slope"], "slope_leading": lead["slope"], "h": full["h"],
                                "omega": list(d.omega), "sign": sign, "weight": weight,
                                "xi": full["xi"], "transport_defect": ans.meta.get("rhs_defect")})


def run_carleman(cfg: dict, out: Output, ctx: dict):
    from .carleman import boundary_samples, corpus, probe_boundary_estimate, probe_interior_estimate
    grid = make_grid(cfg["grid"])
    coeffs = make_coeffs(grid, cfg.get("coefficients"))
    d = make_direction(cfg.get("direction"), grid.n)
    hs = cfg.get("h") or [0.4, 0.3, 0.2, 0.1]
    guard = cfg.get("guard", 10.0)
    samples = corpus(grid, ctx["seed"], cfg.get("corpus", 3))
    inner = probe_interior_estimate(samples, coeffs, d, hs, cfg.get("eps"), cfg.get("method", "stencil"), guard)
    bnd = probe_boundary_estimate(boundary_samples(grid), coeffs, d, hs, guard=guard)
    inner.to_csv(out.path("interior.csv"))
    bnd.to_csv(out.path("boundary.csv"))
    out.json("carleman_report.json", {"interior_passed": inner.passed, "boundary_passed": bnd.passed,
                                      "interior_C": inner.C, "boundary_C": bnd.C,
                                      "signs": {k: list(v) for k, v in bnd.notes["signs"].items()}})


def _sweep(cfg: dict, seed: int, n: int, hs_default=(0.4, 0.3, 0.2)):
    from .recon import FrequencySweep
    s = cfg["sweep"]
    return FrequencySweep.disk(s["directions"], s["radius"], s["count"], tuple(s.get("h", hs_default)), seed, n)


def run_lrt(cfg: dict, out: Output, ctx: dict):
    from .raytransform import fourier_slice, invert_scalar, write_slices
    from .recon import interior_rel_error
    grid = make_grid(cfg["grid"])
    f = FieldSample.from_function(grid, field_function(cfg["field"]))
    sw = _sweep(cfg, ctx["seed"], grid.n)
    slices = [fourier_slice(f, d, sw.xis(d)) for d in sw.directions]
    write_slices(out.path("slices.csv"), slices)
    rec = invert_scalar(slices, cfg["box"], cfg["shape"], cfg.get("lam", 1e-6))
    vals = rec.sample_on(grid)
    out.field("inverse.bwlab1", vals, grid)
    rep = {k: v for k, v in rec.report.items() if not isinstance(v, (list, dict))}
    rep["rel_l2_error"] = interior_rel_error(vals, f.values, grid.n, 2)
    out.json("lrt_report.json", rep)


def run_recover(cfg: dict, out: Output, ctx: dict):
    from .recon import DataSource, OracleSource, StagedRecovery
    grid = make_grid(cfg["grid"])
    c1 = make_coeffs(grid, cfg.get("background"))
    delta = make_coeffs(grid, cfg["difference"])
    guard = cfg.get("guard", 10.0)
    if cfg.get("mode", "oracle") == "oracle":
        src = OracleSource(c1, c1 + delta, guard)
    else:
        om0 = cfg.get("omega0")
        src = DataSource(c1, c1 + delta, None if om0 is None else tuple(om0), cfg.get("margin", 0.6), guard=guard,
                         null_phase=True)
    sr = StagedRecovery(src, _sweep(cfg, ctx["seed"], grid.n), cfg["box"], cfg["shape"], delta,
                        cfg.get("lam", 1e-8), jobs=ctx["jobs"], prior=cfg.get("prior", "identity"))
    wanted = cfg.get("stages", ["BC", "A", "q"])
    summary = {}
    for stage in ("BC", "A", "q"):
        if stage not in wanted:
            sr.declare_equal(stage)
            continue
        log.info("stage %s", stage)
        res = getattr(sr, f"recover_{stage}")()
        for name, vals in res.fields.items():
            if name in ("A", "B", "C", "q", "Phi"):
                out.field(f"{name}.bwlab1", np.asarray(vals, float), grid)
        res.to_csv(out.path(f"stage_{stage}.csv"))
        summary[stage] = res.errors
    out.json("recover_report.json", {"mode": src.mode, "errors": summary, "hs": list(sr.sweep.hs)})


RUNNERS = {"solve": run_solve, "go": run_go, "carleman": run_carleman, "lrt": run_lrt, "recover": run_recover}


def _guard_errors() -> tuple:
    from .carleman import ProbeError
    from .go import GuardError
    from .recon import CoverageError, StageOrderError
    from .solver import SolverError
    return (GuardError, SolverError, ProbeError, CoverageError, StageOrderError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bwlab", description="Run a bi-wave experiment from a YAML definition.")
    p.add_argument("command", choices=sorted(RUNNERS), help="experiment kind (must match the config)")
    p.add_argument("--config", required=True, help="YAML experiment definition")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker count (default: BWLAB_JOBS or CPU count)")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed (default 0)")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--h-sweep", default=None, help="comma-separated h values (go)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
        if cfg["command"] != args.command:
            raise ConfigError(f"config is for '{cfg['command']}', not '{args.command}'", None, "command")
        hs = None
        if args.h_sweep:
            try:
                hs = [float(v) for v in args.h_sweep.split(",")]
            except ValueError:
                raise ConfigError(f"bad --h-sweep value {args.h_sweep!r}")
            if len(hs) < 3:
                raise ConfigError("--h-sweep needs at least 3 values")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    jobs = args.jobs or int(os.environ.get("BWLAB_JOBS", 0) or 0) or (os.cpu_count() or 1)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    ctx = {"jobs": jobs, "seed": seed, "h_sweep": hs}
    out = Output(args.out)
    try:
        RUNNERS[args.command](cfg, out, ctx)
    except _guard_errors() as exc:
        print(f"guard: {type(exc).__name__}: {exc}", file=sys.stderr)
        write_manifest(out, text, seed, args.command)
        return 3
    write_manifest(out, text, seed, args.command)
    log.info("wrote %d files to %s", len(out.files), out.root)
    return 0


if __name__ == "__main__":
    sys.exit(main())
