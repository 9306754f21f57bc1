"""Experiment runner binding the modules behind reproducible configs.

Subcommands: rays, doi, linear, solve, limit, verify. Each run validates
its config against a schema, writes the resolved config next to the
outputs, and emits canonical JSON so identical config+seed runs produce
byte-identical reports.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import escape, linear, nonlinear, rays
from .coeffs import (REGISTRY, freeze_at_state, make_coefficients,
                     validate_assumptions, validate_frozen, validate_metric)
from .grid import (CubePartition, Grid, StateField, dump_field, sobolev_norm,
                   wave_packet)
from .reports import canonical_json, write_json


class ConfigError(ValueError):
    pass


METRICS = {
    "flat": rays.flat_metric,
    "bump": rays.bump_metric,
    "trap": rays.trap_metric,
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1, "maxItems": 3}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["grid"],
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "n_points", "half_width"],
            "properties": {
                "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                "n_points": {"type": "integer", "minimum": 8},
                "half_width": _POS,
            },
        },
        "family": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
            },
        },
        "metric": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": sorted(METRICS)},
                "params": {"type": "object"},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "center": _VEC,
                "carrier": _VEC,
                "width": _POS,
                "amplitude": _NUM,
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "rays": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "escape_radius": _POS,
                "s_budget": _POS,
            },
        },
        "doi": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "R_cut": _POS,
                "centers": {"type": "array", "items": _VEC},
                "pass_cap": _POS,
                "x_extent": _POS,
            },
        },
        "linear": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"type": "number", "minimum": 0},
                "T": _POS,
                "dt": _POS,
                "mu0": {"type": "integer", "minimum": 0},
                "store_every": {"type": "integer", "minimum": 1},
                "filter_frac": {"type": "number",
                                "exclusiveMinimum": 0, "maximum": 1},
                "dump_fields": {"type": "boolean"},
            },
        },
        "solve": {
            "type": "object",
            "additionalProperties": False,
            "required": ["s", "M0", "eps", "T_window", "dt", "T_target"],
            "properties": {
                "s": _POS,
                "M0": _POS,
                "eps": _POS,
                "T_window": _POS,
                "dt": _POS,
                "T_target": _POS,
                "dump_every": {"type": "integer", "minimum": 1},
            },
        },
        "limit": {
            "type": "object",
            "additionalProperties": False,
            "required": ["s", "M0", "eps_list", "T_star", "dt"],
            "properties": {
                "s": _POS,
                "M0": _POS,
                "eps_list": {"type": "array", "items": _POS, "minItems": 2},
                "T_star": _POS,
                "dt": _POS,
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "check_nontrapping": {"type": "boolean"},
                "ray_budget": _POS,
            },
        },
    },
}


def load_config(path) -> dict:
    import json

    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return cfg


def _require(cfg: dict, key: str) -> dict:
    if key not in cfg:
        raise ConfigError(f"this subcommand needs a {key!r} config block")
    return cfg[key]


def _grid(cfg: dict) -> Grid:
    g = cfg["grid"]
    return Grid(g["dim"], g["n_points"], g["half_width"])


def _metric(cfg: dict) -> rays.MetricField:
    spec = _require(cfg, "metric")
    params = dict(spec.get("params", {}))
    name = spec["name"]
    if name == "trap":
        m = METRICS[name](**params)
        if cfg["grid"]["dim"] != 2:
            raise ConfigError("the trap metric is two-dimensional")
        return m
    return METRICS[name](cfg["grid"]["dim"], **params)


def _family(cfg: dict):
    spec = _require(cfg, "family")
    try:
        return make_coefficients(spec["name"], cfg["grid"]["dim"],
                                 **spec.get("params", {}))
    except KeyError as exc:
        raise ConfigError(
            f"unknown coefficient family {spec['name']!r}; "
            f"known: {sorted(REGISTRY)}") from exc
    except TypeError as exc:
        raise ConfigError(f"bad family parameters: {exc}") from exc


def _data(cfg: dict, grid: Grid) -> StateField:
    d = cfg.get("data", {})
    center = d.get("center", [0.0] * grid.dim)
    carrier = d.get("carrier", [2.0] * grid.dim)
    if len(center) != grid.dim or len(carrier) != grid.dim:
        raise ConfigError("data center/carrier length must match grid dim")
    return wave_packet(grid, center=tuple(center), carrier=tuple(carrier),
                       width=d.get("width", 2.0),
                       amplitude=d.get("amplitude", 0.01))


def _write_resolved(out: Path, cfg: dict, sub: str, seed: int,
                    threads: int, overrides: dict) -> None:
    resolved = dict(cfg)
    resolved["_run"] = {"subcommand": sub, "seed": seed, "threads": threads,
                       "overrides": overrides}
    write_json(out / "resolved_config.json", resolved)


# ---------------------------------------------------------------------------
# subcommand runners

def run_rays(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    metric = _metric(cfg)
    block = cfg.get("rays", {})
    radius = block.get("escape_radius", grid.half_width / 2.0)
    budget = block.get("s_budget", 40.0)
    X0, Xi0 = rays.default_ray_sample(metric.dim, radius)
    report = rays.classify_nontrapping(metric, X0, Xi0,
                                       escape_radius=radius, s_budget=budget)
    n = metric.dim
    with open(out / "rays.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        head = [f"x0_{i}" for i in range(n)] + [f"xi0_{i}" for i in range(n)]
        w.writerow(head + ["escaped_fwd", "s_exit_fwd",
                           "escaped_bwd", "s_exit_bwd", "h_drift"])
        for r in report.records:
            row = [f"{v:.12g}" for v in np.atleast_1d(r.x0)]
            row += [f"{v:.12g}" for v in np.atleast_1d(r.xi0)]
            row += [int(r.escaped_fwd), f"{r.s_exit_fwd:.12g}",
                    int(r.escaped_bwd), f"{r.s_exit_bwd:.12g}",
                    f"{r.h_drift:.12g}"]
            w.writerow(row)
    write_json(out / "rays_report.json", {
        "metric": report.metric_label,
        "escape_radius": report.escape_radius,
        "s_budget": report.s_budget,
        "n_rays": len(report.records),
        "nontrapping_on_sample": report.nontrapping_on_sample,
        "n_undetermined": report.n_undetermined,
        "worst_exit": report.worst_exit,
        "max_h_drift": report.max_h_drift,
    })
    return 0


def run_doi(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    metric = _metric(cfg)
    block = cfg.get("doi", {})
    R_cut = block.get("R_cut", 1.0)
    h = rays.principal_symbol(metric)
    p = escape.flat_escape_symbol(R_cut, metric.dim)
    sample = escape.escape_sample(metric.dim, R_cut,
                                  x_extent=block.get("x_extent",
                                                     grid.half_width / 2.0))
    lower = escape.verify_lower_bound(h, p, sample)
    payload = {
        "metric": metric.label,
        "R_cut": R_cut,
        "lower": {"constants": lower.constants, "verdict": lower.verdict,
                  "worst": lower.worst},
        "centers": [],
    }
    ok = lower.verdict
    for x_mu in block.get("centers", []):
        esc = escape.uncentered_symbol(
            p, p, x_mu, h, sample, pass_cap=block.get("pass_cap", 50.0))
        payload["centers"].append({
            "x_mu": list(map(float, x_mu)),
            "N": esc.N,
            "bump": {"constants": esc.bump_report.constants,
                     "verdict": esc.bump_report.verdict,
                     "worst": esc.bump_report.worst},
            "offcenter": {"constants": esc.offcenter_report.constants,
                          "verdict": esc.offcenter_report.verdict},
        })
        ok = ok and esc.bump_report.verdict
    payload["verdict"] = bool(ok)
    write_json(out / "doi_report.json", payload)
    return 0


def run_linear(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    metric = _metric(cfg)
    block = cfg.get("linear", {})
    eps = block.get("eps", 0.0)
    T = block.get("T", 0.1)
    dt = block.get("dt", 1e-3)
    a_values = np.broadcast_to(
        metric.a(grid.x), grid.shape + (grid.dim, grid.dim)).copy()
    ls = linear.system_from_fields(grid, a_values, epsilon=eps,
                                   label=metric.label)
    u0 = _data(cfg, grid)
    tr = linear.evolve(ls, u0, T, dt,
                       store_every=block.get("store_every", 1),
                       filter_frac=block.get("filter_frac"))
    rep = linear.apriori_report(tr)
    payload = rep.as_dict()
    payload["metric"] = metric.label
    payload["eps"] = eps
    payload["dt"] = dt
    if "mu0" in block:
        mu0 = block["mu0"]
        if mu0 >= len(rep.per_cube):
            raise ConfigError(
                f"mu0 {mu0} out of range; {len(rep.per_cube)} cubes")
        payload["mu0"] = mu0
        payload["mu0_smoothing"] = float(rep.per_cube[mu0])
    write_json(out / "apriori_report.json", payload)
    if block.get("dump_fields", False):
        fields = out / "fields"
        fields.mkdir(exist_ok=True)
        dump_field(fields / "initial.bin", tr.field(0))
        dump_field(fields / "final.bin", tr.final())
    return 0


def run_solve(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    cs = _family(cfg)
    block = _require(cfg, "solve")
    scfg = nonlinear.SolverConfig(s=block["s"], M0=block["M0"],
                                  epsilon=block["eps"], T=block["T_window"],
                                  dt=block["dt"])
    u0 = _data(cfg, grid)
    res = nonlinear.continuation_solve(cs, scfg, u0, block["T_target"])
    sol = res.solution
    payload = {
        "family": cs.label,
        "horizon": res.horizon,
        "target": res.target,
        "reached_target": res.reached_target,
        "gate_violation_time": res.gate_violation_time,
        "sup_hs": sol.sup_hs,
        "fixed_point_residual": sol.fixed_point_residual,
        "n_iterations": sol.n_iterations,
        "windows": [{
            "t_start": w.t_start, "t_end": w.t_end,
            "gate_norm": w.gate_norm, "fitted_A": w.fitted_A,
            "n_iterations": w.n_iterations,
            "ellipticity_min": w.ellipticity_min,
        } for w in res.windows],
        "contraction_log": sol.contraction_log,
        "hierarchy": sol.hierarchy.tolist(),
        "times": sol.trajectory.times.tolist(),
    }
    write_json(out / "solve_report.json", payload)
    fields = out / "fields"
    fields.mkdir(exist_ok=True)
    every = block.get("dump_every", max(1, sol.trajectory.n_times // 8))
    index = []
    for i in range(0, sol.trajectory.n_times, every):
        name = f"step_{i:06d}.bin"
        dump_field(fields / name, sol.trajectory.field(i))
        index.append({"file": name, "t": float(sol.trajectory.times[i])})
    last = sol.trajectory.n_times - 1
    if not index or index[-1]["file"] != f"step_{last:06d}.bin":
        name = f"step_{last:06d}.bin"
        dump_field(fields / name, sol.trajectory.final())
        index.append({"file": name, "t": float(sol.trajectory.times[last])})
    write_json(fields / "index.json", index)
    return 0


def run_limit(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    cs = _family(cfg)
    block = _require(cfg, "limit")
    eps_list = sorted(block["eps_list"], reverse=True)
    scfg = nonlinear.SolverConfig(s=block["s"], M0=block["M0"],
                                  epsilon=eps_list[0], T=block["T_star"],
                                  dt=block["dt"])
    u0 = _data(cfg, grid)
    rep, runs = nonlinear.vanishing_viscosity(cs, scfg, u0, block["T_star"],
                                              eps_list=tuple(eps_list))
    payload = rep.as_dict()
    payload["family"] = cs.label
    payload["sup_hs"] = [r.sup_hs for r in runs]
    write_json(out / "limit_report.json", payload)
    fields = out / "fields"
    fields.mkdir(exist_ok=True)
    for j, r in enumerate(runs):
        dump_field(fields / f"eps_{j}.bin", r.trajectory.final())
    return 0


def run_verify(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    cs = _family(cfg)
    block = cfg.get("verify", {})
    check = block.get("check_nontrapping", True)
    budget = block.get("ray_budget", 40.0)
    u0 = _data(cfg, grid) if "data" in cfg else \
        StateField(grid, np.zeros(grid.shape, dtype=np.complex128))
    nl = validate_assumptions(cs, grid, u0=u0, check_nontrapping=check,
                              ray_budget=budget)
    frozen = freeze_at_state(cs, grid, u0, 0.0)
    lin = validate_frozen(frozen, check_nontrapping=check, ray_budget=budget)
    met = validate_metric(frozen.metric(), grid, check_nontrapping=check,
                          ray_budget=budget)

    def pack(rep):
        return {"entries": rep.entries, "constants": rep.constants,
                "verdict": rep.verdict}

    payload = {
        "family": cs.label,
        "NL": pack(nl), "L": pack(lin), "D": pack(met),
        "verdict": bool(nl.verdict and lin.verdict and met.verdict),
    }
    write_json(out / "verify_report.json", payload)
    return 0


RUNNERS = {
    "rays": run_rays,
    "doi": run_doi,
    "linear": run_linear,
    "solve": run_solve,
    "limit": run_limit,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qslab",
        description="numerical laboratory for dispersive smoothing machinery")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name, help_text in [
        ("rays", "classify bicharacteristic escape; emits rays.csv"),
        ("doi", "verify escape-function lower bounds; emits doi_report.json"),
        ("linear", "evolve a frozen linear system; emits apriori_report.json"),
        ("solve", "viscous Picard solver with continuation"),
        ("limit", "vanishing-viscosity ladder; emits limit_report.json"),
        ("verify", "run every assumption validator; pass/fail matrix"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None,
                       help="output directory (default $QSLAB_OUT or ./out)")
        p.add_argument("--threads", type=int, default=1,
                       help="scheduling hint, recorded in the resolved config")
        p.add_argument("--seed", type=int, default=None,
                       help="overrides the config seed")
        if name == "linear":
            p.add_argument("--eps", type=float, default=None)
            p.add_argument("--T", type=float, default=None)
            p.add_argument("--dt", type=float, default=None)
            p.add_argument("--metric", type=str, default=None,
                           choices=sorted(METRICS))
            p.add_argument("--mu0", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        overrides = {}
        if args.subcommand == "linear":
            block = dict(cfg.get("linear", {}))
            for key in ("eps", "T", "dt", "mu0"):
                val = getattr(args, key)
                if val is not None:
                    block[key] = val
                    overrides[key] = val
            cfg["linear"] = block
            if args.metric is not None:
                cfg["metric"] = {"name": args.metric}
                overrides["metric"] = args.metric
        out = Path(args.out or os.environ.get("QSLAB_OUT", "out"))
        out.mkdir(parents=True, exist_ok=True)
        np.random.default_rng(seed)
        _write_resolved(out, cfg, args.subcommand, seed, args.threads,
                        overrides)
        return RUNNERS[args.subcommand](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
