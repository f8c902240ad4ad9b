"""
Command line front end: ``cavflow <command> --config <path> [options]``.

Configurations are JSON objects with explicit field names::

    {"R0": 1.0, "sites": [[0.4, 0.0]], "areas": [1.5708],
     "options": {"steps": 400, "modes": 32}}

A manifest written by a previous run is accepted in place of a config and
reproduces that run. Tables are CSV with a header row; floats are written
with ``repr`` so that identical runs give identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import (
    CavitationMap,
    QuadratureError,
    bound_check,
    energy_sweep,
    fraenkel_asymmetry,
)
from .flow import (
    FlowError,
    FlowOptions,
    VelocitySchedule,
    decay_check,
    flow_seeds,
    incompressibility_report,
    injectivity_probe,
    integrate_flow,
    tracking_report,
)
from .geometry import (
    CavitationConfig,
    ConfigError,
    NotAttainableError,
    build_evolution,
    certification_grid,
    check_attainable,
    coalescence_bounds,
    evolution_clearances,
    packing_density,
)
from .neumann import SolverError, SolverOptions
from .velocity import build_velocity_field, verify_boundary_conditions

__all__ = [
    "RunOptions",
    "load_config",
    "dump_config",
    "run_pipeline",
    "main",
    "COMMANDS",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NOT_ATTAINABLE",
    "EXIT_CERTIFICATE",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_ATTAINABLE = 3
EXIT_CERTIFICATE = 4

COMMANDS = ("attainability", "evolve", "solve-neumann", "flow", "energy-sweep", "full-run")


@dataclass
class RunOptions:
    """Every numerical knob of a run; the defaults are the documented ones."""

    modes: int = 32
    points: int | None = None
    steps: int = 400
    tol_det: float = 1e-4
    tol_bdry: float = 1e-5
    beta: float = 0.25
    eps_grid: list = field(default_factory=lambda: [1e-2, 3e-3, 1e-3, 3e-4])
    mc_points: int = 20000
    seed: int = 0
    flow_points: int = 2000
    boundary_samples: int = 64
    polygon_samples: int = 1024
    interface_samples: int = 512
    time: float | None = None

    def __post_init__(self):
        self.eps_grid = [float(e) for e in self.eps_grid]
        if self.modes < 1:
            raise ConfigError("modes must be at least 1", "options.modes")
        if self.steps < 10:
            raise ConfigError("steps must be at least 10", "options.steps")
        if not 0 < self.beta <= 1:
            raise ConfigError("beta must lie in (0, 1]", "options.beta")
        if any(not e > 0 for e in self.eps_grid):
            raise ConfigError("eps values must be positive", "options.eps_grid")

    def solver(self) -> SolverOptions:
        return SolverOptions(modes=self.modes, points=self.points)

    def flow(self) -> FlowOptions:
        return FlowOptions(steps=self.steps, tol_det=self.tol_det, tol_bdry=self.tol_bdry,
                           solver=self.solver())


_OPTION_NAMES = {f.name for f in fields(RunOptions)}


# -- configuration files -------------------------------------------------------------


def _parse_points(raw, name):
    if not isinstance(raw, list):
        raise ConfigError(f"{name} must be a list of [x, y] pairs", name)
    out = []
    for k, p in enumerate(raw):
        if not (isinstance(p, (list, tuple)) and len(p) == 2):
            raise ConfigError(f"{name}[{k}] must be an [x, y] pair", f"{name}[{k}]")
        try:
            out.append([float(p[0]), float(p[1])])
        except (TypeError, ValueError):
            raise ConfigError(f"{name}[{k}] must be numeric", f"{name}[{k}]") from None
    return np.array(out).reshape(-1, 2)


def _parse_floats(raw, name):
    if not isinstance(raw, list):
        raise ConfigError(f"{name} must be a list of numbers", name)
    try:
        return np.array([float(v) for v in raw])
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must contain numbers only", name) from None


def config_from_dict(data: dict):
    """Validated ``(CavitationConfig, RunOptions)`` from a parsed JSON object."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        # a manifest: reuse its echoed config and options
        body = dict(data["config"])
        body.setdefault("options", data.get("options", {}))
        data = body
    known = {"R0", "sites", "areas", "min_areas", "seed_radii", "options"}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown field {key!r}", key)
    for key in ("R0", "sites", "areas"):
        if key not in data:
            raise ConfigError(f"missing required field {key!r}", key)
    try:
        R0 = float(data["R0"])
    except (TypeError, ValueError):
        raise ConfigError("R0 must be a number", "R0") from None
    sites = _parse_points(data["sites"], "sites")
    areas = _parse_floats(data["areas"], "areas")
    mins = None if data.get("min_areas") is None else _parse_floats(data["min_areas"], "min_areas")
    seeds = None if data.get("seed_radii") is None else _parse_floats(data["seed_radii"], "seed_radii")
    config = CavitationConfig(R0, sites, areas, min_areas=mins, seed_radii=seeds)
    raw = data.get("options") or {}
    if not isinstance(raw, dict):
        raise ConfigError("options must be an object", "options")
    for key in raw:
        if key not in _OPTION_NAMES:
            raise ConfigError(f"unknown option {key!r}", f"options.{key}")
    try:
        opts = RunOptions(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc), "options") from None
    return config, opts


def load_config(path):
    """Read a JSON config (or manifest) from ``path``.

    Raises :class:`ConfigError` with the line and column of a syntax error
    or the name of the offending field.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          f"line {exc.lineno}") from None
    return config_from_dict(data)


def config_to_dict(config: CavitationConfig, opts: RunOptions | None = None) -> dict:
    out = {
        "R0": config.R0,
        "sites": [[float(a.real), float(a.imag)] for a in config.sites],
        "areas": [float(v) for v in config.areas],
    }
    if config.min_areas is not None:
        out["min_areas"] = [float(v) for v in config.min_areas]
    if config.seed_radii is not None:
        out["seed_radii"] = [float(v) for v in config.seed_radii]
    if opts is not None:
        out["options"] = asdict(opts)
    return out


def dump_config(config: CavitationConfig, opts: RunOptions | None = None) -> str:
    """Canonical JSON text: sorted keys, two-space indent, shortest float repr."""
    return json.dumps(config_to_dict(config, opts), indent=2, sort_keys=True) + "\n"


# -- tables ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    """Write rows (dicts keyed by header or plain sequences) with a header line."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [r[h] for h in header] if isinstance(r, dict) else list(r)
        w.writerow([_fmt(v) for v in vals])
    path.write_bytes(buf.getvalue().encode())
    return path.name


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# -- pipeline -------------------------------------------------------------------------


class StageFailure(RuntimeError):
    def __init__(self, stage, message, code, certificate=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code
        self.certificate = certificate or {}


class _Run:
    """Mutable state of one pipeline run (manifest plus shared solves)."""

    def __init__(self, config, opts, out: Path, command):
        self.config = config
        self.opts = opts
        self.out = out
        self.command = command
        self.stages = {}
        self.artifacts = []
        self.evolution = None
        self.schedule = None
        self.failed = []

    def stage(self, name, fn):
        t0 = time.perf_counter()
        try:
            cert = fn()
        except (SolverError, FlowError, QuadratureError) as exc:
            snap = {"error": str(exc)}
            for attr in ("seed", "time", "deviation", "residual", "points"):
                if getattr(exc, attr, None) is not None:
                    snap[attr] = getattr(exc, attr)
            self.stages[name] = {"certificate": snap, "passed": False,
                                 "seconds": time.perf_counter() - t0}
            self.failed.append(name)
            raise StageFailure(name, str(exc), EXIT_CERTIFICATE, snap) from exc
        passed = bool(cert.pop("passed", True))
        self.stages[name] = {"certificate": cert, "passed": passed,
                             "seconds": time.perf_counter() - t0}
        if not passed:
            self.failed.append(name)
        return cert

    def table(self, name, header, rows):
        self.artifacts.append(write_csv(self.out / name, header, rows))

    def need_evolution(self):
        if self.evolution is None:
            self.stage("attainability", self.attainability)
            self.stage("evolve", self.evolve)
        return self.evolution

    def need_schedule(self):
        evo = self.need_evolution()
        if self.schedule is None:
            self.schedule = VelocitySchedule(evo, self.opts.steps, self.opts.solver())
        return self.schedule

    # stages ------------------------------------------------------------------------
    def attainability(self):
        c = self.config
        rep = check_attainable(c)
        cert = {"sigma": rep.sigma, "lambda": rep.lam, "attainable": rep.attainable, "reason": rep.reason,
                "lambda0": None, "lambda_star": None, "sigma_star": None, "packing_density": None}
        if np.allclose(c.areas, c.areas[0], rtol=1e-12, atol=0):
            cert["packing_density"] = packing_density(c)
        if c.seed_radii is not None:
            d = c.seed_radii
            cert["sigma_star"] = float((d**2).sum() / c.R0**2)
            cert["lambda_star"] = 1.0 / math.sqrt(1.0 - cert["sigma_star"])
            if c.min_areas is not None:
                lam0, lam_star, sig_star = coalescence_bounds(d, c.min_areas, c.R0, c.sites)
                cert.update(lambda0=lam0, lambda_star=lam_star, sigma_star=sig_star)
        self.table("attainability.csv",
                   ["sigma", "lambda", "attainable", "lambda0", "lambda_star", "sigma_star", "packing_density"],
                   [{k: ("" if cert[k] is None else cert[k]) for k in
                     ["sigma", "lambda", "attainable", "lambda0", "lambda_star", "sigma_star", "packing_density"]}])
        if not rep.attainable:
            self.stages["attainability"] = {"certificate": cert, "passed": False, "seconds": 0.0}
            raise StageFailure("attainability", rep.reason, EXIT_NOT_ATTAINABLE, cert)
        return cert

    def evolve(self):
        try:
            evo = build_evolution(self.config, beta=self.opts.beta)
        except NotAttainableError as exc:
            raise StageFailure("evolve", str(exc), EXIT_NOT_ATTAINABLE) from exc
        self.evolution = evo
        t = certification_grid(evo.lam)
        z = evo.center(t)
        r = evo.hole_radius(t)
        gaps, outer = evolution_clearances(z, r, t, evo.R0)
        area0 = math.pi * (evo.R0**2 - (evo.excision_radii**2).sum())
        area = math.pi * ((t * evo.R0) ** 2 - (r**2).sum(axis=1))
        area_err = float(np.abs(area - area0).max() / (math.pi * evo.R0**2))
        d = evo.margin
        margin_ok = bool(gaps.min() >= 2 * d and outer.min() >= 2 * d and r.min() >= d)
        grid = np.linspace(1.0, evo.lam, 101)
        zg, Lg, rg = evo.center(grid), np.sqrt(evo.cavity_radius_sq(grid)), evo.hole_radius(grid)
        rows = []
        for k, tk in enumerate(grid):
            for i in range(evo.n):
                rows.append([float(tk), i, zg[k, i].real, zg[k, i].imag, Lg[k, i], rg[k, i]])
        self.table("evolution.csv", ["t", "cavity", "z_x", "z_y", "L", "hole_radius"], rows)
        return {
            "evolution": evo.to_dict(),
            "area_error": area_err,
            "min_gap": float(gaps.min()) if evo.n > 1 else None,
            "min_outer_clearance": float(outer.min()),
            "margin_holds": margin_ok,
            "passed": margin_ok and area_err <= 1e-10,
        }

    def solve_neumann(self):
        evo = self.need_evolution()
        t = self.opts.time
        if t is None:
            t = 0.5 * (1.0 + evo.lam)
        if not 1.0 <= t <= evo.lam:
            raise StageFailure("solve-neumann", f"time {t} outside [1, {evo.lam}]", EXIT_CONFIG)
        ev = build_velocity_field(evo, t, self.opts.solver())
        bc = verify_boundary_conditions(ev)
        dom = ev.domain
        rows = []
        for j, (c, r) in enumerate(zip(dom.circle_centers(), dom.circle_radii())):
            rows.append([j, c.real, c.imag, r, ev.rates[j], bc["normal"][j], bc["tangential"][j]])
        self.table("neumann.csv", ["circle", "center_x", "center_y", "radius", "rate",
                                   "normal_error", "tangential_error"], rows)
        return {
            "time": float(t),
            "phi_residual": ev.phi.residual,
            "varphi_residual": ev.varphi.residual,
            "max_normal_error": bc["max_normal"],
            "max_tangential_error": bc["max_tangential"],
            "passed": bc["max_normal"] <= 1e-6 and bc["max_tangential"] <= 1e-6,
        }

    def flow(self):
        evo = self.need_evolution()
        sched = self.need_schedule()
        seeds, labels = flow_seeds(evo, self.opts.flow_points, self.opts.boundary_samples, self.opts.seed)
        batch = integrate_flow(seeds, evo, self.opts.flow(), labels=labels, checkpoints=10, schedule=sched)
        track = tracking_report(batch, evo)
        det = incompressibility_report(batch)
        inj = injectivity_probe(batch)
        decay = decay_check(batch)
        rows = [[batch.seeds[k].real, batch.seeds[k].imag, int(batch.labels[k]), batch.final[k].real,
                 batch.final[k].imag, batch.det[-1, k]] for k in range(len(batch.seeds))]
        self.table("flow.csv", ["seed_x", "seed_y", "label", "image_x", "image_y", "det"], rows)
        S = (batch.gradients**2).sum(axis=(2, 3))
        rows = [[batch.times[c], int(batch.steps[c]), det["per_checkpoint"][c], S[c].sum(),
                 decay["weighted"][c]] for c in range(len(batch.times))]
        self.table("checkpoints.csv", ["t", "step", "max_det_error", "sum_F2", "weighted_sum_F2"], rows)
        ok = (track["max_error"] <= self.opts.tol_bdry and det["passed"] and inj["passed"] and decay["passed"])
        return {"seeds": len(seeds), "tracking": track, "det": det, "injectivity": inj,
                "decay": decay, "passed": ok}

    def energy(self):
        evo = self.need_evolution()
        sched = self.need_schedule()
        eps = [e for e in self.opts.eps_grid]
        if max(eps) >= evo.excision_radii.min():
            raise StageFailure("energy-sweep", "every eps must be below the smallest excision radius",
                               EXIT_CONFIG)
        report, batch = energy_sweep(evo, eps, self.opts.flow(), self.opts.mc_points, self.opts.seed, sched)
        fit = bound_check(report)
        self.table("energy.csv", ["epsilon", "E_near_exact", "E_far_mc", "E_far_stderr", "E_total",
                                  "log_eps", "bound_gap"], list(report.rows()))
        det = incompressibility_report(batch)
        monotone = bool(np.all(np.diff(report.total[np.argsort(-report.eps)]) > 0))
        return {"far": report.far, "far_stderr": report.far_stderr, "fit": fit,
                "mc_det": det["max_det_error"], "monotone": monotone,
                "passed": fit["passed"] and det["passed"] and monotone}

    def cavities(self):
        evo = self.need_evolution()
        sched = self.need_schedule()
        eps = min(self.opts.eps_grid)
        cmap = CavitationMap(evo, eps, self.opts.flow(), sched)
        iface = cmap.interface_mismatch(self.opts.interface_samples)
        outer = cmap.outer_error(self.opts.interface_samples)
        target = evo.final_areas() + math.pi * eps**2
        rows, worst_area, worst_D = [], 0.0, 0.0
        for i in range(evo.n):
            poly = cmap.cavity_polygon(i, self.opts.polygon_samples)
            area = float(cmap.cavity_areas(self.opts.polygon_samples)[i])
            D = fraenkel_asymmetry(poly)
            rel = abs(area - target[i]) / target[i]
            worst_area, worst_D = max(worst_area, rel), max(worst_D, D)
            rows.append([i, target[i], area, rel, D])
        self.table("cavities.csv", ["cavity", "target_area", "polygon_area", "rel_error", "fraenkel"], rows)
        tol = self.opts.tol_bdry
        return {"eps": eps, "interface_mismatch": iface, "outer_error": outer,
                "max_area_error": worst_area, "max_fraenkel": worst_D,
                "passed": iface <= tol and outer <= tol and worst_area <= 5e-3 and worst_D <= 1e-2}


def run_pipeline(config: CavitationConfig, command: str, opts: RunOptions | None = None,
                 out_dir="cavflow_out"):
    """Run ``command`` and write its tables and ``manifest.json`` into ``out_dir``.

    Returns ``(manifest, exit_code)``.
    """
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    opts = opts or RunOptions()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(config, opts, out, command)
    code = EXIT_OK
    error = None
    try:
        if command == "attainability":
            run.stage("attainability", run.attainability)
        else:
            run.need_evolution()
        if command == "solve-neumann":
            run.stage("solve-neumann", run.solve_neumann)
        if command in ("flow", "full-run"):
            run.stage("flow", run.flow)
        if command in ("energy-sweep", "full-run"):
            run.stage("energy-sweep", run.energy)
        if command == "full-run":
            run.stage("solve-neumann", run.solve_neumann)
            run.stage("cavities", run.cavities)
        if run.failed:
            code = EXIT_CERTIFICATE
    except StageFailure as exc:
        code, error = exc.code, {"stage": exc.stage, "message": str(exc), "certificate": exc.certificate}
    manifest = {
        "software": {"name": "cavflow", "version": __version__},
        "command": command,
        "config": config_to_dict(config),
        "options": asdict(opts),
        "stages": run.stages,
        "failed_stages": run.failed,
        "error": error,
        "artifacts": sorted(set(run.artifacts)),
        "exit_code": code,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return manifest, code


# -- entry point ----------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="cavflow", description="Round-cavity deformations via the flow construction.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config or manifest")
    p.add_argument("--out", default="cavflow_out", help="output directory")
    p.add_argument("--eps-grid", help="comma separated eps values")
    p.add_argument("--steps", type=int, help="RK4 steps on [1, lambda]")
    p.add_argument("--modes", type=int, help="Fourier modes per circle")
    p.add_argument("--seed", type=int, help="random seed for point clouds")
    p.add_argument("--time", type=float, help="time for solve-neumann")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config, opts = load_config(args.config)
        over = {}
        if args.eps_grid:
            try:
                over["eps_grid"] = [float(s) for s in args.eps_grid.split(",") if s.strip()]
            except ValueError:
                raise ConfigError("--eps-grid must be comma separated numbers", "eps_grid") from None
        for name in ("steps", "modes", "seed", "time"):
            if getattr(args, name) is not None:
                over[name] = getattr(args, name)
        if over:
            opts = RunOptions(**{**asdict(opts), **over})
    except (ConfigError, OSError) as exc:
        where = f" (field: {exc.field})" if getattr(exc, "field", None) else ""
        print(f"cavflow: invalid configuration: {exc}{where}", file=sys.stderr)
        return EXIT_CONFIG
    manifest, code = run_pipeline(config, args.command, opts, args.out)
    for name, st in manifest["stages"].items():
        print(f"{name:15s} {'pass' if st['passed'] else 'FAIL'}  ({st['seconds']:.2f} s)")
    if manifest["error"]:
        print(f"cavflow: {manifest['error']['message']}", file=sys.stderr)
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
