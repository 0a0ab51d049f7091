"""Command line front end.

    frameflow <subcommand> --config run.json --out results/ [--workers K] [--seed S]

Subcommands: heat-scalar, heat-form, ns2d, dynamo3d, localtime-check, validate.
Each run writes one CSV per time slice plus ``meta.json``.  Exit status is 0
on success, 1 on a numerical failure (``meta.json`` still written) and 2 on a
usage or configuration error.
"""
import argparse
import json
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from ._accel import backend_name
from .estimator import EstimationFailed, McConfig, grid_field_estimate
from .fields import StripGrid, VelocityField, write_form_csv, write_velocity_csv
from .frame_bundle import FrameCollapseError, absolute_bc_residual
from .geometry import ConnectionField, ContractError, OutOfRangeError
from .oracle import CflError, cross_checks
from .profiles import make_profile, make_vector_profile, make_velocity

SUBCOMMANDS = ("heat-scalar", "heat-form", "ns2d", "dynamo3d", "localtime-check", "validate")
NUMERIC_ERRORS = (EstimationFailed, FrameCollapseError, CflError, OutOfRangeError,
                  ArithmeticError, RuntimeError)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    nu: float = 0.5
    nu_m: float = None
    T: float = 0.5
    dtau_outer: float = None
    grid: dict = field(default_factory=lambda: {"nx": 8, "ny": 9, "lx": 2.0, "height": 4.0, "dim": 2})
    mc: dict = field(default_factory=dict)
    metric: str = "flat"
    initial: object = field(default_factory=lambda: {"kind": "zero"})
    velocity: dict = field(default_factory=lambda: {"kind": "zero"})
    slices: int = 1
    probe: list = None
    probe_fill: str = "interp"
    out: str = None

    def validate(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError("unknown subcommand %r" % self.subcommand)
        for name in ("nu", "T"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError("%s must be strictly positive" % name)
        for name in ("nu_m", "dtau_outer"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError("%s must be strictly positive" % name)
        if self.metric != "flat":
            raise ConfigError("only the flat metric is available from the command line")
        if self.slices < 1:
            raise ConfigError("slices must be at least 1")
        try:
            self.strip_grid()
            self.mc_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.subcommand == "dynamo3d" and self.grid.get("dim", 2) != 3:
            raise ConfigError("dynamo3d needs a grid with dim = 3")
        if self.subcommand == "ns2d":
            if self.grid.get("dim", 2) != 2:
                raise ConfigError("ns2d needs a grid with dim = 2")
            if self.dtau_outer is None:
                raise ConfigError("ns2d needs dtau_outer")
        return self

    def strip_grid(self):
        g = dict(self.grid)
        return StripGrid(int(g["nx"]), int(g["ny"]), float(g["lx"]), float(g["height"]),
                         int(g.get("dim", 2)))

    def mc_config(self):
        kw = dict(self.mc)
        kw.setdefault("strip_height", float(self.grid["height"]))
        return McConfig(**kw)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if not isinstance(d, dict) or "subcommand" not in d:
            raise ConfigError("config must be a JSON object with a subcommand")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError("unknown config keys: %s" % ", ".join(sorted(extra)))
        return cls(**d)


def git_describe():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                           capture_output=True, text=True, timeout=10)
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _slice_times(cfg):
    return [cfg.T * (k + 1) / cfg.slices for k in range(cfg.slices)]


def _tag(tau):
    return "%.4f" % tau


def _flow_connection(cfg, grid, nu):
    u = make_velocity(cfg.velocity, grid.dim)
    if u is None:
        return ConnectionField.flat_ns(grid.dim, nu), None
    vf = VelocityField.from_function(grid, [0.0], u)
    return ConnectionField.flat_ns(grid.dim, nu, vf), vf


def _components(initial, n):
    """2-form initial data: a list of per-component profile specs."""
    if isinstance(initial, dict):
        initial = [initial]
    ncomp = n * (n - 1) // 2
    if len(initial) != ncomp:
        raise ConfigError("a %d-dimensional 2-form needs %d component profiles" % (n, ncomp))
    return make_vector_profile(initial)


def _run_heat(cfg, out, meta, degree):
    grid = cfg.strip_grid()
    mc = cfg.mc_config()
    conn, _ = _flow_connection(cfg, grid, cfg.nu)
    if degree == 0:
        fn = make_profile(cfg.initial)
        prefix = "heat_scalar"
    else:
        fn = _components(cfg.initial, grid.dim)
        prefix = "heat_form"
    for tau in [0.0] + _slice_times(cfg):
        ff = grid_field_estimate(fn, grid, tau, conn, mc, degree=degree)
        write_form_csv(os.path.join(out, "%s_tau%s.csv" % (prefix, _tag(tau))), ff)
        d = {"tau": tau, "n_discarded": ff.meta["n_discarded"]}
        if degree == 2:
            d["bc_residual"] = absolute_bc_residual(ff)
        meta["slices"].append(d)


def _run_ns2d(cfg, out, meta):
    from .fluids import ns2d_solve

    grid = cfg.strip_grid()
    mc = cfg.mc_config()
    w0 = make_profile(cfg.initial)

    def emit(sl):
        write_form_csv(os.path.join(out, "ns2d_omega_tau%s.csv" % _tag(sl.tau)), sl.omega)
        write_velocity_csv(os.path.join(out, "ns2d_u_tau%s.csv" % _tag(sl.tau)), grid, sl.u)
        d = {"tau": sl.tau}
        d.update(sl.diagnostics)
        d["bc_residual"] = absolute_bc_residual(sl.omega)
        meta["slices"].append(d)

    probe = tuple(cfg.probe) if cfg.probe else None
    ns2d_solve(w0, cfg.nu, cfg.T, cfg.dtau_outer, grid, mc, probe=probe,
               probe_fill=cfg.probe_fill, callback=emit)


def _run_dynamo(cfg, out, meta):
    from .fluids import dynamo3d_solve

    grid = cfg.strip_grid()
    mc = cfg.mc_config()
    nu_m = cfg.nu_m if cfg.nu_m is not None else cfg.nu
    u = make_velocity(cfg.velocity, 3)
    vf = None if u is None else VelocityField.from_function(grid, [0.0], u)
    specs = cfg.initial if isinstance(cfg.initial, list) else [cfg.initial] * 3
    if len(specs) != 3:
        raise ConfigError("dynamo3d needs three B component profiles")
    b0 = make_vector_profile(specs)
    slices = dynamo3d_solve(b0, vf, nu_m, cfg.T, grid, mc, dtau=cfg.T / cfg.slices)
    for ff in slices[1:]:
        write_form_csv(os.path.join(out, "dynamo3d_tau%s.csv" % _tag(ff.tau)), ff)
        meta["slices"].append({"tau": ff.tau, "n_discarded": ff.meta["n_discarded"],
                               "bc_residual": absolute_bc_residual(ff)})


def _run_localtime(cfg, out, meta):
    mc = cfg.mc_config()
    nsteps = mc.nsteps(cfg.T)
    r = kernels.run_ensemble(np.zeros((1, 2)), mc.n_paths, dt=mc.dt, nsteps=nsteps, nu=cfg.nu,
                             height=mc.strip_height, seed=mc.seed, antithetic=mc.antithetic,
                             workers=mc.workers, backend=mc.backend)
    from .estimator import reduce_statistics

    res = reduce_statistics(r.phi, mc.antithetic)
    # normal coordinate is sqrt(2 nu) times a reflected Brownian motion
    exact = np.sqrt(4.0 * cfg.nu * cfg.T / np.pi)
    z = float((res.value - exact) / res.stderr)
    meta["localtime"] = {"mean": float(res.value), "stderr": float(res.stderr),
                         "exact": float(exact), "z": z, "rel_bias": float(res.value / exact - 1)}
    print("E[phi(%g)] = %.6f +- %.6f  exact %.6f  z = %.2f" % (cfg.T, res.value, res.stderr, exact, z))
    with open(os.path.join(out, "localtime.csv"), "w") as fh:
        fh.write("mean,stderr,exact,z\n%.17g,%.17g,%.17g,%.17g\n" % (res.value, res.stderr, exact, z))


def _run_validate(cfg, out, meta):
    checks = cross_checks()
    meta["checks"] = {k: {"value": v, "limit": lim, "passed": ok} for k, (v, lim, ok) in checks.items()}
    for k, (v, lim, ok) in checks.items():
        print("%-32s %-4s %.3e (limit %.1e)" % (k, "PASS" if ok else "FAIL", v, lim))
    return all(ok for _, _, ok in checks.values())


def run(cfg):
    """Execute a validated config; returns the exit status."""
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    meta = {"config": json.loads(cfg.to_json()), "seed": cfg.mc.get("seed", 0),
            "git_describe": git_describe(), "backend": backend_name(),
            "slices": []}
    t0 = time.time()
    status = 0
    try:
        if cfg.subcommand == "heat-scalar":
            _run_heat(cfg, out, meta, 0)
        elif cfg.subcommand == "heat-form":
            _run_heat(cfg, out, meta, 2)
        elif cfg.subcommand == "ns2d":
            _run_ns2d(cfg, out, meta)
        elif cfg.subcommand == "dynamo3d":
            _run_dynamo(cfg, out, meta)
        elif cfg.subcommand == "localtime-check":
            _run_localtime(cfg, out, meta)
        elif cfg.subcommand == "validate":
            status = 0 if _run_validate(cfg, out, meta) else 1
    except ConfigError:
        raise
    except NUMERIC_ERRORS as exc:
        meta["error"] = {"type": type(exc).__name__, "message": str(exc)}
        hist = getattr(exc, "history", None)
        if hist is not None:
            meta["error"]["picard_residuals"] = list(hist)
        status = 1
    meta["wall_clock_s"] = time.time() - t0
    meta["exit_status"] = status
    with open(os.path.join(out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="frameflow", description="Monte Carlo heat flows of forms on the half-space.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker threads for path ensembles")
    p.add_argument("--seed", type=int, help="master seed override (unsigned 64-bit)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            with open(args.config) as fh:
                cfg = RunConfig.from_json(fh.read())
        else:
            cfg = RunConfig(args.subcommand)
        if cfg.subcommand != args.subcommand:
            raise ConfigError("config is for %r, command line asks for %r" % (cfg.subcommand, args.subcommand))
        cfg.mc = dict(cfg.mc)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be positive")
            cfg.mc["workers"] = args.workers
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.mc["seed"] = args.seed
        if args.out:
            cfg.out = args.out
        if not cfg.out:
            raise ConfigError("an output directory is required (--out)")
        cfg.validate()
    except (ConfigError, ContractError, OSError, TypeError, json.JSONDecodeError) as exc:
        print("frameflow: error: %s" % exc, file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except (ConfigError, ContractError) as exc:
        print("frameflow: error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
