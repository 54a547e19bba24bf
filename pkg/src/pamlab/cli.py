"""Command-line entry point: ``pamlab <subcommand> [options]``.

Configuration is a flat ``key = value`` file with dotted sections; command
flags override file values, and every resolved value is echoed to
``manifest.txt`` in the run directory together with where it came from.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 admissibility
violation.
"""

from dataclasses import dataclass, field
import argparse
import csv
import math
import os
import sys

import numpy as np

from . import __version__

FORMAT_VERSION = 1
SUBCOMMANDS = ("simulate", "moments", "variational", "scan", "tail", "constants", "selftest")

# key -> default (strings, parsed on use); "" means unset
DEFAULTS = {
    "time.kind": "white",
    "time.alpha0": "0",
    "space.kind": "dirac",
    "space.alpha": "",
    "space.H": "",
    "space.d": "1",
    "space.amp": "1",
    "space.width": "1",
    "theta": "1",
    "run.t": "0.5",
    "run.seed": "0",
    "run.out": "",
    "run.workers": str(os.cpu_count() or 1),
    "grid.nx": "160",
    "grid.dx": "0.05",
    "grid.dt": "",
    "grid.coupling": "exp",
    "simulate.runs": "100",
    "simulate.sites": "center",
    "simulate.write_field": "0",
    "moments.m": "2",
    "moments.n_mc": "4000",
    "moments.n_steps": "32",
    "moments.eps": "",
    "variational.problem": "E",
    "variational.L": "20",
    "variational.nx": "512",
    "variational.ns": "8",
    "variational.beta": "1",
    "variational.n_starts": "5",
    "scan.R": "16,64,256,1024",
    "scan.realizations": "20",
    "scan.centers": "8",
    "scan.min_decades": "1.8",
    "theorem.id": "th1.7",
    "theorem.lam": "1",
    "theorem.E": "",
    "theorem.gamma0": "",
    "theorem.time_integral": "",
}

# per-subcommand defaults that differ from the table above
COMMAND_DEFAULTS = {
    "scan": {"theta": "2", "run.t": "1", "grid.nx": "40960", "grid.dx": "0.1"},
    "constants": {"run.t": "1"},
    "tail": {"run.t": "1"},
}

COV_KEYS = ("time.kind", "time.alpha0", "space.kind", "space.alpha", "space.H", "space.d",
            "space.amp", "space.width", "theta")
SECTIONS = {
    "simulate": COV_KEYS + ("run.t", "grid.nx", "grid.dx", "grid.dt", "grid.coupling",
                            "simulate.runs", "simulate.sites", "simulate.write_field"),
    "moments": COV_KEYS + ("run.t", "moments.m", "moments.n_mc", "moments.n_steps",
                           "moments.eps"),
    "variational": COV_KEYS + ("variational.problem", "variational.L", "variational.nx",
                               "variational.ns", "variational.beta", "variational.n_starts"),
    "scan": COV_KEYS + ("run.t", "grid.nx", "grid.dx", "grid.dt", "grid.coupling", "scan.R",
                        "scan.realizations", "scan.centers", "scan.min_decades"),
    "tail": ("theta", "run.t", "space.d", "space.alpha", "time.alpha0", "theorem.id",
             "theorem.lam", "theorem.E", "theorem.gamma0", "theorem.time_integral"),
    "constants": ("theta", "run.t", "space.d", "space.alpha", "time.alpha0", "theorem.id",
                  "theorem.E", "theorem.gamma0", "theorem.time_integral"),
    "selftest": (),
}
RUN_KEYS = ("run.seed", "run.out", "run.workers")

# flag name -> key
FLAGS = {
    "theta": "theta", "t": "run.t", "d": "space.d", "alpha": "space.alpha",
    "alpha0": "time.alpha0", "gamma": "space.kind", "time": "time.kind", "H": "space.H",
    "amp": "space.amp", "width": "space.width", "nx": "grid.nx", "dx": "grid.dx",
    "dt": "grid.dt", "coupling": "grid.coupling", "runs": "simulate.runs",
    "sites": "simulate.sites", "write-field": "simulate.write_field", "m": "moments.m",
    "n-mc": "moments.n_mc", "n-steps": "moments.n_steps", "eps": "moments.eps",
    "problem": "variational.problem", "L": "variational.L", "vnx": "variational.nx",
    "ns": "variational.ns", "beta": "variational.beta", "n-starts": "variational.n_starts",
    "R": "scan.R", "realizations": "scan.realizations", "centers": "scan.centers",
    "min-decades": "scan.min_decades", "theorem": "theorem.id", "lam": "theorem.lam",
    "E": "theorem.E", "gamma0": "theorem.gamma0", "time-integral": "theorem.time_integral",
    "seed": "run.seed", "out": "run.out", "workers": "run.workers",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    values: dict
    origin: dict = field(default_factory=dict)

    def get(self, key, cast=str):
        v = self.values[key]
        if v == "":
            return None
        try:
            return cast(v)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {v!r}") from e

    def floats(self, key):
        v = self.values[key]
        return [float(s) for s in v.split(",") if s.strip()]

    @property
    def keys(self):
        return SECTIONS[self.subcommand] + RUN_KEYS

    @property
    def out(self):
        return self.values["run.out"]


def read_config_file(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{n}: expected key = value")
            out[k.strip()] = v.strip()
    return out


def _check_keys(d, where):
    bad = sorted(set(d) - set(DEFAULTS))
    if bad:
        raise ConfigError(f"unknown key(s) {bad} in {where}; valid keys: {', '.join(DEFAULTS)}")


def build_parser():
    ap = argparse.ArgumentParser(prog="pamlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pamlab {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="set any config key (repeatable)")
        for flag, key in FLAGS.items():
            if key in SECTIONS[name] or key in RUN_KEYS:
                p.add_argument(f"--{flag}", dest=key, default=None, metavar="VALUE",
                               help=f"config key {key}")
    return ap


def parse_config(argv):
    """Resolve defaults <- config file <- flags into a RunConfig."""
    args = build_parser().parse_args(argv)
    cmd = args.subcommand
    values = dict(DEFAULTS)
    values.update(COMMAND_DEFAULTS.get(cmd, {}))
    origin = {k: "default" for k in values}
    if os.environ.get("PAMLAB_OUT"):
        values["run.out"] = os.environ["PAMLAB_OUT"]
        origin["run.out"] = "env"
    if args.config:
        filed = read_config_file(args.config)
        _check_keys(filed, args.config)
        for k, v in filed.items():
            values[k], origin[k] = v, "file"
    flags = {}
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[k.strip()] = v.strip()
    _check_keys(flags, "--set")
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            flags[k] = v
    for k, v in flags.items():
        values[k], origin[k] = v, "flag"
    if not values["run.out"]:
        values["run.out"] = os.path.join("pamlab_runs", cmd)
    return RunConfig(cmd, values, origin)


def covariance_from(cfg):
    from .covariance import spec_from_dict

    d = {k: cfg.values[k] for k in COV_KEYS if cfg.values[k] != ""}
    return spec_from_dict(d)


def check_admissible(spec):
    from .covariance import regime_classify
    from .spde import AdmissibilityError

    rep = regime_classify(spec)
    if not rep.admissible:
        raise AdmissibilityError(
            f"inadmissible covariance in regime {rep.label}: " + "; ".join(rep.violations))
    return rep


def write_manifest(cfg, extra=None):
    from . import kernels
    import scipy

    os.makedirs(cfg.out, exist_ok=True)
    lines = [f"format_version = {FORMAT_VERSION}", f"subcommand = {cfg.subcommand}",
             f"pamlab.version = {__version__}", f"pamlab.backend = {kernels.backend()}",
             f"numpy.version = {np.__version__}", f"scipy.version = {scipy.__version__}"]
    for k in cfg.keys:
        lines.append(f"{k} = {cfg.values[k]}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    lines.append("")
    lines += [f"origin.{k} = {cfg.origin.get(k, 'default')}" for k in cfg.keys]
    with open(os.path.join(cfg.out, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _g(x):
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# subcommands


def _solve_config(cfg, spec):
    from .spde import AdmissibilityError, SolveConfig

    if spec.time.kind != "white":
        raise AdmissibilityError("the lattice solver needs white-in-time noise (time.kind = white)")
    return SolveConfig(theta=spec.theta, t_final=cfg.get("run.t", float),
                       nx=cfg.get("grid.nx", int), dx=cfg.get("grid.dx", float),
                       dt=cfg.get("grid.dt", float), space=spec.space,
                       coupling=cfg.values["grid.coupling"])


def cmd_simulate(cfg):
    from . import noise, spde

    spec = covariance_from(cfg)
    check_admissible(spec)
    sc = _solve_config(cfg, spec)
    seed, runs = cfg.get("run.seed", int), cfg.get("simulate.runs", int)
    sites = [sc.nx // 2] if cfg.values["simulate.sites"] == "center" else list(range(sc.nx))
    x = sc.grid.x
    fields = []
    rows = []
    for start in range(0, runs, 1000):
        u = spde.solve_batch(sc, seed, range(start, min(runs, start + 1000)))
        if cfg.get("simulate.write_field", int):
            fields.append(u.copy())
        for row in u:
            rows += [(seed, sc.nt * sc.dt, x[i], row[i]) for i in sites]
    write_manifest(cfg, {"grid.dt.resolved": _g(sc.dt), "grid.nt": sc.nt})
    spde.write_summary_csv(os.path.join(cfg.out, "summary.csv"), rows)
    centre = np.array([r[3] for r in rows]).reshape(runs, len(sites))[:, len(sites) // 2]
    n = centre.size
    stats_rows = [("mean", centre.mean(), centre.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0),
                  ("second_moment", np.mean(centre**2),
                   np.std(centre**2, ddof=1) / math.sqrt(n) if n > 1 else 0.0)]
    if spec.space.kind == "dirac":
        stats_rows.append(("second_moment_exact", spde.second_moment_exact(spec.theta, sc.t_final),
                           0.0))
    with open(os.path.join(cfg.out, "stats.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value", "stderr"])
        for q, v, s in stats_rows:
            w.writerow([q, _g(v), _g(s)])
    if fields:
        noise.dump_binary(os.path.join(cfg.out, "fields.bin"), np.concatenate(fields))
    for q, v, s in stats_rows:
        print(f"{q} {v:.10g} +- {s:.3g}")
    return 0


def cmd_moments(cfg):
    from . import feynman_kac as fk

    spec = covariance_from(cfg)
    rep = check_admissible(spec)
    t, seed = cfg.get("run.t", float), cfg.get("run.seed", int)
    n_mc = cfg.get("moments.n_mc", int)
    rows = []
    for m in [int(v) for v in cfg.floats("moments.m")]:
        if spec.white_time:
            eps = cfg.floats("moments.eps") or None
            est = fk.annealed_moment_white_time(m, t, spec, eps, n_mc=n_mc, seed=seed)
            rows += [(t, spec.theta, rep.label, e) for e in est.per_eps]
            rows.append((t, spec.theta, rep.label, est.extrapolated))
            e = est.extrapolated
        else:
            eps = cfg.get("moments.eps", float)
            e = fk.annealed_moment_fractional(m, t, spec, n_mc, seed,
                                              n_steps=cfg.get("moments.n_steps", int), eps=eps)
            rows.append((t, spec.theta, rep.label, e))
        print(f"m={m} E u^m = {e.value:.10g} +- {e.stderr:.3g}" + (f"  [{'; '.join(e.flags)}]"
                                                                     if e.flags else ""))
    write_manifest(cfg, {"regime": rep.label})
    fk.write_moment_csv(os.path.join(cfg.out, "moments.csv"), rows)
    return 0


def cmd_variational(cfg):
    from . import variational as va

    spec = covariance_from(cfg)
    check_admissible(spec)
    prob = cfg.values["variational.problem"]
    L, nx = cfg.get("variational.L", float), cfg.get("variational.nx", int)
    seed, ns = cfg.get("run.seed", int), cfg.get("variational.n_starts", int)
    beta = float("nan")
    if prob == "E":
        r = va.solve_E_time_independent(spec.space, L=L, nx=nx, seed=seed, n_starts=ns)
    elif prob == "E_time":
        r = va.solve_E_time_dependent(spec, L=L, nx=nx, ns=cfg.get("variational.ns", int),
                                      seed=seed, n_starts=ns)
    elif prob == "M":
        beta = cfg.get("variational.beta", float)
        r = va.solve_M(beta, spec.space, L=L, nx=nx, seed=seed, n_starts=ns)
    else:
        raise ConfigError(f"variational.problem must be E, E_time or M, got {prob!r}")
    a0 = 0.0 if spec.time.kind != "fractional" else spec.time.alpha0
    a = spec.alpha if spec.space.kind != "smooth" else 0.0
    write_manifest(cfg, {"L.resolved": _g(r.L), "nx.resolved": r.nx})
    va.write_result_csv(os.path.join(cfg.out, "variational.csv"),
                        [(prob, a0, a, spec.d, beta, r)])
    print(repr(float(r.value)))
    return 0


def cmd_scan(cfg):
    from . import asymptotics as asy

    spec = covariance_from(cfg)
    check_admissible(spec)
    sc = _solve_config(cfg, spec)
    L = sc.grid.L
    k = cfg.get("scan.centers", int)
    centers = [-L / 2 + j * L / k for j in range(k)]
    recs = asy.scan_experiment(sc, cfg.get("run.seed", int), cfg.get("scan.realizations", int),
                               cfg.floats("scan.R"), centers=centers,
                               workers=cfg.get("run.workers", int))
    fit = asy.fit_exponent(recs, min_decades=cfg.get("scan.min_decades", float),
                           seed=cfg.get("run.seed", int))
    write_manifest(cfg)
    asy.write_scan_csv(os.path.join(cfg.out, "scan.csv"), recs)
    with open(os.path.join(cfg.out, "fit.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["exponent", "half_width", "prefactor", "n", "method"])
        w.writerow([_g(fit.exponent), _g(fit.half_width), _g(fit.prefactor), fit.n, fit.method])
    asy.write_gnuplot(os.path.join(cfg.out, "scan.gp"), "scan.csv", "R", "max_log_u",
                      "max log u over |x| <= R", logx=True)
    print(f"exponent b = {fit.exponent:.4f} +- {fit.half_width:.4f} ({fit.method})")
    print(f"prefactor a = {fit.prefactor:.4f}")
    if spec.space.kind == "dirac":
        ref = asy.limit_constant("th1.7", theta=spec.theta, t=sc.t_final)
        print(f"limit constant for comparison: {ref:.4f} (exponent 2/3)")
    return 0


def _theorem_params(cfg):
    from .asymptotics import Params

    return Params(theta=cfg.get("theta", float), t=cfg.get("run.t", float),
                  d=cfg.get("space.d", int), alpha0=cfg.get("time.alpha0", float) or 0.0,
                  alpha=cfg.get("space.alpha", float), gamma0=cfg.get("theorem.gamma0", float),
                  time_integral=cfg.get("theorem.time_integral", float),
                  E=cfg.get("theorem.E", float))


def cmd_constants(cfg):
    from . import asymptotics as asy

    tid = asy.TheoremId.parse(cfg.values["theorem.id"])
    p = _theorem_params(cfg)
    if tid in asy.LIMIT_IDS:
        v = asy.limit_constant(tid, p)
        kind = "limit"
    elif tid in asy.MOMENT_IDS:
        v = asy.moment_constant(tid, p)
        kind = "moment"
    else:
        raise ConfigError(f"{tid.value} is a tail theorem; use the tail subcommand")
    write_manifest(cfg)
    with open(os.path.join(cfg.out, "constants.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theorem", "kind", "value"])
        w.writerow([tid.value, kind, _g(v)])
    print(repr(float(v)))
    return 0


def cmd_tail(cfg):
    from . import asymptotics as asy

    tid = asy.TheoremId.parse(cfg.values["theorem.id"])
    if tid not in asy.TAIL_IDS:
        raise ConfigError(f"{tid.value} is not a tail theorem; valid: "
                          + ", ".join(t.value for t in asy.TAIL_IDS))
    p = _theorem_params(cfg)
    lam = cfg.get("theorem.lam", float)
    lit = asy.tail_rate(tid, lam, p)
    leg = asy.tail_rate(tid, lam, p, via="legendre")
    write_manifest(cfg)
    with open(os.path.join(cfg.out, "tail.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theorem", "lambda", "exponent_q", "rate", "rate_legendre"])
        w.writerow([tid.value, _g(lam), _g(asy.tail_exponent(tid, p)), _g(lit), _g(leg)])
    print(repr(float(lit)))
    return 0


def cmd_selftest(cfg):
    from .selftest import run_all

    write_manifest(cfg)
    return 0 if run_all() else 3


COMMANDS = {"simulate": cmd_simulate, "moments": cmd_moments, "variational": cmd_variational,
            "scan": cmd_scan, "tail": cmd_tail, "constants": cmd_constants,
            "selftest": cmd_selftest}


def run(cfg):
    return COMMANDS[cfg.subcommand](cfg)


def _fail(code, e):
    mod = type(e).__module__
    if not mod.startswith("pamlab"):
        mod = "pamlab"
    print(f"{mod}: {e}", file=sys.stderr)
    return code


def main(argv=None):
    from .spde import AdmissibilityError, InstabilityError
    from .variational import ConvergenceError
    from .noise import GridTooCoarse
    from .feynman_kac import FieldDomainError

    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        return run(cfg)
    except AdmissibilityError as e:
        return _fail(4, e)
    except (InstabilityError, ConvergenceError, GridTooCoarse, FieldDomainError,
            FloatingPointError, np.linalg.LinAlgError) as e:
        return _fail(3, e)
    except (ConfigError, ValueError, KeyError) as e:
        return _fail(2, e)


if __name__ == "__main__":
    sys.exit(main())
