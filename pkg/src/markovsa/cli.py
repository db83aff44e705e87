"""Command-line interface: ``markovsa <subcommand> [options]``.

Exit status is 0 on success, 1 for invalid input (flags, configs, domain
checks) and 2 for numerical failures (divergence, infeasible conditioning,
vacuous or overflowing bounds).
"""

import argparse
import configparser
import dataclasses
import math
import os
import sys

import numpy as np

from . import __version__, problems, reports
from .bounds import CLASSICAL_FACTOR, PAPER_FACTOR, lockin_lower_bound, n0_thresholds, bound_report
from .bounds import segment_probability, tightness_series
from .complexity import (ComplexityInputs, capital_N0, complexity_report, parse_grid, plot_sweeps, sweep_k,
                         write_sweep_csv)
from .engine import ProblemSpec, run_manifest, simulate, sup_norm_monitor, write_trajectory_csv
from .errors import BoundVacuous, ConfigError, NumericalError, ValidationError
from .geometry import Ball
from .markov import decompose, poisson_batch
from .montecarlo import ConvergenceCriterion, estimate_lockin, tightness_diagnostics
from .schedules import LogPower, PowerLaw, parse_schedule, s_tail, s_tail_array
from .twotimescale import TwoTimescaleSpec, coupled_partition, nested_bound, simulate_coupled_many
from .twotimescale import tracking_error, write_tracking_csv
from .rng import replication_seeds

# section -> key -> (argparse dest, converter)
CONFIG_KEYS = {
    "run": {"benchmark": ("benchmark", str), "seed": ("seed", int), "out": ("out", str),
            "format": ("format", str), "threads": ("threads", int), "reps": ("reps", int),
            "steps": ("steps", int)},
    "schedule": {"a": ("schedule", str), "b": ("schedule_b", str)},
    "geometry": {"eps": ("eps", float), "eps1": ("eps1", float), "delta_B": ("delta_B", float)},
    "constants": {"L": ("L", float), "C_R": ("C_R", float), "C_R_dprime": ("C_R_dprime", float),
                  "C_hat": ("C_hat", float), "T": ("T", float), "azuma": ("azuma", str), "nu": ("nu", float)},
    "lockin": {"n0": ("n0", str), "n_total": ("n_total", int), "mode": ("mode", str),
               "eta": ("eta", float), "level": ("level", float)},
}


@dataclasses.dataclass
class RunConfig:
    """Validated sectioned key/value settings, keyed as (section, key) -> typed value."""

    values: dict

    @classmethod
    def from_text(cls, text, source="<config>"):
        cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string(text, source)
        except configparser.MissingSectionHeaderError as e:
            raise ConfigError("key outside any [section]", e.lineno, 1) from None
        except configparser.DuplicateOptionError as e:
            raise ConfigError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno, 1) from None
        except configparser.DuplicateSectionError as e:
            raise ConfigError(f"duplicate section [{e.section}]", e.lineno, 1) from None
        except configparser.ParsingError as e:
            line = e.errors[0][0] if e.errors else None
            raise ConfigError("malformed line (expected 'key = value')", line, 1) from None
        where = _locate(text)
        values = {}
        for sec in cp.sections():
            if sec not in CONFIG_KEYS:
                raise ConfigError(f"unknown section [{sec}]", *where.get((sec, None), (None, None)))
            for key, raw in cp.items(sec):
                if key not in CONFIG_KEYS[sec]:
                    line, _ = where.get((sec, key), (None, None))
                    raise ConfigError(f"unknown key {key!r} in [{sec}]", line, 1)
                conv = CONFIG_KEYS[sec][key][1]
                try:
                    values[(sec, key)] = conv(raw)
                except ValueError:
                    raise ConfigError(f"bad value {raw!r} for {sec}.{key}", *where.get((sec, key), (None, None))) from None
        return cls(values)

    def to_text(self):
        out = []
        for sec in CONFIG_KEYS:
            keys = [k for k in CONFIG_KEYS[sec] if (sec, k) in self.values]
            if not keys:
                continue
            out.append(f"[{sec}]")
            out += [f"{k} = {self.values[(sec, k)]!r}" if isinstance(self.values[(sec, k)], float)
                    else f"{k} = {self.values[(sec, k)]}" for k in keys]
            out.append("")
        return "\n".join(out)

    def defaults(self):
        return {CONFIG_KEYS[s][k][0]: v for (s, k), v in self.values.items()}


def _locate(text):
    """(section, key) -> (line, column of the value), 1-based; (section, None) -> header line."""
    where, sec = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s.startswith("[") and "]" in s:
            sec = s[1 : s.index("]")].strip()
            where[(sec, None)] = (i, line.index("[") + 1)
        elif "=" in line:
            key = line.split("=", 1)[0].strip()
            col = line.index("=") + 1
            while col < len(line) and line[col] == " ":
                col += 1
            where[(sec, key)] = (i, col + 1)
    return where


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto; never changes results")
    p.add_argument("--config", help="sectioned key = value file")


def _floats(text):
    return [float(x) for x in str(text).split(",")]


def build_parser():
    parser = ArgParser(prog="markovsa", description="Stochastic approximation with Markov iterate-dependent noise")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgParser)
    subs = {}

    p = subs["simulate"] = sub.add_parser("simulate", help="one trajectory plus the Gronwall envelope check")
    _common(p)
    p.add_argument("--benchmark", default="P1")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--schedule")
    p.add_argument("--n-start", type=int, dest="n_start")
    p.add_argument("--theta0")
    p.add_argument("--y0", default="0")
    p.add_argument("--stride", type=int, default=1)

    p = subs["lockin"] = sub.add_parser("lockin", help="Monte Carlo lock-in estimate next to the bound")
    _common(p)
    p.add_argument("--benchmark", default="P2")
    p.add_argument("--n0", default="1000", help="one value or a comma list")
    p.add_argument("--n-total", type=int, dest="n_total", help="default 10 n0")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--mode", choices=("restart", "rejection"), default="restart")
    p.add_argument("--eta", type=float)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--schedule")
    _bound_flags(p)

    p = subs["bounds"] = sub.add_parser("bounds", help="constants, n0 thresholds and the lock-in bound")
    _common(p)
    p.add_argument("--benchmark", default="P2")
    p.add_argument("--schedule")
    _bound_flags(p)

    p = subs["poisson-check"] = sub.add_parser("poisson-check", help="Poisson residuals and the noise split")
    _common(p)
    p.add_argument("--benchmark", default="P1")
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--grid", type=int, default=41)
    p.add_argument("--schedule")

    p = subs["tight"] = sub.add_parser("tight", help="tightness diagnostics and the logpower series")
    _common(p)
    p.add_argument("--benchmark", default="P1")
    p.add_argument("--n-grid", dest="n_grid", default="100,300,1000,3000,10000")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--p", type=float, default=1.0, help="logpower exponent for the series")
    p.add_argument("--schedule")

    p = subs["track"] = sub.add_parser("track", help="two-timescale run and the nested bound")
    _common(p)
    p.add_argument("--benchmark", default="P3")
    p.add_argument("--steps", type=int, default=100000)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--n0", type=int, default=1000)
    p.add_argument("--segments", type=int, default=5)
    p.add_argument("--delta", type=float, default=0.1, help="deviation level for both timescales")
    p.add_argument("--stride", type=int, default=100)

    p = subs["complexity"] = sub.add_parser("complexity", help="n0, N'0, N0 and the k sweep")
    _common(p)
    p.add_argument("--M", default="1", help="one value or a comma list")
    p.add_argument("--eps", default="0.1", help="one value or a comma list")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--k", type=float, default=0.75)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--sweep", help="lo:hi:step or comma list of k")

    p = subs["problems"] = sub.add_parser("problems", help="benchmark registry")
    _common(p)
    p.add_argument("action", choices=("list",))
    return parser, subs


def _bound_flags(p):
    p.add_argument("--azuma", choices=("paper", "classical"), default="paper")
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--T", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--C-R", type=float, dest="C_R")
    p.add_argument("--C-R-dprime", type=float, dest="C_R_dprime")
    p.add_argument("--C-hat", type=float, dest="C_hat")
    p.add_argument("--eps", type=float)
    p.add_argument("--eps1", type=float)
    p.add_argument("--delta-B", type=float, dest="delta_B")


def _path(args, name):
    reports.ensure_dir(args.out)
    return os.path.join(args.out, f"{name}.{args.format}")


def _bench(args):
    b = problems.get(args.benchmark)
    geo = {k: getattr(args, k, None) for k in ("eps", "eps1", "delta_B")}
    geo = {k: v for k, v in geo.items() if v is not None}
    if geo and b.geometry is not None:
        b.geometry = dataclasses.replace(b.geometry, **geo)
    if getattr(args, "L", None) is not None:
        b.constants["L"] = args.L
    return b


def _sched(args, bench, attr="schedule"):
    text = getattr(args, attr, None)
    if text:
        return parse_schedule(text, base_dir=os.getcwd())
    return bench.schedule


def _single(bench):
    if not isinstance(bench.spec, ProblemSpec):
        raise ConfigError(f"{bench.name} is a two-timescale benchmark; use the track subcommand")
    return bench.spec


def _constants(args, bench):
    return bench.bound_constants(
        T=args.T, azuma_factor=PAPER_FACTOR if args.azuma == "paper" else CLASSICAL_FACTOR,
        C_hat=args.C_hat, C_R=args.C_R, C_R_dprime=args.C_R_dprime,
    )


def cmd_simulate(args):
    bench = _bench(args)
    spec = _single(bench)
    sched = _sched(args, bench)
    n_start = args.n_start if args.n_start is not None else bench.n_start
    theta0 = _floats(args.theta0) if args.theta0 else list(bench.theta0)
    y0 = args.y0 if args.y0 == "stationary" else int(args.y0)
    traj = simulate(spec, sched, theta0, y0, n_start, args.steps, args.seed, stride=args.stride)
    chk = sup_norm_monitor(traj, spec.K_tilde, sched)
    path = _path(args, "trajectory")
    if args.format == "csv":
        write_trajectory_csv(traj, path)
    else:
        reports.write_json({"n": traj.n, "theta": traj.theta, "state": traj.states}, path)
    reports.write_mapping({"gronwall": chk, "diverged": traj.diverged, "diverged_at": traj.diverged_at},
                          _path(args, "gronwall"), args.format)
    reports.write_json(run_manifest(spec, sched, [args.seed], {"steps": args.steps, "n_start": n_start}),
                       os.path.join(args.out, "manifest.json"))
    print(f"{bench.name}: {len(traj.n)} records, sup|theta| = {chk.sup_norm:.6g}, "
          f"gronwall {'holds' if chk.holds else 'VIOLATED'}, diverged = {traj.diverged}")
    return 2 if traj.diverged else 0


def cmd_lockin(args):
    bench = _bench(args)
    spec = _single(bench)
    sched = _sched(args, bench)
    consts = _constants(args, bench)
    conv = ConvergenceCriterion(args.eta if args.eta is not None else bench.geometry.eps)
    rows = []
    for n0 in (int(x) for x in str(args.n0).split(",")):
        bound = lockin_lower_bound(consts, float(s_tail(sched, n0)), args.nu)
        n_total = args.n_total if args.n_total is not None else 10 * n0
        est = estimate_lockin(spec, sched, bench.geometry, n0, n_total, args.reps, args.mode, args.seed, conv,
                              args.level, bound, theta0=list(bench.theta0), threads=args.threads)
        rows.append(est)
        print(f"n0={n0}: p_hat={est.p_hat:.4f} [{est.wilson_lo:.4f}, {est.wilson_hi:.4f}] bound={bound:.6g}")
    table = {h: [getattr(e, a) for e in rows] for h, a in
             [("n0", "n0"), ("R", "R"), ("mode", "mode"), ("p_hat", "p_hat"), ("lo", "wilson_lo"),
              ("hi", "wilson_hi"), ("bound", "theoretical_bound"), ("eta_conv", "eta_conv"), ("horizon", "horizon")]}
    reports.write_table(table, _path(args, "lockin"), args.format)
    return 0


def cmd_bounds(args):
    bench = _bench(args)
    sched = _sched(args, bench)
    consts = _constants(args, bench)
    rep = bound_report(consts, sched, args.nu)
    reports.write_mapping(rep, _path(args, "bounds"), args.format)
    th = rep["thresholds"]
    print(f"n0 = {th['n0']} (conditions: {th['n0_1']}, {th['n0_2']}, {th['n0_3']}); "
          f"s(n0) = {rep['s_n0']:.6g}; lock-in lower bound = {rep['lockin_lower_bound']:.6g}")
    return 0


def cmd_poisson(args):
    bench = _bench(args)
    spec = _single(bench)
    sched = _sched(args, bench)
    lo, hi = spec.audit_box
    grid = np.linspace(lo, hi, args.grid).reshape(-1, 1) if spec.dim == 1 else \
        np.random.default_rng(args.seed).uniform(lo, hi, (args.grid, spec.dim))
    pb = poisson_batch(spec.kernel, spec.f, grid)
    traj = simulate(spec, sched, list(bench.theta0), 0, bench.n_start, args.steps, args.seed)
    dec = decompose(traj, spec.kernel, spec.f, sched)
    out = {
        "max_residual": float(pb.residuals().max()),
        "max_normalization": float(pb.normalizations().max()),
        "decomposition_error": dec.reconstruction_error(),
        "zeta1_conditional_mean_max": float(np.abs(dec.zeta1_conditional_means()).max()),
        "grid_points": len(grid),
        "steps": args.steps,
    }
    reports.write_mapping(out, _path(args, "poisson"), args.format)
    print(" ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in out.items()))
    return 0


def cmd_tight(args):
    bench = _bench(args)
    spec = _single(bench)
    sched = _sched(args, bench)
    grid = [int(x) for x in args.n_grid.split(",")]
    region = Ball((0.0,) * spec.dim, args.radius)
    rep = tightness_diagnostics(spec, sched, lambda th: np.sum(th**2, axis=1), region, grid, args.reps,
                                args.seed, list(bench.theta0), n_start=bench.n_start, threads=args.threads)
    reports.write_table({"n": rep.n, "p_in_K": rep.p_in, "p_in_K_se": rep.p_in_se, "phi_mean": rep.phi_mean,
                         "phi_se": rep.phi_se}, _path(args, "tightness"), args.format)
    series = tightness_series(spec.K_tilde, LogPower(args.p), float(np.linalg.norm(bench.theta0)), tol=1e-4)
    reports.write_json({"diagnostics": {"slope": rep.slope, "failure": rep.failure, "diverged": rep.diverged},
                        "series": series}, os.path.join(args.out, "tightness_series.json"))
    print(f"tightness {'FAILURE' if rep.failure else 'ok'} (slope {rep.slope:.3g}, diverged {rep.diverged}); "
          f"series value {series.value:.6g} (tail {series.tail:.2g})")
    return 0


def _track_bound(spec, n0, segments, delta):
    """Nested bound from per-segment Azuma probabilities with increments bounded by the noise range."""
    cp = coupled_partition(spec.sched_a, spec.sched_b, n0, spec.T_s, spec.T_c, segments)
    noise = 2 * (spec.slow.K_prime + float(np.abs(spec.slow.kernel.state_values).max()))
    fast_noise = 2 * (spec.K2 + float(np.abs(spec.fast_kernel.state_values).max()))

    def probs(sched, part, c):
        s = s_tail_array(sched, part.n[0], part.n[-1])
        out = []
        for m in range(part.count):
            seg = s[part.n[m] - part.n[0]] - s[part.n[m + 1] - part.n[0]]
            out.append(min(0.999999, 2 * math.exp(-delta**2 / (2 * c**2 * seg))) if seg > 0 else 0.0)
        return out

    ps = probs(spec.sched_a, cp.slow, noise)
    pc = probs(spec.sched_b, cp.coupled, fast_noise)
    l = [min(x, len(ps) - 1) for x in cp.l[: len(pc)]]
    try:
        value = nested_bound(ps, pc, l)
        note = ""
    except BoundVacuous as e:
        value, note = None, str(e)
    return {"n0": n0, "p_s": ps, "p_c": pc, "l": l, "bound": value, "saturated": cp.saturated, "note": note}


def cmd_track(args):
    bench = problems.get(args.benchmark)
    if not isinstance(bench.spec, TwoTimescaleSpec):
        raise ConfigError(f"{bench.name} is not a two-timescale benchmark")
    spec = bench.spec
    spec.audit()
    seeds = replication_seeds(args.seed, args.reps)
    trs = simulate_coupled_many(spec, bench.theta0[0], bench.theta0[1], (0, 0), args.steps, seeds,
                                n_start=bench.n_start, stride=args.stride)
    summaries = [tracking_error(tr, spec.lambda_map) for tr in trs]
    write_tracking_csv(trs[0], summaries[0], os.path.join(reports.ensure_dir(args.out), "tracking.csv"))
    bound = _track_bound(spec, args.n0, args.segments, args.delta)
    reports.write_json({"trailing_mean": [s.trailing_mean for s in summaries],
                        "trailing_max": [s.trailing_max for s in summaries], "nested_bound": bound,
                        "seeds": seeds}, os.path.join(args.out, "track.json"))
    worst = max(s.trailing_mean for s in summaries)
    shown = "vacuous" if bound["bound"] is None else f"{bound['bound']:.6g}"
    print(f"{bench.name}: worst trailing-10% tracking error {worst:.4g} over {len(seeds)} seed(s); "
          f"nested bound {shown}")
    return 0


def cmd_complexity(args):
    Ms, epss = _floats(args.M), _floats(args.eps)
    if args.sweep:
        grid = parse_grid(args.sweep)
        results = [sweep_k(M, e, args.gamma, grid, args.alpha) for M in Ms for e in epss]
        reports.ensure_dir(args.out)
        for r in results:
            tag = f"M{r.M:g}_eps{r.eps:g}"
            if args.format == "csv":
                write_sweep_csv(r, os.path.join(args.out, f"sweep_{tag}.csv"))
            else:
                reports.write_json(r, os.path.join(args.out, f"sweep_{tag}.json"))
            print(f"M={r.M:g} eps={r.eps:g}: argmin k = {r.argmin_k:g}")
        plot_sweeps(results, os.path.join(args.out, "sweep.svg"))
        return 0
    out = []
    for M in Ms:
        for e in epss:
            rep = complexity_report(ComplexityInputs(M, e, args.gamma, args.k, args.alpha))
            N0 = capital_N0(PowerLaw(args.k), rep.n0, args.alpha)
            out.append({"M": M, "eps": e, "gamma": args.gamma, "k": args.k, "n0": rep.n0, "terms": rep.terms,
                        "N_prime0": rep.N_prime0, "N0": N0, "T_star": rep.T_star, "min_value": rep.min_value})
            print(f"M={M:g} eps={e:g}: n0={rep.n0} N'0={rep.N_prime0} N0={N0} T*={rep.T_star:.6f} "
                  f"min={rep.min_value:.6f}")
    reports.write_mapping({"reports": out} if args.format == "json" else out[0], _path(args, "complexity"),
                          args.format)
    return 0


def cmd_problems(args):
    rows = problems.list_benchmarks()
    width = max(len(n) for n, _ in rows)
    for name, desc in rows:
        print(f"{name.ljust(width)}  {desc}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "lockin": cmd_lockin, "bounds": cmd_bounds, "poisson-check": cmd_poisson,
            "tight": cmd_tight, "track": cmd_track, "complexity": cmd_complexity, "problems": cmd_problems}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, subs = build_parser()
        args = parser.parse_args(argv)
        if args.config:
            try:
                with open(args.config) as fh:
                    cfg = RunConfig.from_text(fh.read(), args.config)
            except OSError as e:
                raise ConfigError(f"cannot read config: {e}") from None
            sp = subs[args.command]
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in cfg.defaults().items() if k in known})
            args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
