"""Monte Carlo estimates: conditioned lock-in probability, tightness
diagnostics, an occupancy proxy, and Wilson score intervals."""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .engine import simulate_batch
from .errors import ConditioningInfeasible, DomainError
from .rng import generator, replication_seeds

BLOCK = 128


def wilson_interval(successes, trials, z=1.959963984540054):
    if trials < 1 or not 0 <= successes <= trials:
        raise DomainError("wilson interval needs 0 <= successes <= trials, trials >= 1")
    n = float(trials)
    p = successes / n
    z2 = z * z
    centre = p + z2 / (2 * n)
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    den = 1 + z2 / n
    lo = max(0.0, (centre - half) / den)
    hi = min(1.0, (centre + half) / den)
    return min(lo, p), max(hi, p)


def z_for(level):
    if not 0 < level < 1:
        raise DomainError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Success if dist(theta_n, H) <= eta at every checkpoint with n >= (1 - tail) n_total."""

    eta: float
    tail_fraction: float = 0.1
    checkpoints: int = 200


@dataclass
class LockInEstimate:
    n0: int
    R: int
    successes: int
    mode: str
    p_hat: float
    wilson_lo: float
    wilson_hi: float
    level: float
    theoretical_bound: float
    seed: int
    eta_conv: float
    horizon: int
    acceptance_rate: float = 1.0
    attempts: int = 0
    note: str = ""

    def row(self):
        return [self.n0, self.R, self.mode, self.p_hat, self.wilson_lo, self.wilson_hi,
                self.theoretical_bound, self.eta_conv, self.horizon]


ESTIMATE_HEADER = ["n0", "R", "mode", "p_hat", "lo", "hi", "bound", "eta_conv", "horizon"]


def write_estimates_csv(estimates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_HEADER)
        for e in estimates:
            w.writerow([repr(v) if isinstance(v, float) else v for v in e.row()])


def _record_points(n_from, n_total, crit):
    """Step offsets (from n_from) of the checkpoints inside the judged tail window."""
    start = max(n_from, int(math.ceil((1 - crit.tail_fraction) * n_total)))
    pts = np.unique(np.linspace(start, n_total, crit.checkpoints).round().astype(np.int64))
    return pts - n_from


def _judge(batch, geom, crit, n_total):
    judged = batch.n >= (1 - crit.tail_fraction) * n_total
    th = batch.theta[:, judged]
    R, K, d = th.shape
    dist = geom.H.distance(th.reshape(-1, d)).reshape(R, K)
    ok = np.all(np.nan_to_num(dist, nan=np.inf) <= crit.eta, axis=1)
    return ok & ~batch.diverged


def _map_blocks(fn, count, threads, block=BLOCK):
    chunks = [(i, min(i + block, count)) for i in range(0, count, block)]
    if threads == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=None if threads == 0 else threads) as pool:
        return list(pool.map(fn, chunks))


def estimate_lockin(spec, sched, geom, n0, n_total, R, mode="restart", seed=0, conv=None, level=0.95,
                    bound=math.nan, theta0=None, y0="stationary", threads=1, max_attempt_factor=50):
    """Fraction of R paths that settle near H, given theta_{n0} in B.

    ``restart`` draws theta_{n0} uniformly on B and starts the step count at
    n0. ``rejection`` runs from the schedule offset from ``theta0`` (a point,
    or a callable ``rng -> point``) and keeps paths with theta_{n0} in B.
    """
    if R < 1:
        raise DomainError("need at least one replication")
    if n_total <= n0 or n0 < sched.offset:
        raise DomainError("need offset <= n0 < n_total")
    conv = conv or ConvergenceCriterion(geom.eps)
    rec = _record_points(n0, n_total, conv)

    if mode == "restart":
        seeds = replication_seeds(seed, R)

        def run(bounds):
            lo, hi = bounds
            gens = [generator(s) for s in seeds[lo:hi]]
            th0 = np.concatenate([geom.B.sample(g, 1) for g in gens])
            b = simulate_batch(spec, sched, th0, y0, n0, n_total - n0, gens, record_mart=False,
                               seeds=seeds[lo:hi], record_at=rec)
            return _judge(b, geom, conv, n_total)

        ok = np.concatenate(_map_blocks(run, R, threads))
        attempts, note = R, "theta_n0 ~ uniform(B); differs from conditioning the original initial law"
    elif mode == "rejection":
        ok, attempts = _rejection(spec, sched, geom, n0, n_total, R, seed, conv, theta0, y0, threads,
                                  max_attempt_factor, rec)
        note = "paths from the schedule offset kept when theta_n0 lies in B"
    else:
        raise DomainError(f"unknown conditioning mode {mode!r}")

    kept = len(ok)
    succ = int(ok.sum())
    lo, hi = wilson_interval(succ, kept, z_for(level))
    return LockInEstimate(int(n0), kept, succ, mode, succ / kept, lo, hi, level, float(bound), int(seed),
                          float(conv.eta), int(n_total), kept / attempts, attempts, note)


def _rejection(spec, sched, geom, n0, n_total, R, seed, conv, theta0, y0, threads, factor, rec):
    if theta0 is None:
        raise DomainError("rejection mode needs an initial law theta0")
    start = sched.offset
    seeds = replication_seeds(seed, R * factor)
    results = []
    tried = 0

    def run(bounds):
        lo, hi = bounds
        gens = [generator(s) for s in seeds[lo:hi]]
        th0 = np.stack([np.atleast_1d(theta0(g)) if callable(theta0) else np.atleast_1d(theta0) for g in gens])
        b = simulate_batch(spec, sched, th0.astype(float), y0, start, n0 - start, gens, record_mart=False,
                           record_at=[])
        at = b.theta[:, -1]
        inside = ~b.diverged & geom.B.contains(np.nan_to_num(at, nan=np.inf))
        idx = np.flatnonzero(inside)
        if not idx.size:
            return np.zeros(0, dtype=bool)
        g_in = [gens[i] for i in idx]
        b2 = simulate_batch(spec, sched, at[idx], b.states[idx, -1], n0, n_total - n0, g_in,
                            record_mart=False, record_at=rec)
        return _judge(b2, geom, conv, n_total)

    while tried < R * factor and sum(len(r) for r in results) < R:
        need = R - sum(len(r) for r in results)
        batch = min(max(need, BLOCK), R * factor - tried)
        parts = _map_blocks(lambda c: run((c[0] + tried, c[1] + tried)), batch, threads)
        results.extend(parts)
        tried += batch
    ok = np.concatenate(results) if results else np.zeros(0, dtype=bool)
    if ok.size == 0:
        raise ConditioningInfeasible(f"no path reached B at n0 = {n0} in {tried} attempts")
    return ok[:R], tried


@dataclass
class TightnessReport:
    n: np.ndarray
    p_in: np.ndarray
    p_in_se: np.ndarray
    phi_mean: np.ndarray
    phi_se: np.ndarray
    diverged: int
    slope: float
    failure: bool

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "p_in_K", "p_in_K_se", "phi_mean", "phi_se"])
            for row in zip(self.n, self.p_in, self.p_in_se, self.phi_mean, self.phi_se):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def tightness_diagnostics(spec, sched, phi, K_eps, n_grid, R, seed, theta0, y0="stationary", n_start=None,
                          threads=1, burn_in=0.5):
    """P(theta_n in K_eps) and E[phi(theta_n)] over R paths at each n of ``n_grid``.

    Diverged paths count as outside K_eps with phi = inf. ``slope`` is the
    least-squares slope of E[phi] against log n over the grid points past
    ``burn_in`` (as a fraction of the grid); a clearly positive slope or any
    divergence sets ``failure``.
    """
    n_start = sched.offset if n_start is None else n_start
    grid = np.asarray(sorted(int(n) for n in n_grid))
    if grid[0] < n_start:
        raise DomainError("n_grid starts before the simulation start")
    seeds = replication_seeds(seed, R)
    th0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    if len(th0) == 1:
        th0 = np.repeat(th0, R, axis=0)

    def run(bounds):
        lo, hi = bounds
        b = simulate_batch(spec, sched, th0[lo:hi], y0, n_start, int(grid[-1]) - n_start,
                           [generator(s) for s in seeds[lo:hi]], record_mart=False, seeds=seeds[lo:hi],
                           record_at=grid - n_start)
        sel = np.searchsorted(b.n, grid)
        return b.theta[:, sel], b.diverged

    parts = _map_blocks(run, R, threads)
    th = np.concatenate([p[0] for p in parts])
    div = np.concatenate([p[1] for p in parts])
    Rr, G, d = th.shape
    flat = th.reshape(-1, d)
    finite = np.all(np.isfinite(flat), axis=1)
    inside = np.zeros(len(flat), dtype=bool)
    inside[finite] = K_eps.contains(flat[finite])
    vals = np.full(len(flat), np.inf)
    vals[finite] = np.asarray(phi(flat[finite]), dtype=float).reshape(-1)
    inside, vals = inside.reshape(Rr, G), vals.reshape(Rr, G)
    p_in = inside.mean(axis=0)
    p_se = np.sqrt(p_in * (1 - p_in) / Rr)
    with np.errstate(invalid="ignore"):
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(Rr) if Rr > 1 else np.zeros(G)
    tail = slice(int(burn_in * G), G) if G - int(burn_in * G) >= 2 else slice(0, G)
    x, yv = np.log(grid[tail].astype(float)), mean[tail]
    if np.all(np.isfinite(yv)) and len(x) >= 2:
        slope = float(np.polyfit(x, yv, 1)[0])
        rise = yv[-1] - yv[0] > 2 * math.hypot(se[tail][0], se[tail][-1])
    else:
        slope, rise = math.inf, True
    failure = bool(div.any() or (slope > 0 and rise))
    return TightnessReport(grid, p_in, p_se, mean, se, int(div.sum()), slope, failure)


def occupancy_proxy(batch, region):
    """Per-path fraction of recorded checkpoints inside ``region``.

    A frequency proxy only: the divergent-sum hypotheses on
    P(theta_n in B | F_{n-1}) need the conditional law, which single paths
    do not reveal.
    """
    R, K, d = batch.theta.shape
    flat = batch.theta.reshape(-1, d)
    ok = np.all(np.isfinite(flat), axis=1)
    inside = np.zeros(len(flat), dtype=bool)
    inside[ok] = region.contains(flat[ok])
    return inside.reshape(R, K).mean(axis=1)
