"""Coupled fast/slow recursions

    theta_{n+1} = theta_n + a(n) [h(theta_n, Z1_n) + M1_{n+1}]
    w_{n+1}     = w_n     + b(n) [g(theta_n, w_n, Z2_n) + M2_{n+1}]

with tracking error |w_n - lambda(theta_n)|, the coupled segmentation and the
nested product bound built from per-segment probabilities.

The fast variable draws from PCG64(seed) exactly as the single-timescale
engine does, and the slow variable from a separate stream. With a == 0 and
M1 == 0 the fast path is therefore bitwise the engine path with theta frozen.
"""

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .engine import DIVERGENCE_NORM, ProblemSpec
from .errors import BoundVacuous, DomainError
from .markov import ConstantKernel, KernelFamily, sample_next
from .odeflow import partition
from .rng import UniformBlocks, generator, slow_stream_seed
from .schedules import s_tail


@dataclass
class TwoTimescaleSpec:
    slow: ProblemSpec  # f is h(theta, z1); kernel Z1 indexed by theta
    fast_dim: int
    g: Callable  # (theta (R,d), w (R,k), z2 (R,m2)) -> (R,k)
    fast_kernel: KernelFamily  # indexed by concatenated (theta, w)
    sched_a: object
    sched_b: object
    lambda_map: Callable  # theta (N,d) -> (N,k)
    K1: float
    fast_mart: Optional[Callable] = None  # (theta_w (R,d+k), u) -> (R,k)
    fast_mart_dim: int = 0
    K2: float = 0.0
    T_s: float = 1.0
    T_f: float = 1.0
    name: str = "custom-2ts"

    @property
    def T_c(self):
        return max(self.T_f, self.T_s + 1.0)

    def audit(self, n_lo=None, n_hi=10**5, lipschitz_pairs=200, box=None):
        """Step-size separation on [n_lo, n_hi] and a sampled Lipschitz estimate of lambda."""
        n_lo = max(self.sched_a.offset, self.sched_b.offset) if n_lo is None else n_lo
        ns = np.unique(np.geomspace(n_lo, n_hi, 200).astype(np.int64))
        ns = ns[ns < min(self.sched_a.end, self.sched_b.end)]
        a, b = self.sched_a.steps(ns), self.sched_b.steps(ns)
        if np.any(a >= b):
            bad = int(ns[np.argmax(a >= b)])
            raise DomainError(f"slow step a({bad}) is not below fast step b({bad})")
        ratio = a / b
        if len(ratio) > 1 and not ratio[-1] < ratio[0] and ratio[-1] > 0:
            raise DomainError("a(n)/b(n) does not decrease over the audited range")
        lo, hi = box or self.slow.audit_box
        rng = generator(0)
        x = rng.uniform(lo, hi, (lipschitz_pairs, self.slow.dim))
        y = rng.uniform(lo, hi, (lipschitz_pairs, self.slow.dim))
        dl = np.linalg.norm(self.lambda_map(x) - self.lambda_map(y), axis=1)
        dx = np.linalg.norm(x - y, axis=1)
        lip = float(np.max(dl / np.maximum(dx, 1e-300)))
        if not np.isfinite(lip):
            raise DomainError("lambda is not Lipschitz on the audit box")
        return {"ratio_first": float(ratio[0]), "ratio_last": float(ratio[-1]), "lambda_lipschitz": lip}

    def frozen_fast_spec(self, theta_star):
        """Single-timescale spec for w with theta held at ``theta_star``."""
        th = np.atleast_2d(np.asarray(theta_star, dtype=float))

        def join(w):
            return np.concatenate([np.repeat(th, len(w), axis=0), w], axis=1)

        kern = self.fast_kernel
        if not isinstance(kern, ConstantKernel):
            from .markov import CallableKernel

            kern = CallableKernel(lambda ws: self.fast_kernel.matrices(join(ws)), self.fast_kernel.state_values)
        mart = None if self.fast_mart is None else (lambda w, u: self.fast_mart(join(w), u))
        return ProblemSpec(self.fast_dim, lambda w, z: self.g(np.repeat(th, len(w), axis=0), w, z), kern,
                           self.K1, mart, self.fast_mart_dim, self.K2, name=f"{self.name}-frozen")


@dataclass
class CoupledTrajectory:
    n: np.ndarray
    theta: np.ndarray
    w: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    mart1: Optional[np.ndarray]
    mart2: Optional[np.ndarray]
    residual: Optional[np.ndarray]  # (a(n)/b(n)) h(theta_n, Z1_n)
    seed: int
    stride: int
    diverged: bool = False
    diverged_at: int = -1


def _rows(kernel, x, y):
    if isinstance(kernel, ConstantKernel):
        return kernel.P[y]
    return kernel.matrices(x)[np.arange(len(y)), y]


def simulate_coupled(spec, theta0, w0, z0s, n_steps, seed, n_start=None, stride=1):
    """Simultaneous update of both recursions from (theta0, w0, Z1_0, Z2_0)."""
    return simulate_coupled_many(spec, theta0, w0, z0s, n_steps, [seed], n_start, stride)[0]


def simulate_coupled_many(spec, theta0, w0, z0s, n_steps, seeds, n_start=None, stride=1):
    """Independent coupled paths, one pair of streams per seed, advanced together."""
    sa, sb = spec.sched_a, spec.sched_b
    n_start = max(sa.offset, sb.offset) if n_start is None else n_start
    if n_start < sa.offset or n_start < sb.offset:
        raise DomainError("n_start precedes a schedule offset")
    if n_start + n_steps > min(sa.end, sb.end):
        raise DomainError("explicit schedule shorter than the requested run")
    if stride < 1:
        raise DomainError("stride must be >= 1")
    slow = spec.slow
    R, d, k = len(seeds), slow.dim, spec.fast_dim
    theta = np.array(np.broadcast_to(np.asarray(theta0, dtype=float).reshape(-1, d), (R, d)))
    w = np.array(np.broadcast_to(np.asarray(w0, dtype=float).reshape(-1, k), (R, k)))
    z1 = np.array(np.broadcast_to(np.asarray(z0s[0], dtype=np.int64), (R,)))
    z2 = np.array(np.broadcast_to(np.asarray(z0s[1], dtype=np.int64), (R,)))
    sv1, sv2 = slow.kernel.state_values, spec.fast_kernel.state_values
    q1, q2 = slow.mart_dim, spec.fast_mart_dim
    fast_u = UniformBlocks([generator(s) for s in seeds], q2 + 1)
    slow_u = UniformBlocks([generator(slow_stream_seed(s)) for s in seeds], q1 + 1)
    a_all = sa.steps(np.arange(n_start, n_start + n_steps))
    b_all = sb.steps(np.arange(n_start, n_start + n_steps))

    rec = list(range(0, n_steps + 1, stride))
    if rec[-1] != n_steps:
        rec.append(n_steps)
    K = len(rec)
    th_r, w_r = np.full((R, K, d), np.nan), np.full((R, K, k), np.nan)
    z1_r, z2_r = np.full((R, K), -1, dtype=np.int64), np.full((R, K), -1, dtype=np.int64)
    full = stride == 1
    m1_r = np.full((R, n_steps, d), np.nan) if full else None
    m2_r = np.full((R, n_steps, k), np.nan) if full else None
    eps_r = np.full((R, n_steps, d), np.nan) if full else None
    th_r[:, 0], w_r[:, 0], z1_r[:, 0], z2_r[:, 0] = theta, w, z1, z2
    active = np.ones(R, dtype=bool)
    diverged_at = np.full(R, -1, dtype=np.int64)
    slot = 1
    for j in range(n_steps):
        a, b = a_all[j], b_all[j]
        uf = fast_u.next_row()
        us = slow_u.next_row()
        tw = np.concatenate([theta, w], axis=1)
        M1 = np.asarray(slow.mart(theta, us[:, :q1]), dtype=float) if slow.mart is not None else np.zeros((R, d))
        M2 = np.asarray(spec.fast_mart(tw, uf[:, :q2]), dtype=float) if spec.fast_mart is not None else np.zeros((R, k))
        hval = np.asarray(slow.f(theta, sv1[z1]), dtype=float)
        new_theta = theta + a * (hval + M1)
        new_w = w + b * (np.asarray(spec.g(theta, w, sv2[z2]), dtype=float) + M2)
        z1_next = sample_next(_rows(slow.kernel, theta, z1), us[:, q1])
        z2_next = sample_next(_rows(spec.fast_kernel, tw, z2), uf[:, q2])
        with np.errstate(invalid="ignore", over="ignore"):
            ok = (np.linalg.norm(new_theta, axis=1) <= DIVERGENCE_NORM) & (np.linalg.norm(new_w, axis=1) <= DIVERGENCE_NORM)
        bad = active & ~ok
        if bad.any():
            diverged_at[bad] = n_start + j + 1
            active &= ~bad
        if full:
            m1_r[active, j], m2_r[active, j] = M1[active], M2[active]
            eps_r[active, j] = (a / b) * hval[active]
        theta = np.where(active[:, None], new_theta, theta)
        w = np.where(active[:, None], new_w, w)
        z1 = np.where(active, z1_next, z1)
        z2 = np.where(active, z2_next, z2)
        if slot < K and j + 1 == rec[slot]:
            th_r[active, slot], w_r[active, slot] = theta[active], w[active]
            z1_r[active, slot], z2_r[active, slot] = z1[active], z2[active]
            slot += 1
        if not active.any():
            break
    n_rec = n_start + np.asarray(rec)
    out = []
    for r in range(R):
        keep = K if diverged_at[r] < 0 else int(np.searchsorted(n_rec, diverged_at[r]))
        steps = n_steps if diverged_at[r] < 0 else max(keep - 1, 0)
        pick = lambda x: None if x is None else x[r, :steps]
        out.append(CoupledTrajectory(n_rec[:keep], th_r[r, :keep], w_r[r, :keep], z1_r[r, :keep], z2_r[r, :keep],
                                     pick(m1_r), pick(m2_r), pick(eps_r), seeds[r], stride,
                                     bool(diverged_at[r] >= 0), int(diverged_at[r])))
    return out


@dataclass
class TrackingSummary:
    n: np.ndarray
    error: np.ndarray
    trailing_mean: float
    trailing_max: float
    window_fraction: float


def tracking_error(traj, lambda_map, window_fraction=0.1):
    err = np.linalg.norm(traj.w - lambda_map(traj.theta), axis=1)
    start = int(math.floor((1 - window_fraction) * (len(err) - 1)))
    tail = err[start:]
    return TrackingSummary(traj.n, err, float(tail.mean()), float(tail.max()), window_fraction)


def write_tracking_csv(traj, summary, path):
    d, k = traj.theta.shape[1], traj.w.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n", "tracking_error"] + [f"theta_{i}" for i in range(d)] + [f"w_{i}" for i in range(k)])
        for i in range(len(traj.n)):
            wr.writerow([int(traj.n[i]), repr(float(summary.error[i]))]
                        + [repr(float(x)) for x in traj.theta[i]] + [repr(float(x)) for x in traj.w[i]])


@dataclass
class CoupledPartition:
    slow: object  # SegmentPartition over a-times with T_s
    coupled: object  # SegmentPartition over b-times with T_c
    l: list
    saturated: bool


def coupled_partition(sched_a, sched_b, n0, T_s, T_c, n_segments, slow_n_max=10**7):
    """Both segmentations and l_m = max{k : t^s(n^s_k) <= t^c(n^c_m)}, times measured from n0.

    The slow partition is extended until it covers the coupled times or
    reaches ``slow_n_max``; ``saturated`` reports the latter.
    """
    if T_s <= 0 or T_c <= 0:
        raise DomainError("segment lengths must be positive")
    if T_c < T_s + 1 - 1e-12:
        raise DomainError("need T_c >= T_s + 1")
    coupled = partition(sched_b, n0, T_c, n_segments=n_segments)
    tc = np.asarray(coupled.Tm) - coupled.Tm[0]
    need = int(math.ceil(tc[-1] / T_s)) + 1
    slow = partition(sched_a, n0, T_s, n_segments=need, n_max=min(slow_n_max, sched_a.end))
    ts = np.asarray(slow.Tm) - slow.Tm[0]
    tol = 1e-12 * max(1.0, tc[-1])
    l = [int(np.searchsorted(ts, t + tol, side="right") - 1) for t in tc]
    saturated = ts[-1] + tol < tc[-1]
    return CoupledPartition(slow, coupled, l, bool(saturated))


def nested_bound(ps, pc, l_map, ps_tail=0.0):
    """(1 - sum p^s) (1 - sum_m p^c_m / (1 - f(m) - g(m))), clamped to [0, 1].

    f(0) = p^s_{l_0} and
    f(m) = p^s_{l_m} / (1 - p^c_{m-1} / (1 - f(m-1) - sum_{l_{m-1} < k < l_m} p^s_k)),
    g(m) = sum_{k > l_m} p^s_k + ``ps_tail`` (mass beyond the truncation).
    """
    ps = np.asarray(ps, dtype=float)
    pc = np.asarray(pc, dtype=float)
    l = [int(x) for x in l_map]
    if np.any(ps < 0) or np.any(ps >= 1) or np.any(pc < 0) or np.any(pc >= 1) or not 0 <= ps_tail < 1:
        raise DomainError("per-segment probabilities must lie in [0, 1)")
    if len(l) != len(pc) or any(x < 0 or x >= len(ps) for x in l) or any(b < a for a, b in zip(l, l[1:])):
        raise DomainError("l_map must be non-decreasing indices into p^s, one per coupled segment")
    # exact rational arithmetic on the float inputs; rounding enters only at the end
    qs = [Fraction(float(x)) for x in ps]
    qc = [Fraction(float(x)) for x in pc]
    qt = Fraction(float(ps_tail))
    total_s = sum(qs) + qt
    acc = Fraction(0)
    f_prev = None
    for m in range(len(qc)):
        if m == 0:
            f = qs[l[0]]
        else:
            inner = 1 - f_prev - sum(qs[l[m - 1] + 1 : l[m]])
            if inner <= 0:
                raise BoundVacuous(m)
            outer = 1 - qc[m - 1] / inner
            if outer <= 0:
                raise BoundVacuous(m)
            f = qs[l[m]] / outer
        den = 1 - f - sum(qs[l[m] + 1 :]) - qt
        if den <= 0:
            raise BoundVacuous(m)
        acc += qc[m] / den
        f_prev = f
    return min(1.0, max(0.0, float((1 - total_s) * (1 - acc))))


def s1_s2(sched_a, sched_b, n0, tol=1e-12):
    """S1 = sum_{i>=n0} a(i)^2 and S2 = sum_{i>=n0} b(i)^2; requires S1 < S2."""
    S1 = float(s_tail(sched_a, n0, tol))
    S2 = float(s_tail(sched_b, n0, tol))
    if not S1 < S2:
        raise DomainError(f"expected S1 < S2, got S1 = {S1!r}, S2 = {S2!r}")
    return S1, S2


def theorem_form_gap(bound, S1):
    """(1 - bound) / S1: the ratio that the 1 - o(S1) form says vanishes as n0 grows."""
    if S1 <= 0:
        raise DomainError("S1 must be positive")
    return (1.0 - bound) / S1
