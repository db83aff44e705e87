"""Simulation of theta_{n+1} = theta_n + a(n) [f(theta_n, Y_n) + M_{n+1}].

Per step, in this order: draw M_{n+1} from theta_n, update theta, then draw
Y_{n+1} ~ Pi_{theta_n}(Y_n, .). Each replication consumes ``mart_dim + 1``
uniforms per step from its own stream, so batching, thread count and
checkpoint stride never change a path.
"""

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from .errors import DomainError, StructuralError
from .markov import ConstantKernel, KernelFamily, f_at_states, mean_field_fn, sample_next
from .rng import UniformBlocks, generator
from .schedules import times

DIVERGENCE_NORM = 1e12


@dataclass
class ProblemSpec:
    dim: int
    f: Callable
    kernel: KernelFamily
    K: float
    mart: Optional[Callable] = None  # (theta (R,d), u (R,q)) -> (R,d)
    mart_dim: int = 0
    K_prime: float = 0.0
    L: Optional[float] = None
    h_analytic: Optional[Callable] = None
    f3: Optional[Callable] = None  # (theta, y, y_next) -> (R,d)
    audit_box: tuple = (-10.0, 10.0)
    name: str = "custom"

    @property
    def K_tilde(self):
        return max(self.K, self.K_prime)

    def mean_field(self):
        if self.h_analytic is not None:
            return self.h_analytic
        return mean_field_fn(self.kernel, self.f)

    def _audit_grid(self, points):
        lo, hi = self.audit_box
        if self.dim <= 2:
            axes = [np.linspace(lo, hi, points)] * self.dim
            return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return generator(0).uniform(lo, hi, (points**2, self.dim))

    def audit(self, points=41, mart_samples=8):
        """Hard-fail if f or M exceed their declared linear-growth bounds on the audit grid."""
        grid = self._audit_grid(points)
        norms = 1.0 + np.linalg.norm(grid, axis=1)
        fv = f_at_states(self.kernel, self.f, grid)
        worst = (np.linalg.norm(fv, axis=2).max(axis=1) / norms).max()
        if worst > self.K * (1 + 1e-12):
            raise DomainError(f"{self.name}: sup_y |f(theta,y)| reaches {worst:.4g}(1+|theta|) > K = {self.K}")
        if self.mart is not None and self.mart_dim > 0:
            g = generator(12345)
            for _ in range(mart_samples):
                M = np.asarray(self.mart(grid, g.random((len(grid), self.mart_dim))))
                w = (np.linalg.norm(M, axis=1) / norms).max()
                if w > self.K_prime * (1 + 1e-12):
                    raise DomainError(f"{self.name}: |M| reaches {w:.4g}(1+|theta|) > K' = {self.K_prime}")
        return True

    def digest(self):
        """Stable hash of the declared data (callables are identified by name only)."""
        P = self.kernel.matrix(np.zeros(self.dim))
        payload = {
            "name": self.name, "dim": self.dim, "K": self.K, "K_prime": self.K_prime, "L": self.L,
            "mart_dim": self.mart_dim, "states": self.kernel.state_values.round(15).tolist(),
            "P0": P.round(15).tolist(),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class TrajectoryRecord:
    n: np.ndarray
    theta: np.ndarray
    states: np.ndarray
    mart: Optional[np.ndarray]
    n_start: int
    schedule: str
    seed: int
    stride: int = 1
    diverged: bool = False
    diverged_at: int = -1
    cond_mean: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.n)


@dataclass
class TrajectoryBatch:
    n: np.ndarray
    theta: np.ndarray  # (R, K, d), NaN after divergence
    states: np.ndarray  # (R, K), -1 after divergence
    mart: Optional[np.ndarray]
    n_start: int
    schedule: str
    seeds: list
    stride: int
    diverged: np.ndarray
    diverged_at: np.ndarray
    cond_mean: Optional[np.ndarray] = None

    def path(self, r):
        keep = len(self.n)
        if self.diverged[r]:
            keep = int(np.searchsorted(self.n, self.diverged_at[r]))
        mart = None if self.mart is None else self.mart[r, : max(keep - 1, 0)]
        cm = None if self.cond_mean is None else self.cond_mean[r, : max(keep - 1, 0)]
        return TrajectoryRecord(
            self.n[:keep], self.theta[r, :keep], self.states[r, :keep], mart, self.n_start,
            self.schedule, self.seeds[r], self.stride, bool(self.diverged[r]), int(self.diverged_at[r]), cm,
        )


def _rows(kernel, theta, y):
    if isinstance(kernel, ConstantKernel):
        return kernel.P[y]
    P = kernel.matrices(theta)
    return P[np.arange(len(y)), y]


def initial_states(kernel, theta0, y0, gens):
    """Fixed state index, or a draw from the invariant law at theta0 when y0 == 'stationary'."""
    R = len(gens)
    if isinstance(y0, str):
        if y0 != "stationary":
            raise DomainError(f"unknown initial state mode {y0!r}")
        from .markov import stationary_batch

        pi = stationary_batch(kernel.matrices(theta0))
        u = np.array([g.random() for g in gens])
        return sample_next(pi, u)
    y = np.broadcast_to(np.asarray(y0, dtype=int), (R,)).copy()
    if np.any(y < 0) or np.any(y >= kernel.state_count):
        raise DomainError("initial state index out of range")
    return y


def simulate_batch(spec, sched, theta0, y0, n_start, n_steps, gens, stride=1, record_mart=True, seeds=None, prepost=False,
                   record_at=None):
    """Advance R independent paths; ``gens`` holds one Generator per path.

    ``record_at`` (step counts from ``n_start``) overrides the regular stride.
    """
    R = len(gens)
    d = spec.dim
    if n_start < sched.offset:
        raise DomainError(f"n_start {n_start} precedes schedule offset {sched.offset}")
    if n_start + n_steps > sched.end:
        raise DomainError("explicit schedule shorter than the requested run")
    if stride < 1:
        raise DomainError("stride must be >= 1")
    if prepost and spec.f3 is None:
        raise StructuralError("pre/post simulation needs spec.f3")
    theta = np.array(np.broadcast_to(np.asarray(theta0, dtype=float), (R, d)))
    y = initial_states(spec.kernel, theta, y0, gens)
    sv = spec.kernel.state_values
    S = spec.kernel.state_count
    q = 0 if prepost else spec.mart_dim
    blocks = UniformBlocks(gens, q + 1)
    steps = sched.steps(np.arange(n_start, n_start + n_steps))

    if record_at is not None:
        rec_idx = sorted({0, n_steps} | {int(j) for j in record_at if 0 <= j <= n_steps})
        stride = 0 if len(rec_idx) != n_steps + 1 else 1
    else:
        rec_idx = list(range(0, n_steps + 1, stride))
        if rec_idx[-1] != n_steps:
            rec_idx.append(n_steps)
    K = len(rec_idx)
    th_rec = np.full((R, K, d), np.nan)
    st_rec = np.full((R, K), -1, dtype=np.int64)
    keep_mart = record_mart and stride == 1
    m_rec = np.zeros((R, n_steps, d)) if keep_mart else None
    cm_rec = np.zeros((R, n_steps, d)) if (prepost and keep_mart) else None
    th_rec[:, 0], st_rec[:, 0] = theta, y
    active = np.ones(R, dtype=bool)
    diverged_at = np.full(R, -1, dtype=np.int64)
    slot = 1
    next_rec = rec_idx[1] if K > 1 else None

    for j in range(n_steps):
        a = steps[j]
        u = blocks.next_row()
        rows = _rows(spec.kernel, theta, y)
        if prepost:
            y_next = sample_next(rows, u[:, 0])
            val = np.asarray(spec.f3(theta, sv[y], sv[y_next]), dtype=float)
            succ = np.asarray(
                spec.f3(np.repeat(theta, S, axis=0), np.repeat(sv[y], S, axis=0), np.tile(sv, (R, 1))), dtype=float
            ).reshape(R, S, d)
            cmean = np.einsum("rs,rsd->rd", rows, succ)
            M = val - cmean
            new = theta + a * val
        else:
            M = np.asarray(spec.mart(theta, u[:, :q]), dtype=float) if spec.mart is not None else np.zeros((R, d))
            new = theta + a * (np.asarray(spec.f(theta, sv[y]), dtype=float) + M)
            y_next = sample_next(rows, u[:, q])
        with np.errstate(invalid="ignore", over="ignore"):
            bad = active & ~(np.linalg.norm(new, axis=1) <= DIVERGENCE_NORM)
        if bad.any():
            diverged_at[bad] = n_start + j + 1
            active &= ~bad
        theta = np.where(active[:, None], new, theta)
        y = np.where(active, y_next, y)
        if keep_mart:
            m_rec[:, j] = np.where(active[:, None] | bad[:, None], M, np.nan)
            if cm_rec is not None:
                cm_rec[:, j] = cmean
        if j + 1 == next_rec:
            th_rec[active, slot] = theta[active]
            st_rec[active, slot] = y[active]
            slot += 1
            next_rec = rec_idx[slot] if slot < K else None
        if not active.any():
            break

    return TrajectoryBatch(
        n_start + np.asarray(rec_idx), th_rec, st_rec, m_rec, n_start, sched.literal(),
        list(seeds) if seeds is not None else [None] * R, stride, diverged_at >= 0, diverged_at, cm_rec,
    )


def simulate(spec, sched, theta0, y0, n_start, n_steps, seed, stride=1, record_mart=True):
    """One trajectory from the stream PCG64(seed)."""
    batch = simulate_batch(spec, sched, np.atleast_2d(theta0), y0, n_start, n_steps, [generator(seed)],
                           stride, record_mart, seeds=[seed])
    return batch.path(0)


def simulate_prepost(spec, sched, theta0, y0, n_start, n_steps, seed, stride=1):
    """theta_{n+1} = theta_n + a(n) f3(theta_n, Y_n, Y_{n+1}), with the exact conditional-mean split.

    The record's ``mart`` holds f3 - E[f3 | F_n] and ``cond_mean`` the
    conditional mean, obtained by summing over all successor states.
    """
    batch = simulate_batch(spec, sched, np.atleast_2d(theta0), y0, n_start, n_steps, [generator(seed)],
                           stride, True, seeds=[seed], prepost=True)
    return batch.path(0)


def simulate_many(spec, sched, theta0s, y0, n_start, n_steps, seeds, stride=1, record_mart=False, threads=1, block=64):
    """Replications in fixed-size blocks, optionally on a thread pool; output order is replication order."""
    theta0s = np.atleast_2d(np.asarray(theta0s, dtype=float))
    if len(theta0s) == 1 and len(seeds) > 1:
        theta0s = np.repeat(theta0s, len(seeds), axis=0)
    chunks = [(i, min(i + block, len(seeds))) for i in range(0, len(seeds), block)]

    def run(bounds):
        lo, hi = bounds
        y = y0 if isinstance(y0, str) or np.ndim(y0) == 0 else np.asarray(y0)[lo:hi]
        return simulate_batch(spec, sched, theta0s[lo:hi], y, n_start, n_steps,
                              [generator(s) for s in seeds[lo:hi]], stride, record_mart, seeds=seeds[lo:hi])

    if threads == 1 or len(chunks) == 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=None if threads == 0 else threads) as pool:
            parts = list(pool.map(run, chunks))
    return concat_batches(parts)


def concat_batches(parts):
    first = parts[0]
    cat = lambda name: None if getattr(first, name) is None else np.concatenate([getattr(p, name) for p in parts])
    return TrajectoryBatch(
        first.n, cat("theta"), cat("states"), cat("mart"), first.n_start, first.schedule,
        [s for p in parts for s in p.seeds], first.stride, cat("diverged"), cat("diverged_at"), cat("cond_mean"),
    )


@dataclass
class GronwallCheck:
    sup_norm: float
    holds: bool
    worst_ratio: float
    first_violation: int = -1
    diverged: bool = False


def sup_norm_monitor(traj, K_tilde, sched):
    """Running sup of |theta_n| and the pathwise check |theta_n| <= (|theta_0| + K t) e^{K t}.

    ``t`` is the schedule time elapsed since the first recorded index.
    """
    norms = np.linalg.norm(traj.theta, axis=1)
    if len(norms) == 0:
        return GronwallCheck(0.0, True, 0.0, -1, traj.diverged)
    t_all = times(sched, traj.n_start, int(traj.n[-1]))
    t = t_all[np.asarray(traj.n) - traj.n_start]
    envelope = (norms[0] + K_tilde * t) * np.exp(K_tilde * t)
    slack = 1e-12 * np.maximum(envelope, 1.0)
    over = norms > envelope + slack
    ratio = np.divide(norms, envelope, out=np.zeros_like(norms), where=envelope > 0)
    first = int(traj.n[np.argmax(over)]) if over.any() else -1
    return GronwallCheck(float(norms.max()), not over.any(), float(ratio.max()), first, traj.diverged)


def write_trajectory_csv(traj, path):
    d = traj.theta.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["n"] + [f"theta_{i}" for i in range(d)] + ["state"]
        if traj.mart is not None:
            head += [f"M_{i}" for i in range(d)]
        w.writerow(head)
        for k in range(len(traj.n)):
            row = [int(traj.n[k])] + [repr(float(x)) for x in traj.theta[k]] + [int(traj.states[k])]
            if traj.mart is not None:
                row += [repr(float(x)) for x in traj.mart[k]] if k < len(traj.mart) else [""] * d
            w.writerow(row)


def run_manifest(spec, sched, seeds, extra=None):
    out = {"version": __version__, "spec": spec.name, "spec_hash": spec.digest(), "schedule": sched.literal(),
           "seeds": [int(s) for s in seeds]}
    out.update(extra or {})
    return out
