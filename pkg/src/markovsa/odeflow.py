"""Mean-field ODE: fixed-step RK4 flow, the horizon T, constants C and L,
the segment partition {n_m}, and the per-segment deviations rho_m."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BasinViolation, DomainError, FlowBlowUp, NumericalError, ScheduleExhausted
from .schedules import t_lower_antiderivative, t_of, times

BLOWUP = 1e12


@dataclass
class FlowSolution:
    t: np.ndarray  # (K,)
    y: np.ndarray  # (K, N, d)
    dy: np.ndarray  # (K, N, d)

    def __call__(self, tq, column=None):
        """Cubic Hermite dense output at times ``tq``; ``column`` picks one trajectory."""
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        y = self.y if column is None else self.y[:, column : column + 1]
        dy = self.dy if column is None else self.dy[:, column : column + 1]
        i = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, len(self.t) - 2)
        h = (self.t[i + 1] - self.t[i])[:, None, None]
        s = ((tq - self.t[i])[:, None, None]) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y[i] + h10 * h * dy[i] + h01 * y[i + 1] + h11 * h * dy[i + 1]


def _rk4_step(h, y, dt, k1):
    k2 = h(y + 0.5 * dt * k1)
    k3 = h(y + 0.5 * dt * k2)
    k4 = h(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def flow(h, theta0, t_span, dt):
    """Classical RK4 at fixed ``dt`` (last step shortened) from one or many initial points."""
    y = np.atleast_2d(np.asarray(theta0, dtype=float)).copy()
    t0, t1 = map(float, t_span)
    if dt <= 0 or t1 < t0:
        raise DomainError("flow needs dt > 0 and t_span increasing")
    n = int(math.ceil((t1 - t0) / dt - 1e-9))
    ts = np.minimum(t0 + dt * np.arange(n + 1), t1)
    ts[-1] = t1
    ys = np.empty((n + 1,) + y.shape)
    dys = np.empty_like(ys)
    ys[0] = y
    k1 = h(y)
    dys[0] = k1
    for j in range(n):
        y = _rk4_step(h, y, ts[j + 1] - ts[j], k1)
        if not np.all(np.abs(y) < BLOWUP):
            raise FlowBlowUp(ts[j + 1])
        k1 = h(y)
        ys[j + 1], dys[j + 1] = y, k1
    return FlowSolution(ts, ys, dys)


@dataclass
class HorizonResult:
    T: float
    raw_max: float
    entry_times: np.ndarray
    grid: np.ndarray
    safety: float


def horizon_T(geom, h, grid_density=11, dt=1e-3, t_max=1e3, safety=1.1):
    """Grid estimate of the time for the flow from closure(B) to enter H^{eps1}."""
    grid = geom.B.grid(grid_density)
    y = grid.copy()
    entry = np.full(len(y), np.nan)
    inside = geom.in_H(y, geom.eps1)
    entry[inside] = 0.0
    t = 0.0
    k1 = h(y)
    while np.isnan(entry).any():
        if t >= t_max:
            raise BasinViolation(f"{int(np.isnan(entry).sum())} grid points never entered H^eps1 by t = {t_max}")
        y_new = _rk4_step(h, y, dt, k1)
        if not np.all(np.abs(y_new) < BLOWUP):
            raise BasinViolation(f"flow from the grid blew up near t = {t + dt:.4g}")
        k1_new = h(y_new)
        hit = np.isnan(entry) & geom.in_H(y_new, geom.eps1)
        if hit.any():
            entry[hit] = _refine_entry(geom, t, dt, y[hit], k1[hit], y_new[hit], k1_new[hit])
        y, k1, t = y_new, k1_new, t + dt
    raw = float(entry.max()) if len(entry) else 0.0
    return HorizonResult(safety * raw, raw, entry, grid, safety)


def _refine_entry(geom, t, dt, y0, d0, y1, d1, iters=50):
    sol = FlowSolution(np.array([0.0, dt]), np.stack([y0, y1]), np.stack([d0, d1]))
    lo = np.zeros(len(y0))
    hi = np.full(len(y0), dt)
    cols = np.arange(len(y0))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pts = np.stack([sol(m, column=c)[0, 0] for m, c in zip(mid, cols)])
        ins = geom.in_H(pts, geom.eps1)
        hi = np.where(ins, mid, hi)
        lo = np.where(ins, lo, mid)
    return t + hi


@dataclass
class FlowConstants:
    C: float
    L: float
    L_estimated: bool


def _lipschitz_estimate(h, pts):
    hv = h(pts)
    best = 0.0
    for i in range(len(pts) - 1):
        dx = np.linalg.norm(pts[i + 1 :] - pts[i], axis=1)
        dh = np.linalg.norm(hv[i + 1 :] - hv[i], axis=1)
        ok = dx > 1e-12
        if ok.any():
            best = max(best, float((dh[ok] / dx[ok]).max()))
    return best


def constants_CL(geom, h, T, L=None, grid_density=11, dt=1e-3, c_safety=1.05, l_safety=1.5, lipschitz_density=101):
    """C bounds |h| along the flow from closure(B) over [0, T + 1]; L echoed or estimated.

    The L estimate is the largest finite-difference ratio over pairs drawn
    from a lattice on closure(B) and is marked as estimated.
    """
    grid = geom.B.grid(grid_density)
    sol = flow(h, grid, (0.0, T + 1.0), dt)
    C = c_safety * float(np.linalg.norm(sol.dy, axis=2).max())
    if L is not None:
        return FlowConstants(C, float(L), False)
    dens = lipschitz_density if geom.B.dim == 1 else max(5, int(round(2000 ** (1 / geom.B.dim))))
    pts = geom.B.grid(dens)
    return FlowConstants(C, l_safety * _lipschitz_estimate(h, pts), True)


@dataclass
class SegmentPartition:
    sched: object
    n0: int
    T: float
    n: list  # n_0, n_1, ...
    Tm: list  # t(n_m)

    def segment_of(self, idx):
        """Index m with n_m <= idx < n_{m+1}."""
        m = int(np.searchsorted(self.n, idx, side="right") - 1)
        if m < 0:
            raise DomainError(f"index {idx} precedes n0 = {self.n0}")
        return m

    @property
    def count(self):
        return len(self.n) - 1


TIME_TOL = 1e-12
INDEX_CAP = 10**10
CHUNK_CAP = 1 << 22


def partition(sched, n0, T, n_segments=None, n_max=None):
    """n_m = min{n : t(n) >= t(n_{m-1}) + T}, accumulated segment by segment.

    Comparisons allow a relative slack of 1e-12 so that exactly representable
    horizons (ten steps of 0.1 for T = 1) are not missed by rounding.
    """
    if T <= 0:
        raise DomainError("partition needs T > 0")
    if n_segments is None and n_max is None:
        raise DomainError("partition needs n_segments or n_max")
    if n0 < sched.offset:
        raise DomainError(f"n0 = {n0} precedes schedule offset {sched.offset}")
    ns, Tm = [n0], [t_of(sched, n0)]
    tol = TIME_TOL * max(1.0, T)
    cur = n0
    while n_segments is None or len(ns) - 1 < n_segments:
        if sched.kind != "explicit" and (n_max is None or n_max > INDEX_CAP):
            # sum_{cur}^{n-1} a <= a(cur) + integral of a over [cur, n - 1]
            reach = t_lower_antiderivative(sched, INDEX_CAP) - t_lower_antiderivative(sched, cur)
            if reach < T - sched(cur):
                raise NumericalError(f"segment {len(ns)} does not close below index {INDEX_CAP:g}")
        acc = 0.0
        chunk = 256
        found = None
        pos = cur
        while found is None:
            stop = pos + chunk
            if n_max is not None:
                stop = min(stop, n_max)
            if stop > sched.end:
                stop = sched.end
            if stop <= pos:
                break
            a = sched.steps(np.arange(pos, stop))
            cs = acc + np.cumsum(a)
            hit = np.flatnonzero(cs >= T - tol)
            if hit.size:
                j = int(hit[0])
                found = (pos + j + 1, float(cs[j]))
            else:
                acc = float(cs[-1])
                pos = stop
                chunk = min(2 * chunk, CHUNK_CAP)
                if pos > INDEX_CAP:
                    raise NumericalError(f"segment {len(ns)} does not close below index {INDEX_CAP:g}")
        if found is None:
            if n_segments is not None and n_max is None:
                raise ScheduleExhausted(f"schedule ends at {sched.end} before segment {len(ns)} closes")
            break
        cur, seg = found
        ns.append(cur)
        Tm.append(Tm[-1] + seg)
    return SegmentPartition(sched, n0, float(T), ns, Tm)


@dataclass
class RhoReport:
    m: np.ndarray
    n_m: np.ndarray
    T_m: np.ndarray
    rho: np.ndarray
    segment_sup_norm: np.ndarray
    mesh_gap: float
    interpolation_bound: float = math.nan

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n_m", "T_m", "rho_m", "segment_sup_norm"])
            for row in zip(self.m, self.n_m, self.T_m, self.rho, self.segment_sup_norm):
                w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3])), repr(float(row[4]))])


def rho_deviations(traj, part, h, dt=1e-2, max_segments=None, L=None, C=None):
    """rho_m = sup over segment m of |theta_bar(t) - ODE solution started at theta_bar(T_m)|.

    The sup is taken over iterate times and integrator knots. With ``L`` and
    ``C`` given, ``interpolation_bound`` adds L*C*gap^2/8 for what the mesh
    can miss between points.
    """
    if traj.stride != 1:
        raise DomainError("rho deviations need a full-density trajectory")
    n_first, n_last = int(traj.n[0]), int(traj.n[-1])
    segs = [m for m in range(part.count) if part.n[m] >= n_first and part.n[m + 1] <= n_last]
    if max_segments is not None:
        segs = segs[:max_segments]
    if not segs:
        return RhoReport(*(np.array([]) for _ in range(5)), math.nan)
    tt = times(part.sched, n_first, n_last)
    theta = traj.theta
    starts = np.stack([theta[part.n[m] - n_first] for m in segs])
    lengths = np.array([tt[part.n[m + 1] - n_first] - tt[part.n[m] - n_first] for m in segs])
    sol = flow(h, starts, (0.0, float(lengths.max())), dt)
    rho, sup_norm = [], []
    gap = 0.0
    for col, m in enumerate(segs):
        i0, i1 = part.n[m] - n_first, part.n[m + 1] - n_first
        tau = tt[i0 : i1 + 1] - tt[i0]
        bar = theta[i0 : i1 + 1]
        ode_at_iter = sol(tau, column=col)[:, 0, :]
        dev = np.linalg.norm(bar - ode_at_iter, axis=1).max()
        knots = sol.t[sol.t <= tau[-1]]
        bar_knots = np.stack([np.interp(knots, tau, bar[:, k]) for k in range(bar.shape[1])], axis=1)
        dev = max(dev, float(np.linalg.norm(bar_knots - sol.y[: len(knots), col, :], axis=1).max()))
        rho.append(dev)
        sup_norm.append(float(np.linalg.norm(bar, axis=1).max()))
        mesh = np.unique(np.concatenate((tau, knots)))
        if len(mesh) > 1:
            gap = max(gap, float(np.diff(mesh).max()))
    ms = np.asarray(segs)
    bound = L * C * gap**2 / 8 if (L is not None and C is not None) else math.nan
    return RhoReport(ms, np.asarray([part.n[m] for m in segs]), np.asarray([part.Tm[m] for m in segs]),
                     np.asarray(rho), np.asarray(sup_norm), gap, bound)
