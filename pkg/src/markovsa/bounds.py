"""Closed-form probability bounds for the lock-in analysis.

Constants follow the usual notation: ``K_T = exp(L T)``,
``C0 = 2 C_R (1 + C_bar)``, ``K_hat = 1 / (f K_T^2 C0^2)`` with the Azuma
denominator factor ``f`` (32 by default, 128 for the textbook maximal
inequality with lambda = delta_B / (8 K_T sqrt(d))).
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import DomainError, SeriesDivergence, ThresholdOverflow
from .schedules import s_tail, s_tail_array

PAPER_FACTOR = 32.0
CLASSICAL_FACTOR = 128.0
N_LIMIT = 10**12


@dataclass
class BoundConstants:
    L: float
    C: float
    C_bar: float
    K: float
    K_prime: float
    C_R: float
    T: float
    d: int
    delta_B: float
    tilde_C: float
    C_R_dprime: Optional[float] = None
    C_hat: Optional[float] = None
    azuma_denominator_factor: float = PAPER_FACTOR
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("L", "C", "C_bar", "K", "K_prime", "C_R", "T", "delta_B", "tilde_C"):
            if getattr(self, name) < 0:
                raise DomainError(f"bound constant {name} must be non-negative")
        if self.d < 1 or self.delta_B <= 0:
            raise DomainError("need d >= 1 and delta_B > 0")
        if self.C_R_dprime is None:
            self.C_R_dprime = self.C_R * (1 + self.C_bar)
            self.provenance.setdefault("C_R_dprime", "derived default C_R(1+C_bar)")
        if self.C_hat is None:
            self.C_hat = self.K_hat
            self.provenance.setdefault("C_hat", "uncalibrated default C_hat = K_hat")

    @property
    def K_tilde(self):
        return max(self.K, self.K_prime)

    @property
    def K_T(self):
        return math.exp(self.L * self.T)

    @property
    def C0(self):
        return 2 * self.C_R * (1 + self.C_bar)

    @property
    def K_hat(self):
        denom = self.azuma_denominator_factor * self.K_T**2 * self.C0**2
        return math.inf if denom == 0 else 1.0 / denom

    @property
    def K_dprime(self):
        """Gronwall bound on |theta_j| over one T-segment started in B."""
        kt = self.K_tilde * self.T
        return (self.tilde_C + kt) * math.exp(kt)

    def to_dict(self):
        out = asdict(self)
        out.update(K_tilde=self.K_tilde, K_T=self.K_T, C0=self.C0, K_hat=self.K_hat, K_dprime=self.K_dprime)
        return out


def azuma_maximal(lam, increment_bounds, scale=2.0):
    """P(max_j |S_j| >= lam) <= min(1, 2 exp(-lam^2 / (scale * sum c_i^2))).

    ``scale = 2`` is the textbook maximal Azuma-Hoeffding constant;
    ``scale = 0.5`` reproduces the factor-32 exponent used for the lock-in
    bound (see ``segment_probability``).
    """
    c = np.asarray(increment_bounds, dtype=float)
    if lam < 0 or np.any(c < 0):
        raise DomainError("azuma needs lam >= 0 and non-negative increment bounds")
    v = float(np.sum(c**2))
    if lam == 0:
        return 1.0
    if v == 0:
        return 0.0
    return min(1.0, 2.0 * math.exp(-(lam**2) / (scale * v)))


def paper_scale(factor=PAPER_FACTOR):
    # lam = delta/(8 K_T sqrt d), c_j = C0 a(j): exponent lam^2/(scale C0^2 sum a^2) = delta^2/(64 scale ...)
    return factor / 64.0


def segment_probability(consts, seg_sq_sum):
    """2d exp(-delta_B^2 / (f K_T^2 d C0^2 sum_{segment} a(j)^2)), clamped to [0, 1]."""
    if seg_sq_sum <= 0:
        return 0.0
    lam = consts.delta_B / (8 * consts.K_T * math.sqrt(consts.d))
    per = azuma_maximal(lam, [consts.C0 * math.sqrt(seg_sq_sum)], scale=paper_scale(consts.azuma_denominator_factor))
    return min(1.0, consts.d * per)


@dataclass
class Thresholds:
    n0_1: int
    n0_2: int
    n0_3: int

    @property
    def n0(self):
        return max(self.n0_1, self.n0_2, self.n0_3)


def _a(sched, n):
    # a(n-1) below the schedule start is read as a(offset)
    return sched(max(n, sched.offset))


def threshold_conditions(consts, sched):
    """Left-hand side minus right-hand side of the three n0 conditions, as functions of n."""
    c = consts
    kt = c.K_T
    s = lambda n: float(s_tail(sched, n))
    return (
        lambda n: (c.C * sched(n) + kt * c.C * c.L * s(n)) - c.delta_B / 2,
        lambda n: 2 * c.C_R_dprime * _a(sched, n - 1) - c.delta_B / (8 * kt),
        lambda n: c.C_R * c.K_tilde * c.C_bar * s(n) - c.delta_B / (8 * kt),
    )


def _first_true(pred, lo, which):
    if pred(lo):
        return lo
    hi = max(lo + 1, 2 * lo)
    while not pred(hi):
        lo = hi
        hi *= 2
        if hi > N_LIMIT:
            if pred(N_LIMIT):
                hi = N_LIMIT
                break
            raise ThresholdOverflow(which, N_LIMIT)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def n0_thresholds(consts, sched):
    """Smallest n satisfying each strict inequality (left sides are non-increasing in n)."""
    conds = threshold_conditions(consts, sched)
    start = sched.offset
    found = [_first_true(lambda n, g=g: g(n) < 0, start, i + 1) for i, g in enumerate(conds)]
    return Thresholds(*found)


def lockin_lower_bound(consts, s_n0, nu=0.0):
    """clamp(1 - 2d e^{-K_hat dB^2/(d s)} - 2d e^{-C_hat dB^2/(d s)} - 2 nu) to [0, 1]."""
    if s_n0 <= 0:
        raise DomainError("lock-in bound needs s(n0) > 0")
    if not 0 <= nu < 0.5:
        raise DomainError("nu must lie in [0, 1/2)")
    d, db2 = consts.d, consts.delta_B**2
    t1 = 2 * d * math.exp(-consts.K_hat * db2 / (d * s_n0))
    t2 = 2 * d * math.exp(-consts.C_hat * db2 / (d * s_n0))
    return min(1.0, max(0.0, 1.0 - t1 - t2 - 2 * nu))


@dataclass
class SeriesReport:
    finite: bool
    value: float
    partial: float
    tail: float
    n_terms: int
    square_part: float
    growth_part: float
    converged: bool = False


def _logpower_time_bound(p, logx):
    """Antiderivative of 1/(x (log x)^p), in terms of log x."""
    if p == 1.0:
        return math.log(logx)
    return logx ** (1 - p) / (1 - p)


def tightness_series(K_tilde, sched, theta0_norm, c=1.0, n_max=1 << 22, tol=1e-6):
    """c sum_{n>=2} a(n)^2 (1 + [|theta0| + K t_n]^2 exp(2 K t_n)), t_n = sum_{k=2}^{n-1} a(k).

    The ``1`` is the additive ``c sum a(n)^2`` term of the same bound. The
    tail from N is dominated by replacing t_n with t_N plus the integral of
    a over [N-1, n-1]; once that envelope is decreasing, its sum is at most
    the first term plus its integral (quadrature in y = log x).
    """
    if sched.kind == "power":
        raise SeriesDivergence("the tightness series does not converge for a(n) = 1/n^k; use a logpower schedule")
    if sched.kind != "logpower":
        raise DomainError("tightness series needs a logpower schedule")
    p, K = sched.param, K_tilde
    lo = sched.offset
    N = 1 << 12
    while True:
        ns = np.arange(lo, N)
        a = sched.steps(ns)
        t = np.concatenate(([0.0], np.cumsum(a)[:-1]))
        br = theta0_norm + K * t
        sq = a**2
        grow = sq * br**2 * np.exp(2 * K * t)
        tN = float(t[-1] + a[-1])
        F0 = _logpower_time_bound(p, math.log(N - 1))

        def log_env(y):
            tau = tN + _logpower_time_bound(p, y + math.log1p(-math.exp(-y))) - F0
            b = theta0_norm + K * tau
            grow_log = 2 * math.log(b) + 2 * K * tau if b > 0 else -math.inf
            return np.logaddexp(0.0, grow_log) - 2 * y - 2 * p * math.log(y)

        y0 = math.log(N)
        ys = np.linspace(y0, 700.0, 2000)
        env = np.array([log_env(y) for y in ys])
        if np.all(np.diff(env) <= 0):
            val, err = integrate.quad(lambda y: math.exp(log_env(y) + y), y0, 700.0, limit=400)
            tail = c * (math.exp(env[0]) + val + err)
        else:
            tail = math.inf
        if tail < tol or N >= n_max:
            break
        N *= 2
    square_part = c * math.fsum(sq)
    growth_part = c * math.fsum(grow)
    partial = square_part + growth_part
    return SeriesReport(bool(np.isfinite(tail)), partial + tail, partial, tail, N - lo,
                        square_part, growth_part, bool(tail < tol))


def gronwall_bound(f_of_n, L, a, n):
    """f(n) exp(L sum_{m=0}^{n} a_m) for the general discrete Gronwall inequality."""
    a = np.asarray(a, dtype=float)
    if L < 0 or np.any(a <= 0):
        raise DomainError("gronwall bound needs L >= 0 and positive steps")
    return f_of_n(n) * math.exp(L * math.fsum(a[: n + 1]))


def segment_probabilities(consts, sched, part):
    """Azuma bound on P(rho_m >= delta_B | B_{m-1}) for each segment of a partition."""
    s = s_tail_array(sched, part.n[0], part.n[-1])
    base = part.n[0]
    out = []
    for m in range(part.count):
        seg = s[part.n[m] - base] - s[part.n[m + 1] - base]
        out.append(segment_probability(consts, seg))
    return out


def bound_report(consts, sched, nu=0.0, thresholds=None):
    th = thresholds or n0_thresholds(consts, sched)
    s0 = float(s_tail(sched, th.n0))
    return {
        "constants": consts.to_dict(),
        "schedule": sched.literal(),
        "thresholds": {"n0_1": th.n0_1, "n0_2": th.n0_2, "n0_3": th.n0_3, "n0": th.n0},
        "s_n0": s0,
        "nu": nu,
        "lockin_lower_bound": lockin_lower_bound(consts, s0, nu),
        "provenance": consts.provenance,
    }


def dumps(report):
    return json.dumps(report, sort_keys=True, indent=2, default=float)
