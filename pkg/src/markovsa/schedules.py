"""Step-size schedules, cumulative time, and square-summable tails.

Three kinds are supported::

    power     a(n) = n^-k                 1/2 < k <= 1
    logpower  a(n) = 1 / (n (log n)^p)    0 < p <= 1, n >= 2
    explicit  a(n) = values[n - offset]   stored prefix only

Tail sums ``s(n) = sum_{m >= n} a(m)^2`` of the analytic kinds are computed
as a partial sum plus a bracket on the remainder. Since ``a^2`` is positive,
decreasing and convex, the remainder from ``N`` lies between the trapezoid
value ``I(N) + a(N)^2/2`` and the midpoint value ``I(N - 1/2)``, where
``I(x)`` is the integral of ``a^2`` over ``[x, inf)``.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .errors import DomainError, ScheduleExhausted

CHUNK = 1 << 20


@dataclass(frozen=True)
class StepSchedule:
    kind: str
    param: float = 1.0
    values: tuple = ()
    offset: int = 1

    def __post_init__(self):
        if self.kind == "power":
            if not 0.5 < self.param <= 1.0:
                raise DomainError(f"power schedule needs 1/2 < k <= 1, got k = {self.param}")
        elif self.kind == "logpower":
            if not 0.0 < self.param <= 1.0:
                raise DomainError(f"logpower schedule needs 0 < p <= 1, got p = {self.param}")
            if self.offset < 2:
                raise DomainError("logpower schedule starts at n = 2")
        elif self.kind == "explicit":
            v = np.asarray(self.values, dtype=float)
            if v.ndim != 1 or len(v) == 0:
                raise DomainError("explicit schedule needs a non-empty list of steps")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise DomainError("explicit steps must be finite and non-negative")
            if np.any(np.diff(v) > 0):
                raise DomainError("explicit steps must be non-increasing")
        else:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.offset < 0:
            raise DomainError("schedule offset must be non-negative")

    @property
    def end(self):
        """One past the last defined index (inf for analytic kinds)."""
        if self.kind == "explicit":
            return self.offset + len(self.values)
        return math.inf

    def steps(self, n):
        """Vectorised a(n) for an integer array ``n``."""
        n = np.asarray(n)
        if np.any(n < self.offset) or np.any(n >= self.end):
            raise DomainError(f"step index outside [{self.offset}, {self.end}) for {self.literal()}")
        if self.kind == "power":
            return np.power(n.astype(float), -self.param)
        if self.kind == "logpower":
            x = n.astype(float)
            return 1.0 / (x * np.log(x) ** self.param)
        return np.asarray(self.values, dtype=float)[n - self.offset]

    def __call__(self, n):
        return float(self.steps(np.asarray([n]))[0])

    def literal(self):
        if self.kind == "power":
            s = f"power:k={self.param!r}"
            return s if self.offset == 1 else s + f",offset={self.offset}"
        if self.kind == "logpower":
            s = f"logpower:p={self.param!r}"
            return s if self.offset == 2 else s + f",offset={self.offset}"
        return f"explicit:[{len(self.values)} values],offset={self.offset}"


def PowerLaw(k, offset=1):
    return StepSchedule("power", float(k), (), offset)


def LogPower(p, offset=2):
    return StepSchedule("logpower", float(p), (), offset)


def Explicit(values, offset=1):
    return StepSchedule("explicit", 1.0, tuple(float(v) for v in values), offset)


def parse_schedule(text, base_dir=None):
    """Parse ``power:k=0.75``, ``logpower:p=1``, ``explicit:@steps.csv`` (optional ``,offset=N``)."""
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    opts = {}
    source = None
    for part in filter(None, (p.strip() for p in rest.split(","))):
        if part.startswith("@"):
            source = part[1:]
            continue
        key, eq, val = part.partition("=")
        if not eq:
            raise DomainError(f"malformed schedule option {part!r} in {text!r}")
        opts[key.strip()] = val.strip()
    try:
        offset = int(opts["offset"]) if "offset" in opts else None
        if kind == "power":
            return PowerLaw(float(opts["k"]), offset if offset is not None else 1)
        if kind == "logpower":
            return LogPower(float(opts["p"]), offset if offset is not None else 2)
    except KeyError as exc:
        raise DomainError(f"schedule {text!r} is missing parameter {exc.args[0]}") from None
    except ValueError:
        raise DomainError(f"bad number in schedule {text!r}") from None
    if kind == "explicit":
        if source is None:
            raise DomainError("explicit schedule needs a file: explicit:@steps.csv")
        path = Path(source)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        vals = [float(line.split(",")[0]) for line in path.read_text().splitlines() if line.strip()]
        if any(v <= 0 for v in vals):
            raise DomainError(f"{path}: steps must be positive")
        return Explicit(vals, offset if offset is not None else 1)
    raise DomainError(f"unknown schedule kind in {text!r}")


def step(sched, n):
    return sched(n)


def _check_index(sched, n):
    if n < sched.offset:
        raise DomainError(f"index {n} precedes schedule offset {sched.offset}")


def range_sum(sched, lo, hi, power=1):
    """sum_{m=lo}^{hi-1} a(m)^power, chunked so huge ranges stay in memory."""
    if hi <= lo:
        return 0.0
    _check_index(sched, lo)
    if hi > sched.end:
        raise ScheduleExhausted(f"explicit schedule ends at {sched.end}, needed {hi}")
    parts = []
    for start in range(lo, hi, CHUNK):
        stop = min(hi, start + CHUNK)
        parts.append(float(np.sum(sched.steps(np.arange(start, stop)) ** power)))
    return math.fsum(parts)


def t_of(sched, n):
    """Cumulative time t(n) = sum of a(m) for offset <= m < n."""
    _check_index(sched, n)
    return range_sum(sched, sched.offset, n)


def times(sched, lo, hi):
    """Array of t(n) for lo <= n <= hi."""
    base = t_of(sched, lo)
    a = sched.steps(np.arange(lo, hi))
    return base + np.concatenate(([0.0], np.cumsum(a)))


def t_lower_antiderivative(sched, n):
    """Integral of a(x) over [offset, n]; a lower bound for t(n)."""
    lo = sched.offset
    if sched.kind == "power":
        k = sched.param
        if k == 1.0:
            return math.log(n / lo)
        return (n ** (1 - k) - lo ** (1 - k)) / (1 - k)
    if sched.kind == "logpower":
        p = sched.param
        if p == 1.0:
            return math.log(math.log(n)) - math.log(math.log(lo))
        return (math.log(n) ** (1 - p) - math.log(lo) ** (1 - p)) / (1 - p)
    raise DomainError("explicit schedules have no antiderivative")


@dataclass(frozen=True)
class TailSum:
    value: float
    error: float
    truncated: bool = False

    def __float__(self):
        return self.value


def _sq_integral(sched, x):
    """Integral of a(t)^2 over [x, inf) for the analytic kinds."""
    if sched.kind == "power":
        b = 2.0 * sched.param - 1.0
        return x ** (-b) / b
    p = sched.param
    # substitute y = log t: integrand exp(-y) y^(-2p)
    lx = math.log(x)
    val, err = integrate.quad(lambda y: math.exp(-(y - lx)) * y ** (-2 * p), lx, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return val * math.exp(-lx)


def _bracket_width(sched, N):
    lo = _sq_integral(sched, N) + sched(N) ** 2 / 2
    hi = _sq_integral(sched, N - 0.5)
    return lo, hi


def s_tail(sched, n0, tol=1e-12, require_tail=False):
    """s(n0) = sum_{m >= n0} a(m)^2 with a certified absolute error."""
    _check_index(sched, n0)
    if sched.kind == "explicit":
        if require_tail:
            from .errors import SeriesDivergence
            raise SeriesDivergence("explicit schedule has no tail model; s(n0) is undefined")
        if n0 >= sched.end:
            return TailSum(0.0, 0.0, truncated=True)
        return TailSum(range_sum(sched, n0, sched.end, power=2), 0.0, truncated=True)
    N = max(n0, 3)
    while True:
        lo, hi = _bracket_width(sched, N)
        if hi - lo <= tol or N > 1 << 40:
            break
        N *= 2
    partial = range_sum(sched, n0, N, power=2)
    rounding = 4 * np.finfo(float).eps * (partial + hi) * (1 + math.log2(max(N - n0, 1)))
    return TailSum(partial + (lo + hi) / 2, float((hi - lo) / 2 + rounding))


def s_tail_array(sched, lo, hi, tol=1e-13):
    """s(n) for every lo <= n <= hi, anchored at s(hi)."""
    anchor = float(s_tail(sched, hi, tol))
    sq = sched.steps(np.arange(lo, hi)) ** 2
    rev = np.cumsum(sq[::-1])[::-1]
    return np.concatenate((rev + anchor, [anchor]))


def s_tail_bound(k, n):
    """Closed-form upper bound on s(n) for a(n) = n^-k, valid for n >= 2."""
    if not 0.5 < k <= 1.0:
        raise DomainError(f"tail bound needs 1/2 < k <= 1, got {k}")
    if n < 2:
        raise DomainError("tail bound needs n >= 2")
    b = 2.0 * k - 1.0
    return 1.0 / (b * (n / 2.0) ** b)


@dataclass
class CertificateReport:
    finite: bool
    partial_sum: float
    tail_bound: float
    n_terms: int
    paper_crossover: float = math.nan
    note: str = ""

    @property
    def value(self):
        return self.partial_sum + self.tail_bound


def _power_tail(k, C, d, N):
    # sum_{n>=N} 4d exp(-C b (n/2)^b) <= u(N) + integral_N^inf u
    b = 2.0 * k - 1.0
    c = C * b / 2.0**b
    uN = 4 * d * math.exp(-c * N**b)
    integral = 4 * d * (1 / b) * c ** (-1 / b) * special.gamma(1 / b) * special.gammaincc(1 / b, c * N**b)
    return uN + integral


def _power_crossover(k, C):
    """Smallest x beyond which exp(C b (x/2)^b) > x^2 holds for good."""
    from scipy.optimize import brentq

    b = 2.0 * k - 1.0
    c = C * b / 2.0**b
    psi = lambda x: c * x**b - 2 * math.log(x)
    xstar = (2 / (c * b)) ** (1 / b)
    if psi(max(xstar, 1.0)) > 0:
        return 1.0
    hi = max(xstar, 2.0)
    while psi(hi) <= 0:
        hi *= 2
    return brentq(psi, max(xstar, 1.0), hi)


def summability_certificate(sched, C, d=1, n_start=1, tol=1e-9, n_cap=1 << 24):
    """Certify sum_{n >= n_start} 4d exp(-C / s(n)) < inf.

    The tail is dominated by substituting the closed-form bound on ``s(n)``
    into the exponent (``1/(n-1)`` for logpower, which has ``(log n)^{2p} >= 1``
    for ``n >= 3``).
    """
    if C <= 0:
        raise DomainError("certificate needs C > 0")
    if sched.kind not in ("power", "logpower"):
        return CertificateReport(False, math.nan, math.inf, 0, note="only power/logpower schedules are certified")
    lo = max(n_start, sched.offset)
    if math.isinf(C):
        return CertificateReport(True, 0.0, 0.0, lo, note="C = inf: every term vanishes")
    N = max(lo + 16, 64)
    while True:
        if sched.kind == "power":
            tail = _power_tail(sched.param, C, d, N)
        else:
            tail = 4 * d * math.exp(-C * (N - 1)) / -math.expm1(-C)
        if tail < tol or N >= n_cap:
            break
        N *= 2
    if tail >= tol and N >= n_cap:
        return CertificateReport(False, math.nan, tail, N, note="tail certificate not reached below the scan cap")
    s = s_tail_array(sched, lo, N)[:-1]
    with np.errstate(over="ignore"):
        terms = 4 * d * np.exp(-C / s)
    partial = math.fsum(terms)
    crossover = _power_crossover(sched.param, C) if sched.kind == "power" else 3.0
    return CertificateReport(True, partial, tail, N, crossover)
