"""Sample-complexity formulas for the contraction setting: the T* constant,
the closed-form n0 (largest of six terms), N'0, N0 and the step-size sweep."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ComplexityOverflow, DomainError, ScheduleExhausted

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
PAPER_CONSTANT = 15.16
LOG_MAX = math.log(np.finfo(float).max)


def phi_T(T, alpha):
    """(T + 1) / (1 - exp(-(1 - alpha) T))."""
    return (T + 1.0) / -math.expm1(-(1.0 - alpha) * T)


def t_star(alpha, lo=None, hi=None, tol=1e-6):
    """Golden-section minimisation of phi_T over T > 0; returns (T*, phi(T*))."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    s = 1.0 - alpha
    a = 1e-9 if lo is None else lo
    b = 50.0 / s + 50.0 if hi is None else hi
    f = lambda T: phi_T(T, alpha)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    T = 0.5 * (a + b)
    return T, f(T)


@dataclass(frozen=True)
class ComplexityInputs:
    M: float
    eps: float
    gamma: float
    k: float
    alpha: float = 0.9
    d: int = 1

    def __post_init__(self):
        if self.M <= 0 or self.eps <= 0:
            raise DomainError("M and eps must be positive")
        if not 0 < self.gamma < 1:
            raise DomainError("gamma must lie in (0, 1)")
        if not 0.5 < self.k < 1:
            raise DomainError("k must lie in (1/2, 1)")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")

    @property
    def r(self):
        return 1.5 * self.eps


def log_terms(inp):
    """Natural logs of the six n0 terms."""
    M, e, k = inp.M, inp.eps, inp.k
    b = 2 * k - 1
    lg = math.log(1 / inp.gamma)
    out = [
        math.log(M / e) / k,
        math.log(M / (e * b)) / b,
        math.log(M / (e * e * b)) / b,
        2 * math.log(M / e) / k,
        math.log(M * lg / (e * e * b)) / b if lg > 0 else -math.inf,
        math.log(2 * M * k / (e * b)) / b,
    ]
    return out


@dataclass
class ComplexityReport:
    n0: int
    terms: list
    k: float
    n0_exact: float
    N_prime0: int = 0
    N_prime0_exact: float = math.nan
    T_star: float = math.nan
    min_value: float = math.nan


def n0_closed_form(inp):
    """ceil of the largest of the six terms, and the terms themselves."""
    logs = log_terms(inp)
    for i, lv in enumerate(logs):
        if lv > LOG_MAX:
            raise ComplexityOverflow(i, [math.inf if x > LOG_MAX else math.exp(x) for x in logs])
    terms = [math.exp(x) for x in logs]
    top = max(terms)
    return max(1, math.ceil(top)), terms, top


def n_prime0_exact(n0, k, const=PAPER_CONSTANT):
    if not n0 >= 1:
        raise DomainError("n0 must be >= 1")
    if not 0.5 < k < 1:
        raise DomainError("k must lie in (1/2, 1); the formula is undefined at k = 1")
    e = 1.0 / (1.0 - k)
    base = n0 ** (1.0 - k) + const * (1.0 - k)
    if e * math.log(base) > LOG_MAX:
        raise ComplexityOverflow(0, [base])
    return base**e


def n_prime0(n0, k, const=PAPER_CONSTANT):
    """ceil((n0^{1-k} + const (1 - k))^{1/(1-k)})."""
    return math.ceil(n_prime0_exact(n0, k, const))


def complexity_report(inp, const=PAPER_CONSTANT):
    n0, terms, top = n0_closed_form(inp)
    T, v = t_star(inp.alpha)
    npe = n_prime0_exact(n0, inp.k, const)
    return ComplexityReport(n0, terms, inp.k, top, math.ceil(npe), npe, T, v)


def power_partial_sum(k, lo, hi):
    """sum_{i=lo}^{hi} i^{-k}: direct for the first terms, Euler-Maclaurin beyond."""
    if hi < lo:
        return 0.0
    cut = min(hi, lo + 4096)
    head = math.fsum(np.arange(lo, cut + 1, dtype=float) ** -k)
    if cut == hi:
        return head
    a, b = float(cut + 1), float(hi)
    F = (lambda x: math.log(x)) if k == 1 else (lambda x: x ** (1 - k) / (1 - k))
    d1 = lambda x: -k * x ** (-k - 1)
    d3 = lambda x: -k * (k + 1) * (k + 2) * x ** (-k - 3)
    em = F(b) - F(a) + 0.5 * (a**-k + b**-k) + (d1(b) - d1(a)) / 12 - (d3(b) - d3(a)) / 720
    return head + em


def capital_N0(sched, n0, alpha=0.9, T=None, threshold=None, n_cap=10**15):
    """min{n : sum_{i=n0+1}^{n} a(i) >= (T+1)/(1 - e^{-(1-alpha)T})} - n0, with T = T* by default."""
    if threshold is None:
        T = t_star(alpha)[0] if T is None else T
        if T <= 0:
            raise DomainError("T must be positive")
        threshold = phi_T(T, alpha)
    lo = n0 + 1
    if lo < sched.offset:
        raise DomainError("n0 + 1 precedes the schedule offset")
    if sched.kind == "power":
        k = sched.param
        S = lambda n: power_partial_sum(k, lo, n)
        hi = lo
        while S(hi) < threshold:
            hi = lo + 2 * (hi - lo + 1)
            if hi > n_cap:
                raise ComplexityOverflow(0, [threshold])
        a = lo - 1
        while hi - a > 1:
            mid = (a + hi) // 2
            if S(mid) >= threshold:
                hi = mid
            else:
                a = mid
        return hi - n0
    acc, pos, chunk = 0.0, lo, 1024
    while True:
        stop = min(pos + chunk, sched.end)
        if stop <= pos:
            raise ScheduleExhausted(f"schedule ends at {sched.end} before reaching {threshold}")
        cs = acc + np.cumsum(sched.steps(np.arange(pos, stop)))
        hit = np.flatnonzero(cs >= threshold)
        if hit.size:
            return pos + int(hit[0]) - n0
        acc, pos, chunk = float(cs[-1]), stop, chunk * 2


@dataclass
class SweepResult:
    M: float
    eps: float
    gamma: float
    k: np.ndarray
    n0: list
    N_prime0: list
    n0_exact: np.ndarray
    N_prime0_exact: np.ndarray
    argmin_k: float


def sweep_k(M, eps, gamma, k_grid, alpha=0.9, const=PAPER_CONSTANT):
    """n0 and N'0 at every k of the grid; argmin is over the unrounded N'0."""
    ks = np.asarray(k_grid, dtype=float)
    if ks.size == 0 or np.any(ks <= 0.5) or np.any(ks >= 1):
        raise DomainError("sweep grid must lie inside (1/2, 1)")
    n0s, nps, n0e, npe = [], [], [], []
    for k in ks:
        n0, _, top = n0_closed_form(ComplexityInputs(M, eps, gamma, float(k), alpha))
        v = n_prime0_exact(n0, float(k), const)
        n0s.append(n0)
        nps.append(math.ceil(v))
        n0e.append(top)
        npe.append(v)
    npe = np.asarray(npe)
    return SweepResult(M, eps, gamma, ks, n0s, nps, np.asarray(n0e), npe, float(ks[int(np.argmin(npe))]))


def parse_grid(text):
    """'lo:hi:step' (inclusive) or a comma list."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        if step <= 0 or hi < lo:
            raise DomainError(f"bad grid {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9))
        return np.round(lo + step * np.arange(n + 1), 12)
    return np.asarray([float(x) for x in text.split(",")])


def write_sweep_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "n0", "N_prime0", "n0_exact", "N_prime0_exact"])
        for row in zip(result.k, result.n0, result.N_prime0, result.n0_exact, result.N_prime0_exact):
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2]), repr(float(row[3])), repr(float(row[4]))])


def plot_sweeps(results, path):
    """800x600 SVG, log-scaled N'0 against k, one line per (M, eps); text drawn as paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.fonttype": "path", "svg.hashsalt": "markovsa"}):
        fig, ax = plt.subplots(figsize=(8, 6), dpi=100)
        for r in results:
            ax.plot(r.k, r.N_prime0_exact, marker=".", label=f"M={r.M:g}, eps={r.eps:g}")
        ax.set_yscale("log")
        ax.set_xlabel("k")
        ax.set_ylabel("N'0")
        ax.legend()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
