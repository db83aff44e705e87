"""High-precision reference values, computed with mpmath independently of the package."""

import mpmath

mp = mpmath.mp
mp.dps = 40


def n0_terms(M, eps, gamma, k):
    M, eps, k = mpmath.mpf(M), mpmath.mpf(eps), mpmath.mpf(k)
    b = 2 * k - 1
    lg = mpmath.log(1 / mpmath.mpf(gamma))
    return [
        (M / eps) ** (1 / k),
        (M / (eps * b)) ** (1 / b),
        (M / (eps**2 * b)) ** (1 / b),
        (M / eps) ** (2 / k),
        (M * lg / (eps**2 * b)) ** (1 / b),
        (2 * M * k / (eps * b)) ** (1 / b),
    ]


def n0(M, eps, gamma, k):
    return max(1, int(mpmath.ceil(max(n0_terms(M, eps, gamma, k)))))


def n_prime0_exact(n0_value, k, const="15.16"):
    k = mpmath.mpf(k)
    return (mpmath.mpf(n0_value) ** (1 - k) + mpmath.mpf(const) * (1 - k)) ** (1 / (1 - k))


def phi(T, alpha):
    T, alpha = mpmath.mpf(T), mpmath.mpf(alpha)
    return (T + 1) / (1 - mpmath.exp(-(1 - alpha) * T))


def harmonic(n):
    return mpmath.harmonic(n)


def capital_N0_harmonic(n0_value, threshold):
    """min{n : H_n - H_{n0} >= threshold} - n0, by bisection on exact harmonic numbers."""
    thr = mpmath.mpf(threshold)
    base = harmonic(n0_value)
    ok = lambda n: harmonic(n) - base >= thr
    lo, hi = n0_value, n0_value + 1
    while not ok(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi - n0_value


def power_partial_sum(k, lo, hi):
    """sum_{i=lo}^{hi} i^{-k} via Hurwitz zeta differences."""
    if k == 1:
        return harmonic(hi) - harmonic(lo - 1)
    k = mpmath.mpf(k)
    return mpmath.zeta(k, lo) - mpmath.zeta(k, hi + 1)


PAPER_SWEEPS = [(1e-7, 0.01), (1e-7, 0.001), (100.0, 0.01), (100.0, 0.001)]
SWEEP_GAMMA = 0.1


def sweep_grid():
    return [round(0.55 + 0.01 * i, 12) for i in range(45)]


def sweep_rows(M, eps, gamma=SWEEP_GAMMA):
    rows = []
    for k in sweep_grid():
        n = n0(M, eps, gamma, k)
        npe = n_prime0_exact(n, k)
        rows.append((k, n, int(mpmath.ceil(npe)), max(n0_terms(M, eps, gamma, k)), npe))
    return rows
