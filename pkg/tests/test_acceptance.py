"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import csv
import time
import timeit
from pathlib import Path

import numpy as np
import pytest

import oracles
from markovsa import problems
from markovsa.bounds import lockin_lower_bound, tightness_series
from markovsa.complexity import sweep_k, t_star
from markovsa.engine import simulate, simulate_many, sup_norm_monitor
from markovsa.errors import SeriesDivergence
from markovsa.markov import ConstantKernel, decompose, solve_poisson
from markovsa.montecarlo import estimate_lockin
from markovsa.odeflow import partition, rho_deviations
from markovsa.rng import generator, replication_seeds
from markovsa.schedules import Explicit, LogPower, PowerLaw, s_tail, s_tail_array, s_tail_bound, summability_certificate
from markovsa.twotimescale import nested_bound, simulate_coupled, simulate_coupled_many, tracking_error

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, elapsed, budget):
        within = elapsed < budget
        status = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\n[{status}] criterion {number}: {detail} ({elapsed:.3g} s, budget {budget:g} s)")
        assert ok, detail
        assert within, f"criterion {number} took {elapsed:.3g} s, budget {budget:g} s"
    return emit


def test_criterion_01_t_star_constant(report):
    T, v = t_star(0.9)
    per_call = min(timeit.repeat(lambda: t_star(0.9), number=20, repeat=5)) / 20
    ok = abs(v - 15.16) <= 0.01
    report(1, ok, f"t_star(0.9) minimum {v:.6f} at T = {T:.4f}", per_call, 1e-3)


def test_criterion_02_k_sweeps(report):
    t0 = time.perf_counter()
    results = {(M, e): sweep_k(M, e, oracles.SWEEP_GAMMA, oracles.sweep_grid()) for M, e in oracles.PAPER_SWEEPS}
    elapsed = time.perf_counter() - t0
    worst = 0.0
    for (M, e), res in results.items():
        with open(GOLDEN / f"sweep_M{M:g}_eps{e:g}.csv") as fh:
            rows = list(csv.DictReader(fh))
        gold = np.array([float(r["N_prime0_exact"]) for r in rows])
        worst = max(worst, float(np.max(np.abs(res.N_prime0_exact - gold) / gold)))
        gold = np.array([float(r["n0_exact"]) for r in rows])
        worst = max(worst, float(np.max(np.abs(res.n0_exact - gold) / gold)))
    bias = [(results[(100.0, e)].argmin_k, results[(1e-7, e)].argmin_k) for e in (0.01, 0.001)]
    ok = worst <= 1e-9 and all(big > small for big, small in bias)
    report(2, ok, f"argmin k (M=100, M=1e-7) = {bias}; golden rel. error {worst:.2g}", elapsed, 1.0)


def random_irreducible(rng, S):
    P = rng.random((S, S)) * (rng.random((S, S)) < rng.uniform(0.1, 1.0))
    P[np.arange(S), (np.arange(S) + 1) % S] += rng.uniform(0.01, 1.0, S)  # a cycle keeps it irreducible
    return P / P.sum(axis=1, keepdims=True)


def test_criterion_03_poisson_residual(report):
    rng = generator(303)
    t0 = time.perf_counter()
    worst_res = worst_norm = 0.0
    for _ in range(200):
        S, d = int(rng.integers(2, 51)), int(rng.integers(1, 5))
        vals = rng.standard_normal((S, d))
        theta = rng.standard_normal(d)
        sol = solve_poisson(ConstantKernel(random_irreducible(rng, S), vals), lambda th, y: y + np.sin(th), theta)
        worst_res, worst_norm = max(worst_res, sol.residual), max(worst_norm, sol.normalization)
    elapsed = time.perf_counter() - t0
    ok = worst_res <= 1e-10 and worst_norm <= 1e-10
    report(3, ok, f"200 chains: max residual {worst_res:.2g}, max |pi.v| {worst_norm:.2g}", elapsed, 10.0)


def test_criterion_04_decomposition_identity(report):
    t0 = time.perf_counter()
    worst_rec = worst_mean = 0.0
    count = 0
    for name in ("P1", "P2"):
        b = problems.get(name)
        batch = simulate_many(b.spec, b.schedule, [b.theta0], 0, b.n_start, 10**4, replication_seeds(404, 25),
                              record_mart=True)
        for r in range(25):
            tr = batch.path(r)
            dec = decompose(tr, b.spec.kernel, b.spec.f, b.schedule)
            worst_rec = max(worst_rec, dec.reconstruction_error())
            worst_mean = max(worst_mean, float(np.abs(dec.zeta1_conditional_means()).max()))
            count += 1
    elapsed = time.perf_counter() - t0
    ok = count == 50 and worst_rec <= 1e-12 and worst_mean <= 1e-12
    report(4, ok, f"{count} paths: reconstruction {worst_rec:.2g}, E[zeta1|state] {worst_mean:.2g}", elapsed, 30.0)


def test_criterion_05_tail_bound_dominance(report):
    t0 = time.perf_counter()
    bad = 0
    n = np.arange(2, 10**4 + 1)
    for k in (0.6, 0.75, 0.9, 1.0):
        tail = s_tail_array(PowerLaw(k), 2, 10**4)
        bound = np.array([s_tail_bound(k, int(m)) for m in n])
        bad += int(np.sum(tail[: len(n)] > bound))
    elapsed = time.perf_counter() - t0
    report(5, bad == 0, f"{bad} violations over k in (0.6, 0.75, 0.9, 1.0), n in [2, 1e4]", elapsed, 5.0)


def test_criterion_06_gronwall_envelope(report):
    t0 = time.perf_counter()
    held = 0
    for name in ("P1", "P2"):
        b = problems.get(name)
        batch = simulate_many(b.spec, b.schedule, [b.theta0], 0, b.n_start, 2000, replication_seeds(606, 100))
        held += sum(sup_norm_monitor(batch.path(r), b.spec.K_tilde, b.schedule).holds for r in range(100))
    elapsed = time.perf_counter() - t0
    report(6, held == 200, f"{held}/200 paths inside the envelope at every step", elapsed, 30.0)


def test_criterion_07_lockin_consistency(report):
    b = problems.get("P2")
    consts = b.bound_constants()
    t0 = time.perf_counter()
    ests = []
    for n0 in (100, 1000, 10000):
        bound = lockin_lower_bound(consts, float(s_tail(b.schedule, n0)))
        ests.append(estimate_lockin(b.spec, b.schedule, b.geometry, n0, 10 * n0, 500, seed=707, bound=bound,
                                    threads=0))
    elapsed = time.perf_counter() - t0
    dominated = all(e.wilson_hi >= e.theoretical_bound for e in ests)
    # non-decreasing up to overlap of the confidence intervals
    trend = all(e2.wilson_hi >= e1.wilson_lo for e1, e2 in zip(ests, ests[1:]))
    detail = "; ".join(f"n0={e.n0}: p={e.p_hat:.3f} [{e.wilson_lo:.3f}, {e.wilson_hi:.3f}] bound={e.theoretical_bound:.3g}"
                       for e in ests)
    report(7, dominated and trend, detail, elapsed, 300.0)


def test_criterion_08_rho_decay(report):
    b = problems.get("P1", c=0.0, sigma=0.0)
    h = b.spec.mean_field()
    sched = b.schedule
    t0 = time.perf_counter()
    maxima, ratios = [], []
    for n0 in (100, 1000, 10000):
        part = partition(sched, n0, 1.0, n_segments=10)
        tr = simulate(b.spec, sched, b.theta0, 0, n0, part.n[-1] - n0, seed=0)
        coarse = rho_deviations(tr, part, h, dt=1e-2).rho.max()
        ref = rho_deviations(tr, part, h, dt=1e-4).rho.max()
        maxima.append(coarse)
        ratios.append(coarse / ref)
    elapsed = time.perf_counter() - t0
    ok = maxima[0] > maxima[1] > maxima[2] and all(0.5 <= r <= 2.0 for r in ratios)
    report(8, ok, f"max rho {['%.3g' % m for m in maxima]}, ratio to dt/100 {['%.6f' % r for r in ratios]}",
           elapsed, 60.0)


def test_criterion_09_two_timescale_tracking(report):
    spec = problems.get("P3").spec
    t0 = time.perf_counter()
    paths = simulate_coupled_many(spec, [0.0], [0.0], (0, 0), 10**5, replication_seeds(909, 20), stride=100)
    errs = [tracking_error(tr, spec.lambda_map).trailing_mean for tr in paths]
    # with the slow step held at zero the fast recursion is the single-timescale engine bit for bit
    frozen = problems.get("P3").spec
    frozen.sched_a = Explicit([0.0] * 3003)
    tr = simulate_coupled(frozen, [0.7], [0.0], (0, 1), 3000, seed=99, n_start=2)
    ref = simulate(frozen.frozen_fast_spec([0.7]), frozen.sched_b, [0.0], 1, 2, 3000, seed=99)
    bitwise = np.array_equal(tr.w, ref.theta) and np.array_equal(tr.z2, ref.states) and \
        np.array_equal(tr.mart2, ref.mart)
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 0.05 and bitwise
    report(9, ok, f"worst trailing-10% error {max(errs):.4f} over 20 seeds; frozen reduction bitwise = {bitwise}",
           elapsed, 120.0)


def test_criterion_10_nested_bound(report):
    t0 = time.perf_counter()
    hand = nested_bound([0.1], [0.1], [0])
    grid = [0.0, 0.05, 0.1, 0.2]
    mono = True
    for ps0 in grid:
        for ps1 in grid:
            for pc0 in grid:
                for pc1 in grid:
                    base = nested_bound([ps0, ps1], [pc0, pc1], [0, 1])
                    for i in range(4):
                        v = [ps0, ps1, pc0, pc1]
                        v[i] += 0.05
                        mono &= nested_bound(v[:2], v[2:], [0, 1]) <= base
    elapsed = time.perf_counter() - t0
    report(10, hand == 0.8 and mono, f"hand case {hand!r}; monotone grid {mono}", elapsed, 1.0)


def test_criterion_11_summability(report):
    t0 = time.perf_counter()
    a = summability_certificate(PowerLaw(0.75), C=1, d=1)
    c = summability_certificate(LogPower(1), C=1, d=1)
    try:
        tightness_series(1.0, PowerLaw(0.75), 1.0)
        rejected = False
    except SeriesDivergence:
        rejected = True
    elapsed = time.perf_counter() - t0
    ok = a.finite and c.finite and rejected
    report(11, ok, f"PowerLaw(0.75) finite={a.finite}, LogPower(1) finite={c.finite}, power law rejected={rejected}",
           elapsed, 5.0)
