import csv
import math
import re
from pathlib import Path

import mpmath
import numpy as np
import pytest

import oracles
from markovsa.complexity import (ComplexityInputs, capital_N0, complexity_report, n0_closed_form, n_prime0,
                                 n_prime0_exact, parse_grid, phi_T, plot_sweeps, power_partial_sum, sweep_k,
                                 t_star, write_sweep_csv)
from markovsa.errors import ComplexityOverflow, DomainError, ScheduleExhausted
from markovsa.schedules import Explicit, PowerLaw

GOLDEN = Path(__file__).parent / "golden"


def test_t_star_value_and_location():
    T, v = t_star(0.9)
    assert v == pytest.approx(15.16, abs=0.01)
    assert T == pytest.approx(4.2, abs=0.3)
    # 1-D scan oracle at step 1e-3
    grid = np.arange(1e-3, 40, 1e-3)
    vals = (grid + 1) / -np.expm1(-0.1 * grid)
    assert T == pytest.approx(grid[np.argmin(vals)], abs=2e-3)
    assert v == pytest.approx(float(oracles.phi(T, 0.9)), rel=1e-12)


def test_t_star_bracket_invariance_and_alpha_trend():
    assert t_star(0.9, 0.5, 20)[1] == pytest.approx(t_star(0.9, 1e-6, 500)[1], abs=1e-4)
    mins = [t_star(a)[1] for a in np.linspace(0.9, 0.99, 10)]
    assert all(b > a for a, b in zip(mins, mins[1:]))
    with pytest.raises(DomainError):
        t_star(1.0)


def test_n0_closed_form_example():
    n0, terms, top = n0_closed_form(ComplexityInputs(1, 0.1, 0.1, 0.75))
    ref = oracles.n0_terms(1, 0.1, 0.1, 0.75)
    for got, want in zip(terms, ref):
        assert got == pytest.approx(float(want), rel=1e-12)
    assert [round(t, 1) for t in terms] == [21.5, 400.0, 40000.0, 464.2, 212075.9, 900.0]
    assert n0 == oracles.n0(1, 0.1, 0.1, 0.75) == 212076


def test_n0_small_and_limits():
    assert n0_closed_form(ComplexityInputs(1e-7, 0.01, 0.1, 0.75))[0] == 1
    t_a = n0_closed_form(ComplexityInputs(1, 0.1, 0.1, 0.75))[1]
    t_b = n0_closed_form(ComplexityInputs(1, 0.1, 1 - 1e-12, 0.75))[1]
    assert t_b[4] < 1e-15 and t_a[:4] == t_b[:4] and t_a[5] == t_b[5]
    with pytest.raises(DomainError):
        ComplexityInputs(1, 0.1, 0.1, 1.0)
    assert ComplexityInputs(1, 0.1, 0.1, 0.75).r == pytest.approx(0.15)


def test_n0_overflow_flags_term():
    with pytest.raises(ComplexityOverflow) as e:
        n0_closed_form(ComplexityInputs(1e6, 1e-6, 0.1, 0.501))
    assert e.value.term_index in range(6)


def test_n0_monotonicity_grid():
    Ms, es, gs = [0.01, 1, 100], [0.3, 0.1, 0.01], [0.5, 0.1, 0.01]
    for k in (0.6, 0.75, 0.9):
        for e in es:
            for g in gs:
                vals = [n0_closed_form(ComplexityInputs(M, e, g, k))[0] for M in Ms]
                assert vals == sorted(vals)
        for M in Ms:
            for g in gs:
                vals = [n0_closed_form(ComplexityInputs(M, e, g, k))[0] for e in es]
                assert vals == sorted(vals)
            for e in es:
                vals = [n0_closed_form(ComplexityInputs(M, e, g, k))[0] for g in gs]
                assert vals == sorted(vals)


def test_n_prime0_examples():
    assert n_prime0_exact(1000, 0.75) == pytest.approx(float(oracles.n_prime0_exact(1000, 0.75)), rel=1e-13)
    assert n_prime0_exact(1000, 0.75) == pytest.approx(9.4134**4, rel=1e-4)
    assert n_prime0(1000, 0.75) == 7853
    assert n_prime0(1, 0.75) == 527
    with pytest.raises(DomainError):
        n_prime0(10, 1.0)
    for n0 in (1, 10, 1000, 10**6):
        for k in (0.55, 0.75, 0.95):
            assert n_prime0(n0, k) >= n0


def test_complexity_report():
    r = complexity_report(ComplexityInputs(1, 0.1, 0.1, 0.75))
    assert r.n0 == 212076 and r.N_prime0 >= r.n0 and r.min_value == pytest.approx(15.1622, abs=1e-4)


def test_capital_N0_examples():
    assert capital_N0(Explicit([1.0] * 100), 0 + 0, threshold=15.16) == 16
    assert capital_N0(Explicit([1.0] * 100), 3) >= 1
    with pytest.raises(ScheduleExhausted):
        capital_N0(Explicit([1.0] * 10), 0, threshold=15.16)
    got = capital_N0(PowerLaw(1), 100, threshold=15.16)
    assert got == oracles.capital_N0_harmonic(100, "15.16")
    assert got == pytest.approx(100 * math.exp(15.16), rel=1e-2)


@pytest.mark.parametrize("k,lo,hi", [(1.0, 1, 10), (0.75, 101, 5000), (0.6, 7, 10**8), (1.0, 101, 385542447)])
def test_power_partial_sum_against_zeta(k, lo, hi):
    assert power_partial_sum(k, lo, hi) == pytest.approx(float(oracles.power_partial_sum(k, lo, hi)), rel=1e-13)


def read_golden(M, eps):
    name = f"sweep_M{M:g}_eps{eps:g}.csv"
    with open(GOLDEN / name) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("M,eps", oracles.PAPER_SWEEPS)
def test_sweep_matches_golden(M, eps):
    res = sweep_k(M, eps, oracles.SWEEP_GAMMA, oracles.sweep_grid())
    rows = read_golden(M, eps)
    assert len(rows) == len(res.k)
    for i, row in enumerate(rows):
        assert res.k[i] == float(row["k"])
        assert res.n0_exact[i] == pytest.approx(float(row["n0_exact"]), rel=1e-12)
        assert res.N_prime0_exact[i] == pytest.approx(float(row["N_prime0_exact"]), rel=1e-12)
        # integer columns are exact while double rounding cannot reach the ceiling boundary
        if int(row["N_prime0"]) < 10**9:
            assert res.n0[i] == int(row["n0"]) and res.N_prime0[i] == int(row["N_prime0"])
        else:
            assert res.N_prime0[i] == pytest.approx(int(row["N_prime0"]), rel=1e-12)
    want = oracles.sweep_grid()[int(np.argmin([float(r["N_prime0_exact"]) for r in rows]))]
    assert res.argmin_k == want
    assert np.all(np.isfinite(res.N_prime0_exact)) and np.all(res.N_prime0_exact > 0)


def test_sweep_optimal_k_bias():
    grid = parse_grid("0.55:0.99:0.01")
    big = sweep_k(100, 0.01, 0.1, grid).argmin_k
    small = sweep_k(1e-7, 0.01, 0.1, grid).argmin_k
    assert big > small
    assert abs(big - 1) < abs(small - 1)
    for eps in (0.01, 0.001):
        assert sweep_k(1e-7, eps, 0.1, grid).argmin_k < 0.75
    assert sweep_k(1, 0.1, 0.1, [0.8]).argmin_k == 0.8


def test_parse_grid():
    g = parse_grid("0.55:0.99:0.01")
    assert len(g) == 45 and g[0] == 0.55 and g[-1] == 0.99
    assert parse_grid("0.6,0.7").tolist() == [0.6, 0.7]
    with pytest.raises(DomainError):
        parse_grid("0.9:0.5:0.1")
    with pytest.raises(DomainError):
        sweep_k(1, 0.1, 0.1, [0.5])


def test_sweep_csv_and_svg(tmp_path):
    res = [sweep_k(M, e, 0.1, oracles.sweep_grid()) for M, e in oracles.PAPER_SWEEPS]
    write_sweep_csv(res[0], tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["k", "n0", "N_prime0", "n0_exact", "N_prime0_exact"] and len(rows) == 46
    svg = tmp_path / "s.svg"
    plot_sweeps(res, svg)
    text = svg.read_text()
    assert re.search(r'width="800pt"|width="576pt"', text)
    assert "<text" not in text and "@font-face" not in text and "xlink:href=\"http" not in text
    plot_sweeps(res, tmp_path / "t.svg")
    assert (tmp_path / "t.svg").read_bytes() == svg.read_bytes()
