import csv
import itertools

import mpmath
import numpy as np
import pytest

from markovsa import problems
from markovsa.engine import ProblemSpec, simulate
from markovsa.errors import BoundVacuous, DomainError
from markovsa.markov import ConstantKernel
from markovsa.schedules import Explicit, PowerLaw, t_of
from markovsa.twotimescale import (TwoTimescaleSpec, coupled_partition, nested_bound, s1_s2, simulate_coupled,
                                   simulate_coupled_many, theorem_form_gap, tracking_error, write_tracking_csv)

N_FROZEN = 10**5


def frozen_spec(fast_noise=0.0, g=None):
    chain = problems.two_state_chain(0.1)
    slow = ProblemSpec(1, lambda th, z: -(th - 1.0) + z, chain, K=1.1, name="slow")
    fast_chain = problems.two_state_chain(fast_noise)
    return TwoTimescaleSpec(
        slow, 1, g or (lambda th, w, z: th - w + z), fast_chain, Explicit([0.0] * (N_FROZEN + 2)),
        PowerLaw(0.6, offset=2), lambda th: th, K1=2.0,
    )


def test_frozen_slow_tracks_fixed_target():
    spec = frozen_spec()
    tr = simulate_coupled(spec, [0.7], [0.0], (0, 0), N_FROZEN, seed=1, n_start=2, stride=100)
    assert np.all(tr.theta == 0.7)
    assert abs(tr.w[-1, 0] - 0.7) <= 1e-3
    assert tracking_error(tr, spec.lambda_map).trailing_max <= 1e-3


def test_frozen_reduction_is_bitwise_engine():
    spec = frozen_spec(fast_noise=0.3)
    spec.fast_mart, spec.fast_mart_dim, spec.K2 = problems.uniform_mart(0.2), 1, 0.2
    tr = simulate_coupled(spec, [0.7], [0.0], (0, 1), 3000, seed=99, n_start=2)
    ref = simulate(spec.frozen_fast_spec([0.7]), spec.sched_b, [0.0], 1, 2, 3000, seed=99)
    assert np.array_equal(tr.w, ref.theta)
    assert np.array_equal(tr.z2, ref.states)
    assert np.array_equal(tr.mart2, ref.mart)


def test_zero_fast_field_keeps_w():
    spec = frozen_spec(g=lambda th, w, z: np.zeros_like(w))
    tr = simulate_coupled(spec, [0.2], [-0.4], (0, 0), 500, seed=3, n_start=2)
    assert np.all(tr.w == -0.4)


def test_coupled_determinism_and_batching():
    spec = problems.get("P3").spec
    a = simulate_coupled(spec, [0.0], [0.0], (0, 0), 2000, seed=5)
    b = simulate_coupled(spec, [0.0], [0.0], (0, 0), 2000, seed=5)
    many = simulate_coupled_many(spec, [0.0], [0.0], (0, 0), 2000, [4, 5, 6])
    for x, y in ((a, b), (a, many[1])):
        assert np.array_equal(x.theta, y.theta) and np.array_equal(x.w, y.w) and np.array_equal(x.z1, y.z1)


def test_coupled_residual_definition():
    spec = problems.get("P3").spec
    tr = simulate_coupled(spec, [0.0], [0.0], (0, 0), 300, seed=5)
    n = tr.n[:-1]
    h = -(tr.theta[:-1] - 1.0) + spec.slow.kernel.state_values[tr.z1[:-1]]
    ratio = (spec.sched_a.steps(n) / spec.sched_b.steps(n))[:, None]
    assert np.allclose(tr.residual, ratio * h, rtol=0, atol=1e-15)


def test_audit():
    spec = problems.get("P3").spec
    rep = spec.audit()
    assert rep["ratio_last"] < rep["ratio_first"] and rep["lambda_lipschitz"] == pytest.approx(1.0)
    bad = problems.get("P3").spec
    bad.sched_a, bad.sched_b = PowerLaw(0.6, offset=2), PowerLaw(1.0, offset=2)
    with pytest.raises(DomainError):
        bad.audit()


def test_tracking_manufactured_path():
    spec = problems.get("P3").spec
    tr = simulate_coupled(spec, [0.0], [0.0], (0, 0), 50, seed=5)
    tr.w = tr.theta.copy()
    s = tracking_error(tr, spec.lambda_map)
    assert np.all(s.error == 0.0)


def test_tracking_linear_benchmark_short():
    spec = problems.get("P3").spec
    paths = simulate_coupled_many(spec, [0.0], [0.0], (0, 0), 20000, list(range(20)), stride=10)
    for tr in paths:
        assert tracking_error(tr, spec.lambda_map).trailing_mean <= 0.05


def test_tracking_error_decreases_with_horizon():
    spec = problems.get("P3").spec
    seeds = list(range(100, 120))
    N = 5000
    short = [tracking_error(t, spec.lambda_map).trailing_mean
             for t in simulate_coupled_many(spec, [0.0], [0.0], (0, 0), N, seeds, stride=5)]
    long = [tracking_error(t, spec.lambda_map).trailing_mean
            for t in simulate_coupled_many(spec, [0.0], [0.0], (0, 0), 4 * N, seeds, stride=20)]
    se = np.hypot(np.std(short, ddof=1), np.std(long, ddof=1)) / np.sqrt(len(seeds))
    assert np.mean(long) <= np.mean(short) + 2 * se
    assert np.mean(long) < np.mean(short)


def test_tracking_csv(tmp_path):
    spec = problems.get("P3").spec
    tr = simulate_coupled(spec, [0.0], [0.0], (0, 0), 20, seed=5)
    p = tmp_path / "track.csv"
    write_tracking_csv(tr, tracking_error(tr, spec.lambda_map), p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["n", "tracking_error", "theta_0", "w_0"] and len(rows) == 22


def test_partition_explicit():
    s = Explicit([0.1] * 1000)
    cp = coupled_partition(s, s, 1, 1.0, 2.0, n_segments=5)
    assert [n - 1 for n in cp.slow.n[:11]] == [10 * m for m in range(11)]
    assert [n - 1 for n in cp.coupled.n] == [20 * m for m in range(6)]
    assert cp.l == [2 * m for m in range(6)] and not cp.saturated
    with pytest.raises(DomainError):
        coupled_partition(s, s, 1, 1.0, 1.5, n_segments=2)


def test_partition_power_pair_against_recomputation():
    a, b = PowerLaw(1.0, offset=2), PowerLaw(0.6, offset=2)
    n0 = 50
    cp = coupled_partition(a, b, n0, 1.0, 2.0, n_segments=6)
    assert all(y >= x for x, y in zip(cp.l, cp.l[1:]))
    ts = [t_of(a, n) - t_of(a, n0) for n in cp.slow.n]
    for m, nc in enumerate(cp.coupled.n):
        tc = t_of(b, nc) - t_of(b, n0)
        assert cp.l[m] == max(k for k, t in enumerate(ts) if t <= tc + 1e-9)


def test_nested_bound_examples():
    assert nested_bound([0, 0, 0], [0, 0], [0, 1]) == 1.0
    assert nested_bound([0.1], [0.1], [0]) == 0.8
    with pytest.raises(DomainError):
        nested_bound([1.0], [0.1], [0])
    with pytest.raises(DomainError):
        nested_bound([0.1], [1.2], [0])
    with pytest.raises(BoundVacuous) as e:
        nested_bound([0.6, 0.5], [0.1, 0.1], [0, 1])
    assert e.value.m == 0


def test_nested_bound_monotone_grid():
    grid = [0.0, 0.05, 0.1, 0.2]
    l_map = [0, 1]
    for ps0, ps1, pc0, pc1 in itertools.product(grid, repeat=4):
        base = nested_bound([ps0, ps1], [pc0, pc1], l_map)
        for i in range(4):
            bumped = [ps0, ps1, pc0, pc1]
            bumped[i] += 0.05
            assert nested_bound(bumped[:2], bumped[2:], l_map) <= base + 1e-15


def test_s1_s2():
    S1, S2 = s1_s2(PowerLaw(1.0), PowerLaw(0.6), 10)
    mpmath.mp.dps = 30
    assert S1 == pytest.approx(float(mpmath.zeta(2, 10)), abs=1e-11)
    assert S2 == pytest.approx(float(mpmath.zeta(1.2, 10)), abs=1e-10)
    assert S1 == pytest.approx(0.105, abs=1e-3) and S1 < S2
    with pytest.raises(DomainError):
        s1_s2(PowerLaw(0.8), PowerLaw(0.8), 10)
    pairs = [s1_s2(PowerLaw(1.0), PowerLaw(0.6), n) for n in (10, 100, 1000)]
    assert all(q[0] < p[0] and q[1] < p[1] for p, q in zip(pairs, pairs[1:]))
    assert theorem_form_gap(0.8, 0.1) == pytest.approx(2.0)
