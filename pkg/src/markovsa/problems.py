"""Built-in benchmarks.

P1  contraction u(theta) = alpha theta with Markov-modulated noise; fixed point 0
P2  double well theta - theta^3 plus Markov noise; lock-in to H = {1}
P3  linear two-timescale tracking, lambda(theta) = theta
P4  unstable field h(theta) = +theta (negative control)
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import PAPER_FACTOR, BoundConstants
from .engine import ProblemSpec
from .errors import DomainError
from .geometry import Attractor, Ball, Box, GeometrySpec
from .markov import ConstantKernel, estimate_CR
from .odeflow import constants_CL, horizon_T
from .schedules import PowerLaw
from .twotimescale import TwoTimescaleSpec

SYMMETRIC = [[0.7, 0.3], [0.3, 0.7]]


def two_state_chain(c):
    return ConstantKernel(SYMMETRIC, [[c], [-c]])


def uniform_mart(sigma):
    """M_{n+1} uniform on [-sigma, sigma], independent of the past."""
    return lambda theta, u: sigma * (2.0 * u - 1.0)


@dataclass
class BenchmarkSpec:
    name: str
    description: str
    spec: object  # ProblemSpec or TwoTimescaleSpec
    geometry: Optional[GeometrySpec]
    constants: dict
    expected: list
    schedule: object
    n_start: int
    theta0: tuple
    params: dict = field(default_factory=dict)

    def bound_constants(self, T=None, azuma_factor=PAPER_FACTOR, C_hat=None, C_R=None, C_R_dprime=None,
                        grid_density=11, cr_points=41):
        """Instantiate the lock-in constants from the geometry, the flow and the Poisson solution."""
        if self.geometry is None or not isinstance(self.spec, ProblemSpec):
            raise DomainError(f"{self.name} has no lock-in geometry")
        g, sp = self.geometry, self.spec
        h = sp.mean_field()
        prov = {}
        if T is None:
            T = horizon_T(g, h, grid_density).T
            prov["T"] = "estimated: grid horizon with safety 1.1"
        fc = constants_CL(g, h, T, L=self.constants.get("L"), grid_density=grid_density)
        prov["C"] = "estimated: sup |h| along the flow, safety 1.05"
        prov["L"] = "estimated" if fc.L_estimated else "declared"
        if C_R is None:
            C_R = self.constants.get("C_R")
        if C_R is None:
            lo, hi = g.B.bounds()
            grid = np.linspace(lo, hi, cr_points)
            C_R = estimate_CR(sp.kernel, sp.f, grid)
            prov["C_R"] = "estimated: Poisson solution over a grid on B"
        else:
            prov["C_R"] = "user-set"
        if C_R_dprime is not None:
            prov["C_R_dprime"] = "user-set"
        if C_hat is not None:
            prov["C_hat"] = "user-set"
        C_bar = float(np.linalg.norm(sp.kernel.state_values, axis=1).max())
        return BoundConstants(
            L=fc.L, C=fc.C, C_bar=C_bar, K=sp.K, K_prime=sp.K_prime, C_R=C_R, T=T, d=sp.dim,
            delta_B=g.delta_B, tilde_C=g.tilde_C, C_R_dprime=C_R_dprime, C_hat=C_hat,
            azuma_denominator_factor=azuma_factor, provenance=prov,
        )


def _p1(alpha=0.9, c=0.1, sigma=0.1):
    f = lambda th, y: (alpha - 1.0) * th + y
    spec = ProblemSpec(
        1, f, two_state_chain(c), K=max(1 - alpha, c) + 1, mart=uniform_mart(sigma) if sigma else None,
        mart_dim=1 if sigma else 0, K_prime=sigma, L=1 - alpha, h_analytic=lambda th: (alpha - 1.0) * th,
        f3=lambda th, y, y1: (alpha - 1.0) * th + y1, name="P1",
    )
    geom = GeometrySpec(Attractor(((0.0,),)), Ball((0.0,), 1.0), None, eps=0.5, eps1=0.25)
    return BenchmarkSpec(
        "P1", "contraction u(theta) = alpha theta with two-state Markov noise; fixed point 0",
        spec, geom, {"K": spec.K, "K_prime": sigma, "L": 1 - alpha, "C_bar": c},
        ["h(theta) = (alpha - 1) theta", "iterates settle at 0", "Poisson residual <= 1e-10"],
        PowerLaw(0.75), 1, (1.0,), {"alpha": alpha, "c": c, "sigma": sigma},
    )


def _p2(c=0.1, sigma=0.1):
    f = lambda th, y: th - th**3 + y
    spec = ProblemSpec(
        1, f, two_state_chain(c), K=1.5, mart=uniform_mart(sigma) if sigma else None,
        mart_dim=1 if sigma else 0, K_prime=sigma, L=5.75, h_analytic=lambda th: th - th**3,
        f3=lambda th, y, y1: th - th**3 + y1, audit_box=(-1.8, 1.8), name="P2",
    )
    geom = GeometrySpec(Attractor(((1.0,),)), Box((0.5,), (1.5,)), Box((0.0,), (np.inf,)),
                        eps=0.25, eps1=0.05, delta_B=0.1)
    return BenchmarkSpec(
        "P2", "double well theta - theta^3 with Markov noise; lock-in to H = {1} from B = [0.5, 1.5]",
        spec, geom, {"K": 1.5, "K_prime": sigma, "L": 5.75, "C_bar": c},
        ["ODE fixed points -1, 0, 1", "H = {1} attracts (0, inf)", "lock-in probability grows with n0"],
        PowerLaw(1.0), 10, (1.0,), {"c": c, "sigma": sigma},
    )


def _p3(c=0.1, sigma=0.1, k_fast=0.6, T_s=1.0, T_f=1.0):
    slow = ProblemSpec(
        1, lambda th, z: -(th - 1.0) + z, two_state_chain(c), K=1 + c,
        mart=uniform_mart(sigma) if sigma else None, mart_dim=1 if sigma else 0, K_prime=sigma, L=1.0,
        h_analytic=lambda th: -(th - 1.0), name="P3-slow",
    )
    spec = TwoTimescaleSpec(
        slow, 1, lambda th, w, z: th - w + z, two_state_chain(c), PowerLaw(1.0, offset=2),
        PowerLaw(k_fast, offset=2), lambda th: th, K1=1 + c,
        fast_mart=uniform_mart(sigma) if sigma else None, fast_mart_dim=1 if sigma else 0, K2=sigma,
        T_s=T_s, T_f=T_f, name="P3",
    )
    return BenchmarkSpec(
        "P3", "linear two-timescale tracking: slow -(theta - 1), fast theta - w, lambda(theta) = theta",
        spec, None, {"K1": 1 + c, "K2": sigma},
        ["w_n tracks theta_n", "theta_n -> 1"], PowerLaw(1.0, offset=2), 2, (0.0, 0.0),
        {"c": c, "sigma": sigma, "k_fast": k_fast},
    )


def _p4(c=0.1, sigma=0.1):
    spec = ProblemSpec(
        1, lambda th, y: th + y, two_state_chain(c), K=1 + c, mart=uniform_mart(sigma) if sigma else None,
        mart_dim=1 if sigma else 0, K_prime=sigma, L=1.0, h_analytic=lambda th: th, name="P4",
    )
    return BenchmarkSpec(
        "P4", "unstable field h(theta) = +theta (negative control)", spec, None,
        {"K": 1 + c, "K_prime": sigma, "L": 1.0},
        ["divergence from |theta0| >= 1", "tightness diagnostics flag failure"],
        PowerLaw(0.6), 1, (1.0,), {"c": c, "sigma": sigma},
    )


REGISTRY = {"P1": _p1, "P2": _p2, "P3": _p3, "P4": _p4}


def get(name, **params):
    try:
        factory = REGISTRY[name.upper()]
    except KeyError:
        raise DomainError(f"unknown benchmark {name!r}; known: {', '.join(REGISTRY)}") from None
    return factory(**params)


def list_benchmarks():
    return [(name, REGISTRY[name]().description) for name in REGISTRY]
