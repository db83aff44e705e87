"""Finite-state iterate-dependent Markov kernels and their Poisson equation.

All user callables are batch-first: ``f(theta, y)`` receives ``theta`` of
shape ``(N, d)`` and state embeddings ``y`` of shape ``(N, m)`` and returns
``(N, d)``.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, StructuralError

ROW_TOL = 1e-12


def _as_stochastic(P, where="kernel"):
    P = np.asarray(P, dtype=float)
    if P.ndim < 2 or P.shape[-1] != P.shape[-2]:
        raise StructuralError(f"{where}: transition matrix must be square")
    if np.any(P < 0):
        raise StructuralError(f"{where}: negative transition probability")
    if np.any(np.abs(P.sum(axis=-1) - 1.0) > ROW_TOL):
        raise StructuralError(f"{where}: rows must sum to 1 within {ROW_TOL:g}")
    return P


class KernelFamily:
    """theta -> row-stochastic S x S matrix, plus the state embedding y(s)."""

    def __init__(self, state_values):
        sv = np.asarray(state_values, dtype=float)
        if sv.ndim == 1:
            sv = sv[:, None]
        self.state_values = sv

    @property
    def state_count(self):
        return self.state_values.shape[0]

    def matrix(self, theta):
        return self.matrices(np.atleast_2d(np.asarray(theta, dtype=float)))[0]

    def matrices(self, thetas):
        raise NotImplementedError


class ConstantKernel(KernelFamily):
    def __init__(self, P, state_values):
        super().__init__(state_values)
        self.P = _as_stochastic(P)
        if self.P.shape[0] != self.state_count:
            raise StructuralError("kernel size does not match the number of states")

    def matrices(self, thetas):
        return np.broadcast_to(self.P, (len(thetas),) + self.P.shape)


class AffineKernel(KernelFamily):
    """Pi(theta) = clip_rows(P0 + sum_i theta_i P_i), rows renormalised."""

    def __init__(self, P0, perturbations, state_values):
        super().__init__(state_values)
        self.P0 = np.asarray(P0, dtype=float)
        self.perturbations = np.asarray(perturbations, dtype=float).reshape((-1,) + self.P0.shape)
        _as_stochastic(self.P0, "base matrix")

    def matrices(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        P = self.P0 + np.einsum("nd,dij->nij", thetas[:, : len(self.perturbations)], self.perturbations)
        P = np.clip(P, 0.0, None)
        sums = P.sum(axis=-1, keepdims=True)
        if np.any(sums <= 0):
            raise StructuralError("affine kernel row clipped to zero")
        return P / sums


class CallableKernel(KernelFamily):
    def __init__(self, fn, state_values):
        super().__init__(state_values)
        self.fn = fn

    def matrices(self, thetas):
        out = np.stack([np.asarray(self.fn(t), dtype=float) for t in np.asarray(thetas)])
        return _as_stochastic(out)


def read_kernel_csv(path):
    """CSV blocks: ``S,m``; S embedding rows; S rows of P0; optional S-row perturbation blocks."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if row and not row[0].lstrip().startswith("#"):
                rows.append((lineno, row))
    if not rows:
        raise ConfigError(f"{path}: empty kernel file")
    try:
        S, m = (int(x) for x in rows[0][1][:2])
        body = [(ln, [float(x) for x in r if x.strip()]) for ln, r in rows[1:]]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}", line=rows[0][0]) from None
    if len(body) < 2 * S or (len(body) - 2 * S) % S:
        raise ConfigError(f"{path}: expected 2S + j*S rows after the header, got {len(body)}")
    for ln, r in body[:S]:
        if len(r) != m:
            raise ConfigError(f"{path}: embedding row needs {m} values", line=ln)
    for ln, r in body[S:]:
        if len(r) != S:
            raise ConfigError(f"{path}: matrix row needs {S} values", line=ln)
    values = np.array([r for _, r in body[:S]])
    P0 = np.array([r for _, r in body[S : 2 * S]])
    extra = np.array([r for _, r in body[2 * S :]]).reshape(-1, S, S)
    if len(extra) == 0:
        return ConstantKernel(P0, values)
    return AffineKernel(P0, extra, values)


def communicating_classes(P):
    """Strongly connected classes of the support graph and which are closed."""
    support = np.asarray(P) > 0
    ncomp, labels = connected_components(support, directed=True, connection="strong")
    classes = [np.flatnonzero(labels == c).tolist() for c in range(ncomp)]
    closed = []
    for c, members in enumerate(classes):
        leaves = support[members][:, labels != c].any()
        closed.append(not leaves)
    return classes, closed


def check_unique_stationary(P):
    classes, closed = communicating_classes(P)
    if sum(closed) != 1:
        names = [cls for cls, c in zip(classes, closed) if c]
        raise StructuralError(f"stationary distribution not unique: closed classes {names}")


def _check_batch(Ps):
    seen = set()
    for P in Ps:
        key = (P > 0).tobytes()
        if key not in seen:
            seen.add(key)
            check_unique_stationary(P)


def stationary_batch(Ps, check=True):
    Ps = np.asarray(Ps, dtype=float)
    if check:
        _check_batch(Ps)
    N, S, _ = Ps.shape
    A = np.swapaxes(Ps, 1, 2) - np.eye(S)
    A[:, -1, :] = 1.0
    b = np.zeros((N, S))
    b[:, -1] = 1.0
    return np.linalg.solve(A, b[..., None])[..., 0]


def stationary(kernel, theta):
    """Unique invariant law of Pi_theta, via the linear system with a normalisation row."""
    P = kernel.matrix(theta)
    return stationary_batch(P[None])[0]


def f_at_states(kernel, f, thetas):
    """f(theta_n, y(s)) for every n and state s, shape (N, S, d)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    N, d = thetas.shape
    S = kernel.state_count
    th = np.repeat(thetas, S, axis=0)
    ys = np.tile(kernel.state_values, (N, 1))
    return np.asarray(f(th, ys), dtype=float).reshape(N, S, d)


def mean_field(kernel, f, theta):
    """h(theta) = sum_s pi(s) f(theta, y(s))."""
    pi = stationary(kernel, theta)
    return pi @ f_at_states(kernel, f, theta)[0]


def mean_field_fn(kernel, f):
    """Batch callable theta (N, d) -> h (N, d)."""

    def h(thetas):
        thetas = np.atleast_2d(thetas)
        Ps = kernel.matrices(thetas)
        pi = stationary_batch(Ps)
        return np.einsum("ns,nsd->nd", pi, f_at_states(kernel, f, thetas))

    return h


@dataclass
class PoissonSolution:
    v: np.ndarray
    pi: np.ndarray
    h: np.ndarray
    residual: float
    normalization: float


@dataclass
class PoissonBatch:
    v: np.ndarray  # (N, S, d)
    pi: np.ndarray  # (N, S)
    h: np.ndarray  # (N, d)
    P: np.ndarray  # (N, S, S)
    fvals: np.ndarray  # (N, S, d)

    def residuals(self):
        lhs = self.v - self.P @ self.v
        rhs = self.fvals - self.h[:, None, :]
        return np.abs(lhs - rhs).max(axis=(1, 2))

    def normalizations(self):
        return np.abs(np.einsum("ns,nsd->nd", self.pi, self.v)).max(axis=1)


def poisson_batch(kernel, f, thetas, check=True):
    """Solve (I - Pi_theta) v = f(theta, .) - h(theta), pi . v = 0, for many theta.

    Uses the fundamental-matrix form (I - Pi + 1 pi^T) v = f - h, which is
    nonsingular exactly when the invariant law is unique, plus one step of
    iterative refinement.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    Ps = np.ascontiguousarray(kernel.matrices(thetas), dtype=float)
    pi = stationary_batch(Ps, check=check)
    fv = f_at_states(kernel, f, thetas)
    h = np.einsum("ns,nsd->nd", pi, fv)
    S = Ps.shape[1]
    A = np.eye(S) - Ps + np.ones((S, 1)) * pi[:, None, :]
    rhs = fv - h[:, None, :]
    try:
        v = np.linalg.solve(A, rhs)
        v += np.linalg.solve(A, rhs - A @ v)
    except np.linalg.LinAlgError:
        raise StructuralError("Poisson system singular beyond the rank-one deficiency") from None
    return PoissonBatch(v, pi, h, Ps, fv)


def solve_poisson(kernel, f, theta):
    b = poisson_batch(kernel, f, theta)
    return PoissonSolution(b.v[0], b.pi[0], b.h[0], float(b.residuals()[0]), float(b.normalizations()[0]))


def estimate_CR(kernel, f, theta_grid):
    """Grid estimate of the growth/Lipschitz constant of theta -> v_theta (not certified)."""
    grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    pb = poisson_batch(kernel, f, grid)
    scale = 1.0 + np.linalg.norm(kernel.state_values, axis=1)  # (S,)
    growth = (np.linalg.norm(pb.v, axis=2) / scale).max()
    lip = 0.0
    for i in range(len(grid)):
        dth = np.linalg.norm(grid[i + 1 :] - grid[i], axis=1)
        if len(dth) == 0:
            continue
        dv = np.linalg.norm(pb.v[i + 1 :] - pb.v[i], axis=2) / scale
        ok = dth > 0
        if ok.any():
            lip = max(lip, float((dv[ok] / dth[ok, None]).max()))
    return float(max(growth, lip))


def sample_next(P_rows, u):
    """Inverse-CDF draw of the next state for each row of ``P_rows`` (R, S)."""
    cdf = np.cumsum(P_rows, axis=-1)
    idx = (cdf < u[:, None]).sum(axis=-1)
    return np.minimum(idx, P_rows.shape[-1] - 1)


@dataclass
class NoiseDecomposition:
    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta3: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    target: np.ndarray  # f(theta_n, y(Y_n)) - h(theta_n)
    pv_term: np.ndarray  # (Pi_{theta_n} v_{theta_n})(Y_n) as subtracted in zeta1
    next_law: np.ndarray  # Pi_{theta_n}(Y_n, .)
    v_now: np.ndarray  # v_{theta_n}(.) per step, (N, S, d)

    def reconstruction_error(self):
        return float(np.abs(self.zeta1 + self.zeta2 + self.zeta3 - self.target).max(initial=0.0))

    def zeta1_conditional_means(self):
        """E[zeta1_{n+1} | F_n] by exact summation over successor states."""
        expect = np.einsum("ns,nsd->nd", self.next_law, self.v_now)
        return expect - self.pv_term


def decompose(traj, kernel, f, sched):
    """Split f(theta_n, Y_n) - h(theta_n) into the three Poisson-equation terms."""
    theta = np.asarray(traj.theta, dtype=float)
    states = np.asarray(traj.states)
    if theta.ndim != 2 or len(theta) != len(states):
        raise StructuralError("trajectory iterates and states differ in length")
    if traj.stride != 1:
        raise StructuralError("decomposition needs a full-density trajectory (stride 1)")
    N = len(theta) - 1
    pb = poisson_batch(kernel, f, theta)
    idx = np.arange(N)
    y_now, y_next = states[:-1], states[1:]
    v_n = pb.v[:-1]
    v_np1 = pb.v[1:]
    Pv = pb.P[:-1] @ v_n  # (N, S, d)
    pv_term = Pv[idx, y_now]
    z1 = v_n[idx, y_next] - pv_term
    z2 = v_n[idx, y_now] - v_np1[idx, y_next]
    z3 = v_np1[idx, y_next] - v_n[idx, y_next]
    target = pb.fvals[:-1][idx, y_now] - pb.h[:-1]
    a = sched.steps(np.arange(traj.n_start, traj.n_start + N))[:, None]
    mart = np.zeros_like(z1) if traj.mart is None else np.asarray(traj.mart, dtype=float)

    def partial(z):
        return np.vstack((np.zeros((1, z.shape[1])), np.cumsum(a * z, axis=0)))

    return NoiseDecomposition(
        z1, z2, z3, partial(z1), partial(z2), partial(z3), partial(mart),
        target, pv_term, pb.P[:-1][idx, y_now], v_n,
    )
