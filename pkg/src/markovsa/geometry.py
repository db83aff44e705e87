"""Balls, boxes, attractor descriptors and the nested-set geometry around H."""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError


class Region:
    dim: int

    def contains(self, x):
        raise NotImplementedError

    def grid(self, density):
        raise NotImplementedError

    def bounds(self):
        raise NotImplementedError

    def sample(self, rng, n):
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Region):
    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError("ball radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    @property
    def c(self):
        return np.asarray(self.center, dtype=float)

    def contains(self, x):
        return np.linalg.norm(np.atleast_2d(x) - self.c, axis=1) < self.radius

    def bounds(self):
        return self.c - self.radius, self.c + self.radius

    def grid(self, density):
        """Bounding-box lattice with outside points pulled radially onto the sphere."""
        lo, hi = self.bounds()
        pts = _lattice(lo, hi, density)
        off = pts - self.c
        r = np.linalg.norm(off, axis=1)
        out = r > self.radius
        pts[out] = self.c + off[out] * (self.radius / r[out])[:, None]
        return np.unique(pts, axis=0)

    def sample(self, rng, n):
        d = self.dim
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / d)
        return self.c + g * r[:, None]


@dataclass(frozen=True)
class Box(Region):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise DomainError("box needs lo < hi componentwise")

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.all((x > np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=1)

    def bounds(self):
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)

    def grid(self, density):
        lo, hi = self.bounds()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("cannot grid an unbounded box")
        return _lattice(lo, hi, density)

    def sample(self, rng, n):
        lo, hi = self.bounds()
        return lo + (hi - lo) * rng.random((n, self.dim))


def _lattice(lo, hi, density):
    axes = [np.linspace(a, b, max(int(density), 2)) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def region_inside(inner, outer, strict=False):
    """Closed-form containment for the supported shapes (closure of inner within outer)."""
    cmp = (lambda a, b: a < b) if strict else (lambda a, b: a <= b)
    if isinstance(inner, Ball):
        if isinstance(outer, Ball):
            return cmp(np.linalg.norm(inner.c - outer.c) + inner.radius, outer.radius)
        lo, hi = outer.bounds()
        return bool(np.all(cmp(lo, inner.c - inner.radius)) and np.all(cmp(inner.c + inner.radius, hi)))
    lo, hi = inner.bounds()
    if isinstance(outer, Box):
        olo, ohi = outer.bounds()
        return bool(np.all(cmp(olo, lo)) and np.all(cmp(hi, ohi)))
    corners = _lattice(lo, hi, 2)
    return bool(cmp(np.linalg.norm(corners - outer.c, axis=1).max(), outer.radius))


@dataclass(frozen=True)
class Attractor:
    """H as a finite point set, or through a user distance function."""

    points: tuple = ()
    distance_fn: Optional[Callable] = None

    def distance(self, x):
        x = np.atleast_2d(x)
        if self.distance_fn is not None:
            return np.asarray(self.distance_fn(x), dtype=float)
        P = np.asarray(self.points, dtype=float)
        return np.linalg.norm(x[:, None, :] - P[None, :, :], axis=2).min(axis=1)


@dataclass(frozen=True)
class GeometrySpec:
    H: Attractor
    B: Region
    G: Optional[Region]
    eps: float
    eps1: float
    delta_B: Optional[float] = None

    def __post_init__(self):
        if self.delta_B is None:
            object.__setattr__(self, "delta_B", (self.eps - self.eps1) / 2)
        self.validate()

    def validate(self):
        if not 0 < self.eps1 < self.eps:
            raise DomainError("geometry needs 0 < eps1 < eps")
        if not 0 < self.delta_B <= self.eps - self.eps1 + 1e-15:
            raise DomainError("geometry needs 0 < delta_B <= eps - eps1")
        if self.H.distance_fn is None:
            for p in self.H.points:
                if not region_inside(Ball(tuple(p), self.eps), self.B):
                    raise DomainError(f"H^eps around {p} is not inside B")
        if self.G is not None and not region_inside(self.B, self.G, strict=True):
            raise DomainError("closure of B must lie inside G")
        return True

    @property
    def tilde_C(self):
        """sup of |theta| over the closure of B."""
        if isinstance(self.B, Ball):
            return float(np.linalg.norm(self.B.c) + self.B.radius)
        lo, hi = self.B.bounds()
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))

    def in_H(self, x, radius):
        return self.H.distance(x) < radius
