"""Finite windows of Z^d: sites, boxes, boundary bonds and the position weights."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GeometryError(ValueError):
    """Raised when a box or site does not fit the lattice window."""


@dataclass(frozen=True)
class LatticeSpec:
    """Centered window ``{-h, ..., h}^d`` of Z^d with ``extent = 2h + 1`` sites per side.

    Sites are indexed in C order over the axes, so index order is the
    lexicographic order of the coordinate tuples.
    """

    dim: int
    extent: int

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise GeometryError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if self.extent < 1 or self.extent % 2 == 0:
            raise GeometryError(f"extent must be a positive odd integer, got {self.extent}")

    @property
    def half(self) -> int:
        return self.extent // 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.extent,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.extent**self.dim

    @cached_property
    def coords(self) -> np.ndarray:
        """Integer coordinates of every site, shape ``(n_sites, dim)``."""
        grids = np.indices(self.shape).reshape(self.dim, -1).T
        return grids - self.half

    def contains(self, site) -> bool:
        return len(site) == self.dim and all(abs(int(c)) <= self.half for c in site)

    def index_of(self, site) -> int:
        if not self.contains(site):
            raise GeometryError(f"site {tuple(site)} outside lattice of extent {self.extent}")
        return int(np.ravel_multi_index(tuple(int(c) + self.half for c in site), self.shape))

    def site_of(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.n_sites:
            raise GeometryError(f"index {index} out of range")
        return tuple(int(c) - self.half for c in np.unravel_index(index, self.shape))

    @property
    def origin(self) -> int:
        return self.index_of((0,) * self.dim)


@dataclass(frozen=True)
class Box:
    """Cube ``{x : ||x - center||_inf <= radius}``; the radius may be any positive real."""

    center: tuple[int, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        if not self.radius > 0:
            raise GeometryError(f"box radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def int_radius(self) -> int:
        return math.floor(self.radius)

    def contains(self, site) -> bool:
        return max(abs(int(s) - c) for s, c in zip(site, self.center)) <= self.radius

    @property
    def n_sites(self) -> int:
        return (2 * self.int_radius + 1) ** self.dim

    def sites(self) -> list[tuple[int, ...]]:
        """Box sites in lexicographic order."""
        r = self.int_radius
        ranges = [range(c - r, c + r + 1) for c in self.center]
        return [tuple(s) for s in itertools.product(*ranges)]

    def fits(self, lattice: LatticeSpec, layer: int = 0) -> bool:
        """True if the box plus ``layer`` exterior shells lies inside the window."""
        r = self.int_radius + layer
        return self.dim == lattice.dim and all(abs(c) + r <= lattice.half for c in self.center)

    def indices(self, lattice: LatticeSpec) -> np.ndarray:
        if not self.fits(lattice):
            raise GeometryError(f"{self} does not fit inside lattice of extent {lattice.extent}")
        return np.array([lattice.index_of(s) for s in self.sites()], dtype=np.intp)


def indicator(lattice: LatticeSpec, site) -> np.ndarray:
    """Coordinate vector of ``site``: on Z^d the unit-cube indicator selects one site."""
    e = np.zeros(lattice.n_sites)
    e[lattice.index_of(site)] = 1.0
    return e


def _unit_steps(dim: int):
    for axis in range(dim):
        for sign in (-1, 1):
            step = [0] * dim
            step[axis] = sign
            yield tuple(step)


def nearest_neighbors(site) -> list[tuple[int, ...]]:
    return [tuple(s + d for s, d in zip(site, step)) for step in _unit_steps(len(site))]


def boundary_pairs(box: Box, lattice: LatticeSpec) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Nearest-neighbour bonds ``(u, u')`` with ``u`` in the box and ``u'`` outside.

    The box must leave at least one exterior layer inside the lattice so no
    crossing bond is lost to the window edge.
    """
    if box.dim != lattice.dim:
        raise GeometryError("box and lattice dimensions differ")
    if not box.fits(lattice, layer=1):
        raise GeometryError(
            f"box at {box.center} with radius {box.radius} leaves no exterior layer "
            f"inside a lattice of extent {lattice.extent}"
        )
    pairs = []
    for u in box.sites():
        for v in nearest_neighbors(u):
            if not box.contains(v):
                pairs.append((u, v))
    pairs.sort()
    return pairs


def position_second_moment_weights(lattice: LatticeSpec) -> np.ndarray:
    """``|x|^2 = sum_j x_j^2`` at every site."""
    return np.sum(lattice.coords.astype(float) ** 2, axis=1)

