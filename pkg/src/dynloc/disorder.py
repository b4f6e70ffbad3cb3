"""Reproducible random on-site couplings.

Every realization draws from its own Philox stream keyed on
``(master_seed, index)``, so a field depends on nothing but those two numbers
and may be generated in any order, on any worker.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import LatticeSpec

KINDS = ("iid-uniform", "iid-density", "correlated-moving-average")

_MASK64 = (1 << 64) - 1


class DisorderError(ValueError):
    pass


@dataclass(frozen=True)
class DisorderSpec:
    """Distribution of the couplings ``lambda_i``.

    ``half_width`` is the support half-width ``M``: values lie in ``[-M, M]``.
    For ``iid-density`` the tabulated density lives on ``density_grid`` and is
    interpolated linearly.  The moving-average field averages iid uniform base
    noise over the cube of radius ``window`` with equal weights.
    """

    kind: str = "iid-uniform"
    half_width: float = 1.0
    window: int = 0
    seed: int = 0
    samples: int = 1
    density_grid: Optional[tuple] = field(default=None, compare=False)
    density_values: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DisorderError(f"unknown disorder kind {self.kind!r}; expected one of {KINDS}")
        if not self.half_width > 0:
            raise DisorderError("support half-width M must be positive")
        if self.window < 0:
            raise DisorderError("correlation window radius must be >= 0")
        if self.kind != "correlated-moving-average" and self.window != 0:
            raise DisorderError("iid kinds take window = 0")
        if not 0 <= self.seed <= _MASK64:
            raise DisorderError("master seed must fit in 64 bits")
        if self.samples < 1:
            raise DisorderError("sample count must be >= 1")
        if self.kind == "iid-density":
            _density_cdf(self)

    @property
    def kernel_size(self) -> int:
        return 2 * self.window + 1


@dataclass(frozen=True)
class DisorderField:
    index: int
    values: np.ndarray
    spec: DisorderSpec

    @property
    def provenance(self) -> dict:
        return {"kind": self.spec.kind, "seed": self.spec.seed, "index": self.index}


def _density_cdf(spec: DisorderSpec):
    if spec.density_grid is None or spec.density_values is None:
        raise DisorderError("iid-density needs density_grid and density_values")
    x = np.asarray(spec.density_grid, dtype=float)
    g = np.asarray(spec.density_values, dtype=float)
    if x.shape != g.shape or x.size < 2 or np.any(np.diff(x) <= 0):
        raise DisorderError("density grid must be strictly increasing and match the values")
    if x[0] < -spec.half_width or x[-1] > spec.half_width:
        raise DisorderError("tabulated density extends beyond [-M, M]")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise DisorderError("unnormalizable density: negative or non-finite values")
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(x))])
    total = cdf[-1]
    if not abs(total - 1.0) <= 1e-10:
        raise DisorderError(f"unnormalizable density: integrates to {total!r}, not 1")
    return x, g, cdf


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for realization ``index`` under ``seed``."""
    key = (int(seed) & _MASK64) | ((int(index) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _inverse_cdf(spec: DisorderSpec, u: np.ndarray) -> np.ndarray:
    x, g, cdf = _density_cdf(spec)
    cdf = cdf / cdf[-1]
    j = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, x.size - 2)
    h = x[j + 1] - x[j]
    slope = (g[j + 1] - g[j]) / h
    rem = u - cdf[j]
    # root of g s + slope s^2 / 2 = rem in the stable form (valid for slope = 0 too)
    denom = g[j] + np.sqrt(np.maximum(g[j] ** 2 + 2 * slope * rem, 0.0))
    step = np.divide(2 * rem, denom, out=np.zeros_like(rem), where=denom > 0)
    return np.clip(x[j] + np.clip(step, 0, h), x[0], x[-1])


def sample_field(spec: DisorderSpec, index: int, lattice: LatticeSpec) -> DisorderField:
    """Couplings of realization ``index`` on every site of ``lattice`` (index order)."""
    if not 0 <= index < spec.samples:
        raise DisorderError(f"realization index {index} outside [0, {spec.samples})")
    rng = stream(spec.seed, index)
    M = spec.half_width
    if spec.kind == "iid-uniform":
        values = rng.uniform(-M, M, size=lattice.n_sites)
    elif spec.kind == "iid-density":
        values = _inverse_cdf(spec, rng.random(lattice.n_sites))
    else:
        r = spec.window
        padded = (lattice.extent + 2 * r,) * lattice.dim
        base = rng.uniform(-M, M, size=padded)
        acc = np.zeros(lattice.shape)
        k = spec.kernel_size
        for offset in np.ndindex(*(k,) * lattice.dim):
            sl = tuple(slice(o, o + lattice.extent) for o in offset)
            acc += base[sl]
        values = (acc / k**lattice.dim).reshape(-1)
    values.setflags(write=False)
    return DisorderField(index=index, values=values, spec=spec)


def kernel_autocorrelation(spec: DisorderSpec, lag: int) -> float:
    """Exact correlation of the field at sites separated by ``lag`` along one axis."""
    if spec.kind != "correlated-moving-average":
        return 1.0 if lag == 0 else 0.0
    k = spec.kernel_size
    return max(k - abs(lag), 0) / k


@dataclass
class CorrelationEstimate:
    lags: np.ndarray
    rho: np.ndarray
    stderr: np.ndarray
    samples: int


def correlation_diagnostic(spec: DisorderSpec, max_lag: int, samples: int, dim: int = 1) -> CorrelationEstimate:
    """Empirical correlation between the origin and the site ``lag`` steps along axis 0.

    Uses the first ``samples`` realizations of ``spec``.  The 1-sigma errors are
    the large-sample ``(1 - rho^2) / sqrt(n)``.
    """
    if samples < 100:
        raise DisorderError("correlation diagnostic needs at least 100 samples")
    if samples > spec.samples:
        raise DisorderError("requested more samples than the spec provides")
    lattice = LatticeSpec(dim, 2 * max_lag + 1)
    sites = [lattice.index_of((lag,) + (0,) * (dim - 1)) for lag in range(max_lag + 1)]
    data = np.empty((samples, max_lag + 1))
    for i in range(samples):
        data[i] = sample_field(spec, i, lattice).values[sites]
    centered = data - data.mean(axis=0)
    std = np.sqrt(np.mean(centered**2, axis=0))
    rho = np.mean(centered[:, :1] * centered, axis=0) / (std[0] * std)
    rho[0] = 1.0
    stderr = (1 - rho**2) / np.sqrt(samples)
    return CorrelationEstimate(np.arange(max_lag + 1), rho, stderr, samples)
