"""Finite-window estimators: diffusion exponents, the Abel-mean trend,
the dynamical-localization statistic and the Wegner pair statistic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .disorder import DisorderSpec, sample_field
from .dynamics import AveragedTrace
from .green import abel_functional
from .lattice import LatticeSpec
from .operator import SpectralDecomposition, assemble
from .parallel import pool_map

BOOTSTRAP_RESAMPLES = 200
BOOTSTRAP_SEED = 0x5EED


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Slope, intercept and R^2 of the least-squares line."""
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def _bootstrap_rows(samples: np.ndarray, stat, resamples: int, seed: int) -> np.ndarray:
    R = samples.shape[0]
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(resamples):
        rows = rng.integers(0, R, size=R)
        out.append(stat(samples[rows]))
    return np.array(out)


# -- exponents ----------------------------------------------------------------


@dataclass
class ExponentFit:
    windows: list
    slopes: np.ndarray
    r2: np.ndarray
    bootstrap_se: np.ndarray
    points: list

    @property
    def sigma_minus(self) -> float:
        return float(self.slopes.min())

    @property
    def sigma_plus(self) -> float:
        return float(self.slopes.max())

    @property
    def sigma_minus_se(self) -> float:
        return float(self.bootstrap_se[int(np.argmin(self.slopes))])

    @property
    def sigma_plus_se(self) -> float:
        return float(self.bootstrap_se[int(np.argmax(self.slopes))])

    def as_dict(self) -> dict:
        return {
            "windows": [list(w) for w in self.windows],
            "slopes": self.slopes.tolist(),
            "sigma_minus": self.sigma_minus,
            "sigma_plus": self.sigma_plus,
            "bootstrap_se": self.bootstrap_se.tolist(),
            "r2": self.r2.tolist(),
        }


def _window_masks(T: np.ndarray, windows) -> list[np.ndarray]:
    masks = []
    for lo, hi in windows:
        if not hi > lo > 0:
            raise ValueError(f"bad window ({lo}, {hi})")
        if math.log10(hi / lo) < 0.5 - 1e-12:
            raise ValueError(f"window ({lo:g}, {hi:g}) spans less than half a decade")
        mask = (T >= lo * (1 - 1e-12)) & (T <= hi * (1 + 1e-12))
        if mask.sum() < 8:
            raise ValueError(f"window ({lo:g}, {hi:g}) holds {mask.sum()} Cesaro points, need >= 8")
        masks.append(mask)
    return masks


def loglog_slopes(T: np.ndarray, C: np.ndarray, windows) -> tuple[np.ndarray, np.ndarray]:
    T, C = np.asarray(T, float), np.asarray(C, float)
    if np.any(C <= 0):
        raise ValueError("Cesaro values must be positive for a log-log fit")
    slopes, r2 = [], []
    for mask in _window_masks(T, windows):
        s, _, r = _ols(np.log(T[mask]), np.log(C[mask]))
        slopes.append(s)
        r2.append(r)
    return np.array(slopes), np.array(r2)


def fit_exponents(
    avg: AveragedTrace, windows, resamples: int = BOOTSTRAP_RESAMPLES, seed: int = BOOTSTRAP_SEED
) -> ExponentFit:
    """Per-window slopes of ``log E[C(T)]`` against ``log T``.

    The expectation sits inside the logarithm.  Standard errors come from
    resampling realizations.
    """
    windows = [tuple(map(float, w)) for w in windows]
    slopes, r2 = loglog_slopes(avg.T, avg.mean_C, windows)
    if avg.C_samples.shape[0] > 1:
        boot = _bootstrap_rows(
            avg.C_samples, lambda s: loglog_slopes(avg.T, s.mean(axis=0), windows)[0], resamples, seed
        )
        se = boot.std(axis=0, ddof=1)
    else:
        se = np.zeros_like(slopes)
    points = [int(m.sum()) for m in _window_masks(avg.T, windows)]
    return ExponentFit(windows, slopes, r2, se, points)


def decade_windows(t_min: float, t_max: float, width: float = 1.0) -> list[tuple[float, float]]:
    """Consecutive windows of ``width`` decades, the last one ending at ``t_max``."""
    out = []
    hi = t_max
    while hi / 10**width >= t_min * (1 - 1e-12):
        out.append((hi / 10**width, hi))
        hi /= 10 ** (width / 2)
    return out[::-1]


# -- dynamical localization statistic -----------------------------------------


@dataclass
class DynlocStatistic:
    statistic: float
    stderr: float
    stability_ratio: float
    threshold: float

    @property
    def localized(self) -> bool:
        return self.stability_ratio <= self.threshold


def dynloc_statistic(avg: AveragedTrace, threshold: float = 1.05, min_T: float = 1e3) -> DynlocStatistic:
    """Mean over realizations of ``sup_{T>1} C(T)`` and the last-decade stability ratio."""
    T = avg.T
    if T.max() < min_T * (1 - 1e-9):
        raise ValueError(f"T grid ends at {T.max():g}; the statistic needs T >= {min_T:g}")
    last = T >= T.max() / 10 * (1 - 1e-12)
    C = avg.mean_C[last]
    ratio = float(C.max() / C.min()) if C.min() > 0 else math.inf
    return DynlocStatistic(avg.mean_sup_C, avg.se_sup_C, ratio, threshold)


# -- Abel trend ---------------------------------------------------------------


@dataclass
class AbelTrend:
    eps: np.ndarray  # decreasing
    values: np.ndarray  # eps^2 int ||X| R psi||^2, mean over realizations
    stderr: np.ndarray
    quad_error: np.ndarray
    slope: float  # d log(value) / d log(eps)
    slope_se: float
    samples: np.ndarray = field(repr=False)

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) < 0))

    @property
    def vanishing(self) -> bool:
        """Values fall as eps falls, and the log-log slope is positive beyond twice its bootstrap error."""
        return self.strictly_decreasing and self.slope > 2 * self.slope_se and self.slope > 0


def abel_trend_from_values(
    eps: Sequence[float], samples: np.ndarray, quad_error: Optional[np.ndarray] = None,
    resamples: int = BOOTSTRAP_RESAMPLES, seed: int = BOOTSTRAP_SEED,
) -> AbelTrend:
    eps = np.asarray(eps, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if eps.size < 3:
        raise ValueError("need at least three eps values")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps list must be strictly decreasing")
    ratios = eps[1:] / eps[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ValueError("eps list must be geometric")
    mean = samples.mean(axis=0)
    R = samples.shape[0]
    se = samples.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(mean)
    logx = np.log(eps)
    slope = _ols(logx, np.log(mean))[0]
    if R > 1:
        boot = _bootstrap_rows(samples, lambda s: _ols(logx, np.log(s.mean(axis=0)))[0], resamples, seed)
        slope_se = float(boot.std(ddof=1))
    else:
        slope_se = 0.0
    qe = np.zeros_like(mean) if quad_error is None else np.atleast_2d(quad_error).mean(axis=0)
    return AbelTrend(eps, mean, se, qe, slope, slope_se, samples)


def abel_values(decomp: SpectralDecomposition, psi: np.ndarray, eps_list: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    res = [abel_functional(decomp, psi, e) for e in eps_list]
    return np.array([r.diffusion_value for r in res]), np.array([r.eps**2 * r.error for r in res])


def abel_trend(ensemble, eps_list: Sequence[float]) -> AbelTrend:
    """Disorder-averaged ``eps^2 int ||X| R(E + i eps) psi||^2 dE`` over ``(decomp, psi)`` pairs."""
    vals, errs = zip(*(abel_values(dec, psi, eps_list) for dec, psi in ensemble))
    return abel_trend_from_values(eps_list, np.array(vals), np.array(errs))


# -- Wegner pair statistic ----------------------------------------------------


def interval_block(start: int, length: int) -> list[tuple[int]]:
    """Consecutive sites ``start, ..., start + length - 1`` of a chain."""
    return [(start + i,) for i in range(length)]


def block_separation(a: Sequence[tuple], b: Sequence[tuple]) -> int:
    A, B = np.array(a), np.array(b)
    return int(np.min(np.max(np.abs(A[:, None, :] - B[None, :, :]), axis=2)))


@dataclass
class WegnerResult:
    E: float
    etas: np.ndarray
    sizes: tuple
    separation: int
    estimate: np.ndarray
    stderr: np.ndarray
    mean_n1: np.ndarray
    mean_n2: np.ndarray
    slope: float
    slope_se: float
    samples: int

    @property
    def bound_ratio(self) -> np.ndarray:
        return self.estimate / (self.etas**2 * self.sizes[0] * self.sizes[1])

    @property
    def C_W(self) -> float:
        return float(self.bound_ratio.max())

    @property
    def ratio_spread(self) -> float:
        r = self.bound_ratio
        return float(r.max() / r.min()) if r.min() > 0 else math.inf


def _wegner_job(job):
    spec, index, lattice, idx1, idx2, E, etas = job
    op = assemble(lattice, sample_field(spec, index, lattice))
    out = []
    for idx in (idx1, idx2):
        vals = scipy.linalg.eigvalsh(op.matrix[idx][:, idx].toarray())
        out.append([int(np.count_nonzero(np.abs(vals - E) <= eta)) for eta in etas])
    return out


def wegner_pair(
    disorder: DisorderSpec,
    lattice: LatticeSpec,
    E: float,
    etas: Sequence[float],
    blocks: tuple,
    realizations: int,
    min_separation: int = 1,
    workers: int = 1,
    resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = BOOTSTRAP_SEED,
) -> WegnerResult:
    """Mean of ``Tr E_1[E-eta, E+eta] Tr E_2[E-eta, E+eta]`` over realizations.

    The eigenvalue counts are exact (dense diagonalization of each block).
    """
    etas = np.asarray(etas, dtype=float)
    if np.any(np.diff(etas) >= 0):
        raise ValueError("eta list must be strictly decreasing")
    b1, b2 = ([tuple(s) for s in b] for b in blocks)
    if set(b1) & set(b2):
        raise ValueError("Wegner blocks overlap")
    sep = block_separation(b1, b2)
    if sep < min_separation:
        raise ValueError(f"blocks separated by {sep} < required {min_separation}")
    idx1 = np.array([lattice.index_of(s) for s in b1])
    idx2 = np.array([lattice.index_of(s) for s in b2])
    jobs = [(disorder, i, lattice, idx1, idx2, E, etas) for i in range(realizations)]
    counts = np.array(pool_map(_wegner_job, jobs, workers), dtype=float)  # (R, 2, n_eta)
    prod = counts[:, 0, :] * counts[:, 1, :]
    est = prod.mean(axis=0)
    R = prod.shape[0]
    se = prod.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(est)
    logx = np.log(etas)

    def fit(p):
        m = p.mean(axis=0)
        if np.any(m <= 0):
            return np.nan
        return _ols(logx, np.log(m))[0]

    slope = fit(prod)
    boot = _bootstrap_rows(prod, fit, resamples, seed) if R > 1 else np.array([slope])
    boot = boot[np.isfinite(boot)]
    slope_se = float(boot.std(ddof=1)) if boot.size > 1 else math.nan
    return WegnerResult(
        float(E), etas, (len(b1), len(b2)), sep, est, se,
        counts[:, 0, :].mean(axis=0), counts[:, 1, :].mean(axis=0), float(slope), slope_se, R,
    )
