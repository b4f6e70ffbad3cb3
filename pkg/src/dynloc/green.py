"""Resolvents, the geometric resolvent identity, regularity of boxes and energy integrals."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .dynamics import cesaro, second_moment_trace, uniform_time_grid
from .lattice import Box, GeometryError, boundary_pairs, position_second_moment_weights
from .operator import LatticeOperator, SpectralDecomposition, diagonalize, restrict

DEFAULT_EPS_MIN = 1e-6


# -- resolvent columns --------------------------------------------------------


def _shifted(op: LatticeOperator, z: complex):
    return (op.matrix.astype(complex) - z * sp.identity(op.size, dtype=complex, format="csc")).tocsc()


def resolve(op: LatticeOperator, q, E: float, eps: float, check: bool = True) -> np.ndarray:
    """Column ``(H - E - i eps)^{-1} delta_q`` by sparse LU."""
    if eps == 0:
        raise ValueError("eps must be nonzero")
    z = complex(E, eps)
    rhs = np.zeros(op.size, dtype=complex)
    rhs[op.row_of(q)] = 1.0
    a = _shifted(op, z)
    x = splu(a).solve(rhs)
    if check:
        res = np.linalg.norm(a @ x - rhs)
        if res > 1e-10:
            raise ArithmeticError(f"resolvent residual {res:.2e} above 1e-10")
    return x


def green_element(op: LatticeOperator, target, source, E: float, eps: float) -> complex:
    return complex(resolve(op, source, E, eps)[op.row_of(target)])


# -- geometric resolvent identity ---------------------------------------------


def gre_identity_residual(
    op: LatticeOperator,
    box: Box,
    q,
    E: float,
    eps: float,
    pairs: Optional[list] = None,
) -> float:
    """``|G(q',q) - sum_{(u,u')} G_box(q',u) (-H_{uu'}) G(u',q)|`` with ``q'`` the box center.

    The hopping amplitude ``H_{uu'}`` is read from the matrix; for the +1
    hopping used here it contributes a factor -1 to every boundary term.
    ``pairs`` overrides the boundary set (used for negative controls).
    """
    qp = box.center
    L = box.radius
    if max(abs(a - b) for a, b in zip(q, qp)) <= 2 * L:
        raise GeometryError(f"need ||q - q'||_inf > 2L = {2 * L}")
    if pairs is None:
        pairs = boundary_pairs(box, op.lattice)
    full = resolve(op, q, E, eps)
    inner = restrict(op, box)
    g_box = resolve(inner, qp, E, eps)
    total = 0.0j
    for u, up in pairs:
        hop = op.matrix[op.row_of(u), op.row_of(up)]
        total += g_box[inner.row_of(u)] * (-hop) * full[op.row_of(up)]
    return float(abs(full[op.row_of(qp)] - total))


# -- regularity ---------------------------------------------------------------


def eps_probe_grid(eps_min: float = DEFAULT_EPS_MIN, per_decade: int = 4) -> np.ndarray:
    n = max(int(math.ceil(per_decade * math.log10(1.0 / eps_min))), 1)
    return np.geomspace(eps_min, 1.0, n + 1)


class BoxResolvent:
    """Spectral data of a Dirichlet box needed for ``|| 1_q D_{L,q}(z) ||``.

    On the lattice, ``1_q D(z)`` maps ``phi`` to
    ``sum_{u'} phi(u') sum_{u ~ u'} G_box(q, u; z) (-H_{uu'})``, so its norm is
    the Euclidean norm over exterior boundary sites ``u'`` of the aggregated
    box Green's function.
    """

    def __init__(self, op: LatticeOperator, box: Box, source=None):
        self.box = box
        self.source = tuple(box.center if source is None else source)
        self.inner = restrict(op, box)
        self.decomp = diagonalize(self.inner)
        pairs = boundary_pairs(box, op.lattice)
        exterior = sorted({up for _, up in pairs})
        ext_row = {s: i for i, s in enumerate(exterior)}
        coupling = np.zeros((len(exterior), self.inner.size))
        for u, up in pairs:
            coupling[ext_row[up], self.inner.row_of(u)] += -op.matrix[op.row_of(u), op.row_of(up)]
        vq = self.decomp.vectors[self.inner.row_of(self.source)]
        # amplitudes[u', k] = v_k(q) * sum_u B[u', u] v_k(u)
        self.amplitudes = (coupling @ self.decomp.vectors) * vq[None, :]
        self.values = self.decomp.values
        self.n_exterior = len(exterior)

    def distance_to_spectrum(self, E) -> np.ndarray:
        E = np.atleast_1d(np.asarray(E, dtype=float))
        pos = np.searchsorted(self.values, E)
        lo = np.abs(E - self.values[np.clip(pos - 1, 0, self.values.size - 1)])
        hi = np.abs(E - self.values[np.clip(pos, 0, self.values.size - 1)])
        return np.minimum(lo, hi)

    def norms(self, E, eps) -> np.ndarray:
        """``|| 1_q D(E + i eps) ||`` on the product grid, shape ``(len(E), len(eps))``."""
        E = np.atleast_1d(np.asarray(E, dtype=float))
        eps = np.atleast_1d(np.asarray(eps, dtype=float))
        out = np.empty((E.size, eps.size))
        chunk = max(1, 200_000 // max(1, eps.size * self.values.size))
        for s in range(0, E.size, chunk):
            z = E[s : s + chunk, None] + 1j * eps[None, :]
            inv = 1.0 / (self.values[None, None, :] - z[:, :, None])
            g = np.einsum("uk,ijk->iju", self.amplitudes, inv)
            out[s : s + chunk] = np.sqrt(np.sum(np.abs(g) ** 2, axis=2))
        return out


@dataclass
class RegularityVerdict:
    E: float
    L: float
    q: tuple
    measured_norm: float
    threshold: float
    guard_distance: float
    eps_min: float
    passed: bool
    eps_at_max: float = float("nan")


def regularity_from_box(
    box_res: BoxResolvent, E: float, threshold: float, eps_grid: np.ndarray
) -> RegularityVerdict:
    eps_grid = np.asarray(eps_grid, dtype=float)
    eps_min = float(eps_grid.min())
    norms = box_res.norms([E], eps_grid)[0]
    k = int(np.argmax(norms))
    dist = float(box_res.distance_to_spectrum(E)[0])
    guard_ok = dist >= eps_min
    passed = bool(guard_ok and norms[k] <= threshold)
    return RegularityVerdict(
        E, box_res.box.radius, box_res.source, float(norms[k]), float(threshold), dist, eps_min, passed,
        float(eps_grid[k]),
    )


def regularity_test(
    op: LatticeOperator,
    box: Box,
    E: float,
    threshold: float,
    eps_grid: Optional[Sequence[float]] = None,
    eps_min: float = DEFAULT_EPS_MIN,
) -> RegularityVerdict:
    """Is ``H`` (rho, E, L, q)-regular for the box ``Lambda_L(q)``, with ``threshold = rho(L)^{1/2}``?

    The sup over ``eps != 0`` is probed on a geometric grid in ``[eps_min, 1]``
    (conjugation symmetry covers negative eps).  If ``E`` lies within
    ``eps_min`` of a box eigenvalue the verdict is "not regular".
    """
    if eps_grid is None:
        eps_grid = eps_probe_grid(eps_min)
    return regularity_from_box(BoxResolvent(op, box), E, threshold, np.asarray(eps_grid))


@dataclass
class EnergyWindowVerdict:
    L: float
    q: tuple
    energies: np.ndarray
    passed_each: np.ndarray
    norms: np.ndarray
    threshold: float
    spacing: float
    eps_min: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passed_each))

    @property
    def worst_energy(self) -> float:
        ratio = np.where(self.passed_each, self.norms / self.threshold, np.inf)
        return float(self.energies[int(np.argmax(ratio))])


def energy_window_from_box(
    box_res: BoxResolvent, energies: np.ndarray, threshold: float, eps_grid: np.ndarray
) -> EnergyWindowVerdict:
    energies = np.asarray(energies, dtype=float)
    eps_grid = np.asarray(eps_grid, dtype=float)
    eps_min = float(eps_grid.min())
    spacing = float(np.max(np.diff(energies))) if energies.size > 1 else 0.0
    if spacing > eps_min / 4 * (1 + 1e-9):
        raise ValueError(f"energy grid spacing {spacing:g} exceeds eps_min/4 = {eps_min / 4:g}")
    norms = box_res.norms(energies, eps_grid).max(axis=1)
    guard = box_res.distance_to_spectrum(energies) >= eps_min
    passed = guard & (norms <= threshold)
    return EnergyWindowVerdict(
        box_res.box.radius, box_res.source, energies, passed, norms, float(threshold), spacing, eps_min
    )


def energy_grid_for(interval: tuple[float, float], eps_min: float) -> np.ndarray:
    a, b = interval
    n = max(int(math.ceil((b - a) / (eps_min / 4))), 1)
    return np.linspace(a, b, n + 1)


def variable_energy_regularity(
    op: LatticeOperator,
    box: Box,
    energies: Sequence[float],
    threshold: float,
    eps_grid: Optional[Sequence[float]] = None,
    eps_min: float = DEFAULT_EPS_MIN,
) -> EnergyWindowVerdict:
    """Regularity at every energy of a grid over ``I`` (spacing at most ``eps_min / 4``)."""
    if eps_grid is None:
        eps_grid = eps_probe_grid(eps_min)
    return energy_window_from_box(BoxResolvent(op, box), np.asarray(energies), threshold, np.asarray(eps_grid))


@dataclass
class DecouplingCheck:
    lhs: float
    via_target: float
    via_source: float

    @property
    def holds(self) -> bool:
        return self.lhs <= min(self.via_target, self.via_source) * (1 + 1e-9) + 1e-300


def decoupling_check(op: LatticeOperator, q, qp, L: float, E: float, eps: float) -> DecouplingCheck:
    """``|G(q',q)|^2 <= ||1_{q'} D_{L,q'}||^2 ||R 1_q||^2`` and the same with ``q``, ``q'`` swapped.

    Either bound times ``rho(L)`` gives the two-sided estimate used when one of
    the two boxes is regular.
    """
    col_q = resolve(op, q, E, eps)
    col_qp = resolve(op, qp, E, eps)
    g = col_q[op.row_of(qp)]
    n_qp = BoxResolvent(op, Box(qp, L)).norms([E], [eps])[0, 0]
    n_q = BoxResolvent(op, Box(q, L)).norms([E], [eps])[0, 0]
    return DecouplingCheck(
        float(abs(g) ** 2),
        float(n_qp**2 * np.linalg.norm(col_q) ** 2),
        float(n_q**2 * np.linalg.norm(col_qp) ** 2),
    )


# -- energy integrals ---------------------------------------------------------


def adapted_energy_grid(
    decomp: SpectralDecomposition, eps: float, reach: float, core: float = 50.0, ratio: float = 1.05
) -> np.ndarray:
    """Trapezoid nodes for Lorentzians of width ``eps`` centered in the spectrum.

    Spacing ``eps/4`` on the spectral hull widened by ``core * eps``, then
    geometrically growing spacing out to ``reach`` beyond the hull.
    """
    lo, hi = float(decomp.values.min()), float(decomp.values.max())
    h = eps / 4
    pad = core * eps
    n = int(math.ceil((hi - lo + 2 * pad) / h))
    n += n % 2
    core_nodes = np.linspace(lo - pad, hi + pad, n + 1)
    tail = []
    step, offset = h, pad
    while offset < reach:
        step *= ratio
        offset = min(offset + step, reach)
        tail.append(offset)
    if len(tail) % 2:
        tail.append(tail[-1] + step)
    tail = np.array(tail)
    return np.concatenate([lo - tail[::-1], core_nodes, hi + tail])


def _trapezoid_with_error(y: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    full = float(np.trapezoid(y, x))
    if x.size >= 5:
        sl = slice(None, None, 2) if x.size % 2 else slice(None, -1, 2)
        coarse = float(np.trapezoid(y[sl], x[sl]))
        if x.size % 2 == 0:
            coarse += float(np.trapezoid(y[-2:], x[-2:]))
        return full, abs(full - coarse) / 3.0
    return full, 0.0


def weighted_resolvent_integrand(
    decomp: SpectralDecomposition, psi: np.ndarray, eta: float, energies: np.ndarray, weights=None
) -> np.ndarray:
    """``|| w^{1/2} (H - E - i eta)^{-1} psi ||^2`` at each energy (``w = 1`` if omitted)."""
    c = decomp.coefficients(np.asarray(psi, dtype=complex))
    keep = np.flatnonzero(c != 0)
    theta, c = decomp.values[keep], c[keep]
    energies = np.asarray(energies, dtype=float)
    if weights is None:
        gram = None
    else:
        vecs = decomp.vectors[:, keep]
        gram = vecs.T @ (np.asarray(weights)[:, None] * vecs)
    out = np.empty(energies.size)
    chunk = max(1, 4_000_000 // max(1, theta.size * (theta.size if gram is not None else 1)))
    for s in range(0, energies.size, chunk):
        a = c[:, None] / (theta[:, None] - energies[None, s : s + chunk] - 1j * eta)
        if gram is None:
            out[s : s + chunk] = np.sum(np.abs(a) ** 2, axis=0)
        else:
            out[s : s + chunk] = np.real(np.sum(np.conj(a) * (gram @ a), axis=0))
    return out


def exact_weighted_resolvent_integral(decomp: SpectralDecomposition, psi: np.ndarray, eta: float, weights=None) -> float:
    """Closed form of the integral over all of R (residue calculus), used as an oracle."""
    c = decomp.coefficients(np.asarray(psi, dtype=complex))
    if weights is None:
        return float(np.sum(np.abs(c) ** 2) * math.pi / abs(eta))
    gram = decomp.vectors.T @ (np.asarray(weights)[:, None] * decomp.vectors)
    theta = decomp.values
    kern = 2 * math.pi / (2 * abs(eta) - 1j * np.sign(eta) * (theta[:, None] - theta[None, :]))
    return float(np.real(np.sum(np.conj(c)[:, None] * c[None, :] * gram * kern)))


@dataclass
class ResiduumResult:
    value: float
    bound: float
    error: float
    passed: bool


def residuum_check(
    decomp: SpectralDecomposition,
    psi: np.ndarray,
    interval: tuple[float, float],
    eps: float,
    spacing: Optional[float] = None,
    rtol: float = 1e-3,
) -> ResiduumResult:
    """``int_I ||(H - E - i eps)^{-1} psi||^2 dE <= pi / eps`` for normalized ``psi``."""
    norm = np.linalg.norm(psi)
    if not abs(norm - 1) < 1e-12:
        raise ValueError("psi must be normalized")
    h = eps / 8 if spacing is None else spacing
    if h > eps / 4:
        raise ValueError("quadrature spacing must not exceed eps/4")
    a, b = interval
    bound = math.pi / abs(eps)
    if b <= a:
        return ResiduumResult(0.0, bound, 0.0, True)
    n = max(int(math.ceil((b - a) / h)), 2)
    grid = np.linspace(a, b, n + 1)
    y = weighted_resolvent_integrand(decomp, psi, eps, grid)
    value, err = _trapezoid_with_error(y, grid)
    return ResiduumResult(value, bound, err, value <= bound * (1 + rtol))


@dataclass
class AbelResult:
    eps: float
    integral: float  # int ||X| R(E + i eps) psi||^2 dE
    error: float

    @property
    def diffusion_value(self) -> float:
        """``eps^2`` times the integral: the finite-eps diffusion constant."""
        return self.eps**2 * self.integral

    @property
    def msa_value(self) -> float:
        """``eps`` times the integral, the quantity bounded by the multi-scale lemma."""
        return self.eps * self.integral


def abel_functional(
    decomp: SpectralDecomposition,
    psi: np.ndarray,
    eps: float,
    energies: Optional[np.ndarray] = None,
    interval: Optional[tuple[float, float]] = None,
) -> AbelResult:
    """``int ||X| (H - E - i eps)^{-1} psi||^2 dE`` over R (or over ``interval``)."""
    weights = position_second_moment_weights(decomp.operator.lattice)[decomp.operator.sites]
    if energies is None:
        if interval is None:
            energies = adapted_energy_grid(decomp, eps, reach=10.0 / eps)
        else:
            a, b = interval
            n = max(int(math.ceil((b - a) / (eps / 8))), 2)
            n += n % 2
            energies = np.linspace(a, b, n + 1)
    y = weighted_resolvent_integrand(decomp, psi, eps, energies, weights)
    value, err = _trapezoid_with_error(y, energies)
    return AbelResult(eps, value, err)


@dataclass
class PeterResult:
    T: float
    time_average: float
    time_error: float
    energy_side: float
    energy_error: float
    rtol: float

    @property
    def holds(self) -> bool:
        return self.time_average <= self.energy_side * (1 + self.rtol)


def peter_check(
    decomp: SpectralDecomposition, phi: np.ndarray, T: float, dt: float = 0.05, rtol: float = 1e-3, leak_margin: int = 5
) -> PeterResult:
    """Time average of ``m`` up to ``T`` against ``(e eps / 2 pi) int_R ||X| R_eps(E) phi||^2 dE``.

    ``eps = 1/T`` and ``R_eps(E) = (H - E + i eps/2)^{-1}``.
    """
    eps = 1.0 / T
    trace = second_moment_trace(decomp, phi, uniform_time_grid(T, dt), leak_margin=leak_margin)
    trace = cesaro(trace, [trace.t[-1]])
    T_used = float(trace.T[0])
    eps = 1.0 / T_used
    weights = position_second_moment_weights(decomp.operator.lattice)[decomp.operator.sites]
    grid = adapted_energy_grid(decomp, eps / 2, reach=10.0 / eps)
    y = weighted_resolvent_integrand(decomp, phi, -eps / 2, grid, weights)
    integral, err = _trapezoid_with_error(y, grid)
    pref = math.e * eps / (2 * math.pi)
    return PeterResult(T_used, float(trace.C[0]), float(trace.quad_error[0]), pref * integral, pref * err, rtol)


@dataclass
class StructureCheck:
    T: np.ndarray
    cesaro: np.ndarray
    energy_term: np.ndarray  # eps int_I ||X| R(E + i eps) phi||^2 dE at eps = 1/T
    c1: float
    c3: float
    first_max: float
    second_max: float
    factor: float

    @property
    def bounded(self) -> bool:
        return self.second_max <= self.factor * self.first_max


def cm0_structure_check(
    decomp: SpectralDecomposition,
    phi: np.ndarray,
    interval: tuple[float, float],
    T_grid: Sequence[float],
    dt: float = 0.05,
    factor: float = 2.0,
    leak_margin: int = 5,
) -> StructureCheck:
    """``C(T) - c3 eps int_I`` stays bounded once ``c1, c3`` are fitted on the first half of the T grid.

    ``c1`` absorbs the realization-dependent constant; ``c3 >= 0`` is fitted by
    least squares on the first half, and the remainder's maximum over the
    second half is compared with ``factor`` times its maximum over the first.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid.size < 4:
        raise ValueError("need at least four T values")
    trace = second_moment_trace(decomp, phi, uniform_time_grid(T_grid.max(), dt), leak_margin=leak_margin)
    trace = cesaro(trace, T_grid)
    T, C = trace.T, trace.C
    term = np.array([abel_functional(decomp, phi, 1.0 / t, interval=interval).msa_value for t in T])
    half = T.size // 2
    A = np.vstack([np.ones(half), term[:half]]).T
    (c1, c3), *_ = np.linalg.lstsq(A, C[:half], rcond=None)
    if c3 < 0:
        c3, c1 = 0.0, float(C[:half].mean())
    rest = np.abs(C - c3 * term)
    return StructureCheck(T, C, term, float(c1), float(c3), float(rest[:half].max()), float(rest[half:].max()),
                          factor)
