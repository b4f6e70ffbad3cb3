"""Lattice Hamiltonians ``H = -Delta_d + V`` and their spectral calculus.

``-Delta_d`` is pure nearest-neighbour hopping with amplitude +1,
``(-Delta_d psi)(n) = sum_{|i-n|=1} psi(i)``; there is no ``2d`` on the
diagonal, only the couplings ``lambda_n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import jv

from .disorder import DisorderField
from .lattice import Box, GeometryError, LatticeSpec

DEFAULT_MATRIX_CAP = 4096


class MatrixTooLarge(RuntimeError):
    pass


def hopping_matrix(lattice: LatticeSpec) -> sp.csr_matrix:
    """Adjacency matrix of the window (open edges), entries exactly 1."""
    n = lattice.n_sites
    idx = np.arange(n).reshape(lattice.shape)
    rows, cols = [], []
    for axis in range(lattice.dim):
        a = np.take(idx, np.arange(lattice.extent - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, lattice.extent), axis=axis).ravel()
        rows += [a, b]
        cols += [b, a]
    rows = np.concatenate(rows) if rows else np.empty(0, int)
    cols = np.concatenate(cols) if cols else np.empty(0, int)
    mat = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    mat.sort_indices()
    return mat


@dataclass(frozen=True)
class LatticeOperator:
    """Sparse symmetric matrix on the sites of a lattice or of a box inside it.

    ``sites`` maps row ``k`` to its lattice index; for the full window it is the
    identity, for a Dirichlet restriction it lists the box sites in order.
    """

    lattice: LatticeSpec
    matrix: sp.csr_matrix
    sites: np.ndarray
    field: Optional[DisorderField] = None
    box: Optional[Box] = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    @property
    def coords(self) -> np.ndarray:
        return self.lattice.coords[self.sites]

    def row_of(self, site) -> int:
        """Matrix row of a lattice site (coordinate tuple)."""
        index = self.lattice.index_of(site)
        if self.box is None:
            return index
        pos = np.searchsorted(self.sites, index)
        if pos >= self.sites.size or self.sites[pos] != index:
            raise GeometryError(f"site {tuple(site)} not in {self.box}")
        return int(pos)

    def gershgorin_bound(self) -> float:
        m = abs(self.matrix)
        return float(np.max(np.asarray(m.sum(axis=1)).ravel()))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def shifted(self, shift: float) -> "LatticeOperator":
        mat = (self.matrix + shift * sp.identity(self.size, format="csr")).tocsr()
        return LatticeOperator(self.lattice, mat, self.sites, self.field, self.box)


def assemble(lattice: LatticeSpec, field: Optional[DisorderField] = None, potential=None) -> LatticeOperator:
    """``H = -Delta_d + V`` on the whole window.

    ``potential`` (array over sites) may replace ``field`` for deterministic tests.
    """
    if field is not None:
        potential = field.values
    if potential is None:
        potential = np.zeros(lattice.n_sites)
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (lattice.n_sites,):
        raise GeometryError(
            f"potential has {potential.size} values for a lattice of {lattice.n_sites} sites"
        )
    mat = (hopping_matrix(lattice) + sp.diags(potential)).tocsr()
    mat.sort_indices()
    return LatticeOperator(lattice, mat, np.arange(lattice.n_sites), field, None)


def restrict(op: LatticeOperator, box: Box) -> LatticeOperator:
    """Dirichlet restriction: the principal submatrix on the box sites."""
    if op.box is not None:
        raise GeometryError("restrict a full-window operator, not a restriction")
    idx = box.indices(op.lattice)
    if idx.size == 0:
        raise GeometryError("empty box")
    sub = op.matrix[idx][:, idx].tocsr()
    sub.sort_indices()
    return LatticeOperator(op.lattice, sub, idx, op.field, box)


@dataclass(frozen=True)
class SpectralDecomposition:
    values: np.ndarray
    vectors: np.ndarray
    residual: float
    orthogonality: float
    operator: LatticeOperator = field(repr=False)

    def coefficients(self, psi: np.ndarray) -> np.ndarray:
        return self.vectors.T @ psi

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self.vectors @ coeffs

    def apply_function(self, f, psi: np.ndarray) -> np.ndarray:
        return self.synthesize(f(self.values) * self.coefficients(psi))


def diagonalize(op: LatticeOperator, cap: int = DEFAULT_MATRIX_CAP) -> SpectralDecomposition:
    if op.size > cap:
        raise MatrixTooLarge(
            f"operator of dimension {op.size} exceeds the diagonalization cap {cap}; "
            "use chebyshev_evolve for time evolution at this size"
        )
    h = op.dense()
    values, vectors = scipy.linalg.eigh(h, driver="evd")
    # fixed sign convention: largest-magnitude component of each vector positive
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    vectors = vectors * np.where(signs == 0, 1.0, signs)
    residual = float(np.max(np.abs(h @ vectors - vectors * values))) if op.size else 0.0
    gram = vectors.T @ vectors
    orth = float(np.max(np.abs(gram - np.eye(op.size)))) if op.size else 0.0
    return SpectralDecomposition(values, vectors, residual, orth, op)


def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    out[u >= 1] = 1.0
    mid = (u > 0) & (u < 1)
    a = np.exp(-1.0 / u[mid])
    b = np.exp(-1.0 / (1.0 - u[mid]))
    out[mid] = a / (a + b)
    return out


@dataclass(frozen=True)
class FilterSpec:
    """Smooth bump equal to 1 on ``[a + delta, b - delta]`` and 0 outside ``(a, b)``."""

    a: float
    b: float
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("filter margin delta must be positive")
        if not self.b - self.a >= 2 * self.delta:
            raise ValueError("filter interval shorter than twice its margin")

    @property
    def plateau(self) -> tuple[float, float]:
        return (self.a + self.delta, self.b - self.delta)

    def __call__(self, energy):
        e = np.asarray(energy, dtype=float)
        return smooth_step((e - self.a) / self.delta) * smooth_step((self.b - e) / self.delta)


def apply_filter(spec: FilterSpec, decomp: SpectralDecomposition, psi: np.ndarray) -> np.ndarray:
    """``f(H) psi`` through the exact eigen-expansion."""
    return decomp.apply_function(spec, psi)


def commutator(op: LatticeOperator, axis: int) -> sp.csr_matrix:
    """``[H, X_j]``: entries ``H_xy (y_j - x_j)``."""
    coo = op.matrix.tocoo()
    x = op.coords[:, axis]
    data = coo.data * (x[coo.col] - x[coo.row])
    return sp.csr_matrix((data, (coo.row, coo.col)), shape=op.matrix.shape)


def commutator_norm(op: LatticeOperator, axis: int) -> float:
    """Operator norm of ``[H, X_j]`` on the window (an antisymmetric real matrix)."""
    c = commutator(op, axis)
    if op.size <= DEFAULT_MATRIX_CAP:
        herm = 1j * c.toarray()
        return float(np.max(np.abs(scipy.linalg.eigvalsh(herm))))
    from scipy.sparse.linalg import svds

    return float(svds(c.astype(float), k=1, return_singular_vectors=False)[0])


def free_commutator_symbol_norm(dim: int, axis: int = 0, points: int = 4097) -> float:
    """Norm of ``[-Delta_d, X_j]`` on all of Z^d: the sup of its Fourier symbol ``2|sin k_j|``.

    The potential commutes with ``X_j``, so this holds for every realization.
    """
    if not 0 <= axis < dim:
        raise ValueError("axis out of range")
    k = np.linspace(-np.pi, np.pi, points)
    return float(np.max(np.abs(2.0 * np.sin(k))))


def chebyshev_evolve(op: LatticeOperator, psi: np.ndarray, t: float, tol: float = 1e-12) -> np.ndarray:
    """``exp(-i t H) psi`` by Chebyshev expansion; no diagonalization needed."""
    if t == 0:
        return np.array(psi, dtype=complex)
    bound = op.gershgorin_bound()
    center = 0.5 * (op.matrix.diagonal().max() + op.matrix.diagonal().min())
    scale = bound + abs(center) + 1e-12
    h = (op.matrix - center * sp.identity(op.size, format="csr")) / scale
    x = scale * abs(t)
    order = int(x + 10 * np.log(x + 10) + 20)
    while abs(jv(order, x)) > tol * 1e-2:
        order += 10
    coeffs = jv(np.arange(order + 1), x)
    sign = -1j if t > 0 else 1j
    v0 = np.asarray(psi, dtype=complex)
    v1 = h @ v0
    out = coeffs[0] * v0 + 2 * sign * coeffs[1] * v1
    phase = sign
    for n in range(2, order + 1):
        v0, v1 = v1, 2 * (h @ v1) - v0
        phase *= sign
        out += 2 * phase * coeffs[n] * v1
    return np.exp(-1j * center * t) * out
