"""Density-weighted axisymmetric Helmholtz finite elements with modal DtN boundaries.

Time convention is ``exp(i omega t)``: the state system is

    (K(alpha) - k^2 M(alpha) - B^L - B^R) p = 2 i k M^L 1

whose solution for a straight pipe is the unit plane wave ``exp(-i k z)``.
With that convention an outgoing mode contributes ``-i k_m`` to the DtN
matrix when propagating and ``-|k_m|`` when evanescent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _quadratic
from .geometry import Mesh
from .modes import ModeBasis, mode_basis, reduced_wavenumbers, wavenumber

__all__ = [
    "BulkMatrices",
    "FrequencyContext",
    "SolverError",
    "StateSolution",
    "element_matrices",
    "assemble_bulk",
    "boundary_mass",
    "dtn_matrix",
    "assemble_rhs",
    "build_context",
    "solve_state",
    "Problem",
]

log = logging.getLogger(__name__)

ALPHA_MIN = 1e-8


class SolverError(RuntimeError):
    """Raised when a state system cannot be factorised."""


def _element_parts():
    Q0, Q1, S0, S1 = _quadratic.Q0, _quadratic.Q1, _quadratic.S0, _quadratic.S1
    # K_E = r0 * K_r + h * K_h,  M_E = r0 h^2 * M_r + h^3 * M_h
    K_r = np.kron(S0, Q0) + np.kron(Q0, S0)
    K_h = np.kron(S0, Q1) + np.kron(Q0, S1)
    M_r = np.kron(Q0, Q0)
    M_h = np.kron(Q0, Q1)
    return K_r, K_h, M_r, M_h


_K_R, _K_H, _M_R, _M_H = _element_parts()


def element_matrices(h: float, r0: float):
    """Stiffness and mass of the square element ``[z0, z0+h] x [r0, r0+h]``.

    The r-weighted integrands are polynomials of degree at most 5 per
    direction, so the 3-point Gauss rule behind the 1D moments is exact.
    """
    K = r0 * _K_R + h * _K_H
    M = r0 * h * h * _M_R + h ** 3 * _M_H
    return K, M


@dataclass(frozen=True, eq=False)
class _Pattern:
    """Sparsity pattern of the system matrix and scatter maps into it."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    bulk_slot: np.ndarray  # (n_elements * 81,) slot of each element entry
    left_slot: np.ndarray  # (nb_L * nb_L,)
    right_slot: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def matrix(self, data) -> sp.csc_matrix:
        # pattern and values are symmetric, so CSR arrays double as CSC
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


@lru_cache(maxsize=8)
def _pattern(mesh: Mesh) -> _Pattern:
    n = mesh.n_dof
    el = mesh.elements
    rows = np.repeat(el, 9, axis=1).ravel()
    cols = np.tile(el, (1, 9)).ravel()
    keys = [rows * n + cols]
    for nodes in (mesh.gamma_left_nodes, mesh.gamma_right_nodes):
        keys.append((nodes[:, None] * n + nodes[None, :]).ravel())
    sizes = [len(k) for k in keys]
    uniq, inv = np.unique(np.concatenate(keys), return_inverse=True)
    r = uniq // n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    splits = np.cumsum(sizes)[:-1]
    bulk, left, right = np.split(inv, splits)
    return _Pattern(n=n, indptr=indptr, indices=(uniq % n).astype(np.int64), bulk_slot=bulk, left_slot=left, right_slot=right)


@dataclass(frozen=True, eq=False)
class BulkMatrices:
    """``K(alpha)`` and ``M(alpha)`` stored as data arrays on the shared pattern."""

    mesh: Mesh
    alpha: np.ndarray
    K_data: np.ndarray
    M_data: np.ndarray

    @property
    def K(self) -> sp.csc_matrix:
        return _pattern(self.mesh).matrix(self.K_data)

    @property
    def M(self) -> sp.csc_matrix:
        return _pattern(self.mesh).matrix(self.M_data)

    def element_K(self, e: int) -> np.ndarray:
        return element_matrices(self.mesh.h, self.mesh.element_origin[e, 1])[0]

    def element_M(self, e: int) -> np.ndarray:
        return element_matrices(self.mesh.h, self.mesh.element_origin[e, 1])[1]


def check_alpha(mesh: Mesh, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (mesh.n_elements,):
        raise ValueError(f"alpha must have one value per element ({mesh.n_elements}), got shape {alpha.shape}")
    lo = ALPHA_MIN * (1 - 1e-12)
    if not (np.all(alpha >= lo) and np.all(alpha <= 1 + 1e-12)):
        raise ValueError(f"alpha outside [{ALPHA_MIN}, 1]: min={alpha.min()!r}, max={alpha.max()!r}")
    return alpha


def assemble_bulk(mesh: Mesh, alpha) -> BulkMatrices:
    """Scatter ``sum_E alpha_E (K_E, M_E)`` into the global pattern."""
    alpha = check_alpha(mesh, alpha)
    pat = _pattern(mesh)
    h = mesh.h
    r0 = mesh.element_origin[:, 1]
    K_vals = alpha[:, None] * (r0[:, None] * _K_R.ravel() + h * _K_H.ravel())
    M_vals = alpha[:, None] * (r0[:, None] * (h * h) * _M_R.ravel() + h ** 3 * _M_H.ravel())
    K_data = np.bincount(pat.bulk_slot, weights=K_vals.ravel(), minlength=pat.nnz)
    M_data = np.bincount(pat.bulk_slot, weights=M_vals.ravel(), minlength=pat.nnz)
    return BulkMatrices(mesh=mesh, alpha=alpha, K_data=K_data, M_data=M_data)


def boundary_mass(mesh: Mesh, side: str) -> sp.csr_matrix:
    """Global r-weighted trace mass ``int_Gamma r phi_i phi_j``."""
    from .modes import assemble_radial_matrices

    nodes = mesh.boundary_nodes(side)
    _, M_r = assemble_radial_matrices(mesh, side)
    rows = np.repeat(nodes, len(nodes))
    cols = np.tile(nodes, len(nodes))
    return sp.csr_matrix((M_r.ravel(), (rows, cols)), shape=(mesh.n_dof, mesh.n_dof))


def dtn_coefficients(basis: ModeBasis, k: float) -> np.ndarray:
    """Modal DtN weights: ``-i k_m`` (propagating) and ``-sqrt(lam_m - k^2)`` (evanescent)."""
    km = reduced_wavenumbers(k, basis.eigenvalues)
    return -1j * np.conj(km)


def dtn_local(basis: ModeBasis, k: float) -> np.ndarray:
    U = basis.projectors
    return (U * dtn_coefficients(basis, k)) @ U.T


def dtn_matrix(basis: ModeBasis, k: float) -> sp.csr_matrix:
    """``B^X = sum_m c_m (M^X v_m)(M^X v_m)^T`` embedded in the full space."""
    local = dtn_local(basis, k)
    nodes = basis.nodes
    rows = np.repeat(nodes, len(nodes))
    cols = np.tile(nodes, len(nodes))
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(basis.n_dof, basis.n_dof))


def assemble_rhs(mesh: Mesh, M_left, k: float) -> np.ndarray:
    """``2 i k M^L 1``: unit-pressure planar wave entering through the left boundary."""
    return 2j * k * (M_left @ np.ones(mesh.n_dof))


@dataclass(eq=False)
class FrequencyContext:
    """State system at one frequency for one density snapshot."""

    f: float
    k: float
    bulk: BulkMatrices
    left: ModeBasis
    right: ModeBasis
    system_data: np.ndarray
    rhs: np.ndarray
    km_left: np.ndarray
    km_right: np.ndarray
    _lu: object = field(default=None, repr=False)
    n_factorizations: int = 0

    @property
    def mesh(self) -> Mesh:
        return self.bulk.mesh

    @property
    def system(self) -> sp.csc_matrix:
        return _pattern(self.mesh).matrix(self.system_data)

    @property
    def Mp_left(self) -> int:
        return self.left.n_propagating(self.k)

    @property
    def Mp_right(self) -> int:
        return self.right.n_propagating(self.k)

    @property
    def factorization(self):
        if self._lu is None:
            self._lu = _factorize(self.system, self.f)
            self.n_factorizations += 1
        return self._lu

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``system x = b`` (``b`` may hold several columns)."""
        return self.factorization.solve(np.asarray(b, dtype=complex))


def _factorize(A: sp.csc_matrix, f: float):
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
    except RuntimeError as exc:
        try:
            cond = np.linalg.cond(A.toarray()) if A.shape[0] <= 2000 else float("nan")
        except Exception:  # pragma: no cover - diagnostics only
            cond = float("nan")
        raise SolverError(f"factorisation failed at f={f:.6g} Hz (condition estimate {cond:.3g}): {exc}") from exc
    return lu


def build_context(bulk: BulkMatrices, left: ModeBasis, right: ModeBasis, f: float, c: float | None = None) -> FrequencyContext:
    mesh = bulk.mesh
    c = mesh.spec.c if c is None else c
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f!r}")
    k = wavenumber(f, c)
    pat = _pattern(mesh)
    data = bulk.K_data - (k * k) * bulk.M_data + 0j
    # system = ... - B^L - B^R
    data -= np.bincount(pat.left_slot, weights=dtn_local(left, k).real.ravel(), minlength=pat.nnz)
    data -= 1j * np.bincount(pat.left_slot, weights=dtn_local(left, k).imag.ravel(), minlength=pat.nnz)
    BR = dtn_local(right, k)
    data -= np.bincount(pat.right_slot, weights=BR.real.ravel(), minlength=pat.nnz)
    data -= 1j * np.bincount(pat.right_slot, weights=BR.imag.ravel(), minlength=pat.nnz)
    rhs = np.zeros(mesh.n_dof, dtype=complex)
    rhs[left.nodes] = 2j * k * left.local_mass.sum(axis=1)
    return FrequencyContext(
        f=float(f),
        k=k,
        bulk=bulk,
        left=left,
        right=right,
        system_data=data,
        rhs=rhs,
        km_left=reduced_wavenumbers(k, left.eigenvalues),
        km_right=reduced_wavenumbers(k, right.eigenvalues),
    )


@dataclass(eq=False)
class StateSolution:
    p: np.ndarray
    context: FrequencyContext

    def residual(self) -> float:
        ctx = self.context
        r = ctx.system @ self.p - ctx.rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(ctx.rhs), np.finfo(float).tiny))


def solve_state(ctx: FrequencyContext) -> StateSolution:
    if not np.any(ctx.rhs):
        return StateSolution(p=np.zeros(ctx.mesh.n_dof, dtype=complex), context=ctx)
    p = ctx.solve(ctx.rhs)
    return StateSolution(p=p, context=ctx)


class Problem:
    """Mesh plus both mode bases: everything that does not depend on alpha or f."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.left = mode_basis(mesh, "left")
        self.right = mode_basis(mesh, "right")
        _pattern(mesh)

    @property
    def spec(self):
        return self.mesh.spec

    def full_alpha(self, design_alpha=None) -> np.ndarray:
        """All-element density with ``design_alpha`` on the design cylinder."""
        alpha = np.ones(self.mesh.n_elements)
        if design_alpha is not None:
            alpha[self.mesh.design_elements] = design_alpha
        return alpha

    def context(self, alpha, f: float) -> FrequencyContext:
        bulk = alpha if isinstance(alpha, BulkMatrices) else assemble_bulk(self.mesh, alpha)
        return build_context(bulk, self.left, self.right, f)

    def solve(self, alpha, f: float) -> StateSolution:
        return solve_state(self.context(alpha, f))
