"""Discrete duct modes on the truncation boundaries.

On a boundary of radius W the radial problem ``-(r f')' = lambda r f`` with
Neumann ends is discretised with the trace of the 2D biquadratic space, i.e.
quadratic elements of size h.  All ``2 W/h + 1`` discrete modes are kept.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _quadratic
from .geometry import Mesh, _side

__all__ = [
    "ModeBasis",
    "ReducedWavenumber",
    "assemble_radial_matrices",
    "solve_modes",
    "mode_basis",
    "reduced_wavenumber",
    "reduced_wavenumbers",
    "count_propagating",
    "wavenumber",
]


def wavenumber(f: float, c: float) -> float:
    return 2.0 * np.pi * f / c


@dataclass(frozen=True)
class ReducedWavenumber:
    value: complex
    propagating: bool


def reduced_wavenumber(k: float, lam: float) -> ReducedWavenumber:
    """Axial wavenumber ``sqrt(k**2 - lam)``.

    Evanescent modes get the branch ``1j * sqrt(lam - k**2)``.  The grazing
    case ``lam == k**2`` counts as propagating with value 0.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k!r}")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam!r}")
    value = reduced_wavenumbers(k, np.array([lam]))[0]
    return ReducedWavenumber(value=complex(value), propagating=bool(lam <= k * k))


def reduced_wavenumbers(k: float, lam: np.ndarray) -> np.ndarray:
    d = k * k - np.asarray(lam, dtype=float)
    return np.where(d >= 0, np.sqrt(np.abs(d)) + 0j, 1j * np.sqrt(np.abs(d)))


def assemble_radial_matrices(mesh: Mesh, side: str):
    """r-weighted stiffness and mass of the trace problem on one boundary.

    Returns dense ``(K_r, M_r)`` ordered like ``mesh.boundary_nodes(side)``.
    """
    nodes = mesh.boundary_nodes(side)
    n = len(nodes)
    if n < 3:
        raise ValueError("boundary has no elements")
    h = mesh.h
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    for e in range((n - 1) // 2):
        ke, me = _quadratic.radial_element(h, e * h)
        sl = slice(2 * e, 2 * e + 3)
        K[sl, sl] += ke
        M[sl, sl] += me
    return K, M


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Duct modes of one truncation boundary.

    ``vectors[:, m]`` holds mode m on ``nodes`` (boundary-local numbering);
    ``mode_vectors`` embeds them into the full nodal space.
    """

    side: str
    eigenvalues: np.ndarray
    vectors: np.ndarray
    nodes: np.ndarray
    local_mass: np.ndarray
    n_dof: int
    radius: float

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @cached_property
    def projectors(self) -> np.ndarray:
        """Columns ``M^X v_m`` restricted to the boundary nodes."""
        return self.local_mass @ self.vectors

    @cached_property
    def boundary_mass(self) -> sp.csr_matrix:
        rows = np.repeat(self.nodes, len(self.nodes))
        cols = np.tile(self.nodes, len(self.nodes))
        return sp.csr_matrix((self.local_mass.ravel(), (rows, cols)), shape=(self.n_dof, self.n_dof))

    @property
    def mode_vectors(self) -> sp.csc_matrix:
        """Sparse ``(n_dof, M)`` matrix of embedded mode vectors."""
        full = sp.lil_matrix((self.n_dof, self.n_modes))
        full[self.nodes, :] = self.vectors
        return full.tocsc()

    def mode_vector(self, m: int) -> np.ndarray:
        out = np.zeros(self.n_dof)
        out[self.nodes] = self.vectors[:, m]
        return out

    def project(self, p: np.ndarray) -> np.ndarray:
        """Modal coefficients ``v_m^T M^X p`` of a full nodal vector."""
        return self.projectors.T @ np.asarray(p)[self.nodes]

    def n_propagating(self, k: float) -> int:
        return int(np.count_nonzero(self.eigenvalues <= k * k))


def solve_modes(K_r: np.ndarray, M_r: np.ndarray, mesh: Mesh, side: str) -> ModeBasis:
    side = _side(side)
    try:
        lam, vec = scipy.linalg.eigh(K_r, M_r)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RuntimeError(f"radial eigenproblem of size {K_r.shape[0]} on the {side} boundary failed: {exc}") from exc
    order = np.argsort(lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    # eigh already returns M-orthonormal vectors; renormalise against round-off
    vec = vec / np.sqrt(np.einsum("im,ij,jm->m", vec, M_r, vec))
    for m in range(vec.shape[1]):
        col = vec[:, m]
        first = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if col[first] < 0:
            vec[:, m] = -col
    if lam[0] < -1e-9 * lam[-1]:
        raise RuntimeError(f"negative radial eigenvalue {lam[0]!r} on the {side} boundary")
    lam[0] = max(lam[0], 0.0)  # planar mode, round-off only
    return ModeBasis(
        side=side,
        eigenvalues=lam,
        vectors=vec,
        nodes=mesh.boundary_nodes(side),
        local_mass=M_r,
        n_dof=mesh.n_dof,
        radius=mesh.boundary_radius(side),
    )


def mode_basis(mesh: Mesh, side: str) -> ModeBasis:
    K_r, M_r = assemble_radial_matrices(mesh, side)
    return solve_modes(K_r, M_r, mesh, side)


def count_propagating(f: float, basis: ModeBasis, c: float) -> int:
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f!r}")
    return basis.n_propagating(wavenumber(f, c))
