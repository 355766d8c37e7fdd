"""Axisymmetric computational domain on a structured biquadratic grid.

The domain is three stacked rectangles in the (z, r) half plane: the left
waveguide, the design cylinder and the right waveguide.  Nodes live on a
lattice with spacing h/2; elements are squares of side h carrying the nine
nodes of a tensor-product quadratic Lagrange element.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DomainSpec", "Mesh", "build_mesh", "mesh_statistics", "standard_domain"]

# Local node (a, b) of an element sits at offset (a, b) * h/2 from its
# lower-left corner; local index is 3*a + b (z-major).
LOCAL_OFFSETS = np.array([(a, b) for a in range(3) for b in range(3)], dtype=np.int64)


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of the transition section; all lengths in metres."""

    r_design: float = 0.050
    l_design: float = 0.050
    r_left: float = 0.030
    r_right: float = 0.040
    l_wg: float = 0.020
    h: float = 0.25e-3
    c: float = 343.0

    def cells(self, name: str) -> int:
        """Number of elements of size h spanned by the length ``name``."""
        value = getattr(self, name)
        n = int(round(value / self.h))
        if n <= 0 or abs(n * self.h - value) > 1e-9 * max(value, self.h):
            raise ValueError(f"{name}={value!r} is not a positive integer multiple of h={self.h!r}")
        return n

    def validate(self) -> None:
        for name in ("r_design", "l_design", "r_left", "r_right", "l_wg", "h", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("r_left", "r_right"):
            if getattr(self, name) > self.r_design * (1 + 1e-12):
                raise ValueError(f"{name}={getattr(self, name)!r} exceeds r_design={self.r_design!r}")
        for name in ("r_design", "l_design", "r_left", "r_right", "l_wg"):
            self.cells(name)


def standard_domain(h: float = 0.25e-3, c: float = 343.0) -> DomainSpec:
    """The reference geometry (lengths in metres) at mesh size ``h``."""
    return DomainSpec(h=h, c=c)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured grid of 9-node square elements.

    Attributes
    ----------
    spec : DomainSpec
    node_coords : (n_dof, 2) array of (z, r) in metres
    node_lattice : (n_dof, 2) integer lattice indices (units of h/2)
    elements : (n_elements, 9) node indices, local order ``3*a + b``
    element_origin : (n_elements, 2) lower-left corner (z, r) of each element
    design_elements : element indices of the design cylinder, z-fastest
    gamma_left_nodes, gamma_right_nodes : truncation boundary nodes, increasing r
    design_shape : (n_z, n_r) element counts of the design block
    """

    spec: DomainSpec
    node_coords: np.ndarray
    node_lattice: np.ndarray
    elements: np.ndarray
    element_origin: np.ndarray
    design_elements: np.ndarray
    gamma_left_nodes: np.ndarray
    gamma_right_nodes: np.ndarray
    design_shape: tuple[int, int]
    _design_mask: np.ndarray = field(repr=False, default=None)

    @property
    def n_dof(self) -> int:
        return len(self.node_coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_design(self) -> int:
        return len(self.design_elements)

    @property
    def h(self) -> float:
        return self.spec.h

    def boundary_nodes(self, side: str) -> np.ndarray:
        side = _side(side)
        return self.gamma_left_nodes if side == "left" else self.gamma_right_nodes

    def boundary_radius(self, side: str) -> float:
        return self.spec.r_left if _side(side) == "left" else self.spec.r_right

    def element_centroids(self) -> np.ndarray:
        return self.element_origin + 0.5 * self.spec.h

    def is_design(self) -> np.ndarray:
        """Boolean mask over all elements marking the design cylinder."""
        return self._design_mask


def _side(side: str) -> str:
    s = str(side).strip().lower()
    if s in ("l", "left"):
        return "left"
    if s in ("r", "right"):
        return "right"
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def build_mesh(spec: DomainSpec) -> Mesh:
    """Build the structured mesh for ``spec``.

    Nodes are numbered lexicographically by (z, r).  Since the three
    rectangles follow each other in z this equals concatenating the
    rectangles left to right with interface nodes kept in the earlier one.
    """
    spec.validate()
    n_wg = spec.cells("l_wg")
    n_ld = spec.cells("l_design")
    n_rd = spec.cells("r_design")
    n_rl = spec.cells("r_left")
    n_rr = spec.cells("r_right")

    # (z0, n_z, n_r) of each block in element units
    blocks = [(0, n_wg, n_rl), (n_wg, n_ld, n_rd), (n_wg + n_ld, n_wg, n_rr)]
    nz_tot = 2 * n_wg + n_ld

    present = np.zeros((2 * nz_tot + 1, 2 * n_rd + 1), dtype=bool)
    for z0, nz, nr in blocks:
        present[2 * z0 : 2 * (z0 + nz) + 1, : 2 * nr + 1] = True
    numbering = np.full(present.shape, -1, dtype=np.int64)
    numbering[present] = np.arange(int(present.sum()))  # C order: z outer, r inner
    iz, ir = np.nonzero(present)
    lattice = np.column_stack([iz, ir])
    coords = lattice * (0.5 * spec.h)

    elements, origins = [], []
    design_first = None
    for b, (z0, nz, nr) in enumerate(blocks):
        ez, er = np.meshgrid(np.arange(nz), np.arange(nr), indexing="xy")
        ez = ez.ravel() + z0  # z-fastest within a block
        er = er.ravel()
        corner_z, corner_r = 2 * ez, 2 * er
        conn = numbering[corner_z[:, None] + LOCAL_OFFSETS[:, 0], corner_r[:, None] + LOCAL_OFFSETS[:, 1]]
        if b == 1:
            design_first = sum(len(e) for e in elements)
        elements.append(conn)
        origins.append(np.column_stack([ez, er]) * spec.h)
    elements = np.concatenate(elements)
    origins = np.concatenate(origins).astype(float)
    assert (elements >= 0).all()

    design = np.arange(design_first, design_first + n_ld * n_rd)
    mask = np.zeros(len(elements), dtype=bool)
    mask[design] = True
    left = numbering[0, : 2 * n_rl + 1].copy()
    right = numbering[2 * nz_tot, : 2 * n_rr + 1].copy()

    return Mesh(
        spec=spec,
        node_coords=coords,
        node_lattice=lattice,
        elements=elements,
        element_origin=origins,
        design_elements=design,
        gamma_left_nodes=left,
        gamma_right_nodes=right,
        design_shape=(n_ld, n_rd),
        _design_mask=mask,
    )


def mesh_statistics(mesh: Mesh) -> dict:
    return {
        "n_dof": mesh.n_dof,
        "n_elements": mesh.n_elements,
        "n_design_elements": mesh.n_design,
        "n_left_boundary_nodes": len(mesh.gamma_left_nodes),
        "n_right_boundary_nodes": len(mesh.gamma_right_nodes),
    }
