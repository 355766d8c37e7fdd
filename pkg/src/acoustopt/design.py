"""Design variables, density filters, the binarising penalty and design files.

Design vectors are ordered z-fastest over the ``(n_z, n_r)`` element grid
of the design cylinder, matching ``Mesh.design_elements``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "EPSILON",
    "DensityFilter",
    "PenaltyConfig",
    "filter_apply",
    "filter_backprop",
    "penalty_value_grad",
    "round_design",
    "project_box",
    "write_design",
    "read_design",
    "render_pgm",
]

EPSILON = 1e-8
FILTER_MODES = ("linear", "fw-open-close")


def cone_weights(shape: tuple[int, int], h: float, radius: float) -> sp.csr_matrix:
    """Row-normalised hat-kernel weights between element centroids.

    Neighbourhoods are truncated at the design-grid edges.
    """
    nz, nr = shape
    n = nz * nr
    if radius < h:
        return sp.identity(n, format="csr")
    reach = int(np.floor(radius / h))
    ez, er = np.meshgrid(np.arange(nz), np.arange(nr), indexing="xy")
    ez, er = ez.ravel(), er.ravel()
    rows, cols, vals = [], [], []
    for dz in range(-reach, reach + 1):
        for dr in range(-reach, reach + 1):
            w = radius - h * np.hypot(dz, dr)
            if w <= 0:
                continue
            jz, jr = ez + dz, er + dr
            ok = (jz >= 0) & (jz < nz) & (jr >= 0) & (jr < nr)
            rows.append(np.flatnonzero(ok))
            cols.append(jr[ok] * nz + jz[ok])
            vals.append(np.full(ok.sum(), w))
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    scale = 1.0 / np.asarray(W.sum(axis=1)).ravel()
    return sp.diags(scale) @ W


@dataclass(frozen=True, eq=False)
class DensityFilter:
    """Map from raw design variables d to physical densities on the design cylinder.

    ``linear`` is the normalised cone filter.  ``fw-open-close`` is an
    opening: an erosion followed by a dilation, both p-power means over the
    same cone weights.  The complement inside the erosion is taken about
    ``1 + epsilon`` so the power means never see an exact zero.
    """

    shape: tuple[int, int]
    h: float
    radius: float = 1e-3
    mode: str = "linear"
    p: float = 8.0
    epsilon: float = EPSILON

    def __post_init__(self):
        if self.mode not in FILTER_MODES:
            raise ValueError(f"unknown filter mode {self.mode!r}; expected one of {FILTER_MODES}")

    @classmethod
    def for_mesh(cls, mesh, radius: float = 1e-3, mode: str = "linear", p: float = 8.0, epsilon: float = EPSILON):
        return cls(shape=tuple(mesh.design_shape), h=mesh.h, radius=radius, mode=mode, p=p, epsilon=epsilon)

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def is_identity(self) -> bool:
        return self.radius < self.h

    @cached_property
    def weights(self) -> sp.csr_matrix:
        return cone_weights(self.shape, self.h, self.radius)

    @cached_property
    def _weights_t(self) -> sp.csr_matrix:
        return self.weights.T.tocsr()

    # p-power mean and its transposed Jacobian
    def _dilate(self, x):
        s = self.weights @ x ** self.p
        return s ** (1.0 / self.p), s

    def _dilate_t(self, x, s, v):
        return x ** (self.p - 1) * (self._weights_t @ (v * s ** (1.0 / self.p - 1.0)))

    def apply(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.is_identity:
            return d.copy()
        if self.mode == "linear":
            return self.weights @ d
        c = 1.0 + self.epsilon
        eroded = c - self._dilate(c - d)[0]
        return self._dilate(eroded)[0]

    def backprop(self, d, v) -> np.ndarray:
        """Transposed filter Jacobian at ``d`` applied to ``v``."""
        v = np.asarray(v, dtype=float)
        if self.is_identity:
            return v.copy()
        if self.mode == "linear":
            return self._weights_t @ v
        d = np.asarray(d, dtype=float)
        c = 1.0 + self.epsilon
        y = c - d
        ey, s1 = self._dilate(y)
        eroded = c - ey
        _, s2 = self._dilate(eroded)
        v_eroded = self._dilate_t(eroded, s2, v)
        # d eroded / d d = J_dilate(y) since both complements flip sign
        return self._dilate_t(y, s1, v_eroded)

    def jvp(self, d, u) -> np.ndarray:
        """Forward directional derivative; used to check ``backprop``."""
        u = np.asarray(u, dtype=float)
        if self.is_identity:
            return u.copy()
        if self.mode == "linear":
            return self.weights @ u
        d = np.asarray(d, dtype=float)
        c = 1.0 + self.epsilon
        P = self.p

        def dil_jvp(x, du):
            s = self.weights @ x ** P
            return s ** (1 / P - 1) * (self.weights @ (x ** (P - 1) * du))

        y = c - d
        eroded = c - self._dilate(y)[0]
        du_eroded = dil_jvp(y, u)
        return dil_jvp(eroded, du_eroded)

    def metadata(self) -> dict:
        return {"mode": self.mode, "radius_m": self.radius, "p": self.p, "epsilon": self.epsilon, "identity": self.is_identity}


def filter_apply(d, flt: DensityFilter) -> np.ndarray:
    return flt.apply(d)


def filter_backprop(d, v, flt: DensityFilter) -> np.ndarray:
    return flt.backprop(d, v)


@dataclass(frozen=True)
class PenaltyConfig:
    gamma: float = 0.0
    epsilon: float = EPSILON


def penalty_value_grad(alpha, cfg: PenaltyConfig):
    """``(gamma/N) sum (alpha - eps)(1 - alpha)`` over the design densities, and its gradient."""
    a = np.asarray(alpha, dtype=float)
    n = a.size
    eps = cfg.epsilon
    value = cfg.gamma / n * float(np.sum((a - eps) * (1.0 - a)))
    grad = cfg.gamma / n * (1.0 + eps - 2.0 * a)
    return value, grad


def round_design(alpha, threshold: float = 0.5, epsilon: float = EPSILON) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    return np.where(a < threshold, epsilon, 1.0)


def project_box(d, epsilon: float = EPSILON) -> np.ndarray:
    return np.clip(np.asarray(d, dtype=float), epsilon, 1.0)


def write_design(path, values, shape: tuple[int, int], epsilon: float = EPSILON) -> None:
    """Plain-text design file: ``n_z n_r epsilon`` then one value per line, z fastest."""
    values = np.asarray(values, dtype=float).ravel()
    nz, nr = shape
    if values.size != nz * nr:
        raise ValueError(f"design has {values.size} values, expected {nz}*{nr}")
    lines = [f"{nz} {nr} {epsilon!r}"] + [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def read_design(path):
    """Inverse of :func:`write_design`; returns ``(values, (n_z, n_r), epsilon)``."""
    tokens = Path(path).read_text(encoding="ascii").split()
    if len(tokens) < 3:
        raise ValueError(f"{path}: missing header")
    nz, nr, eps = int(tokens[0]), int(tokens[1]), float(tokens[2])
    values = np.array([float(t) for t in tokens[3:]])
    if values.size != nz * nr:
        raise ValueError(f"{path}: expected {nz * nr} values, found {values.size}")
    return values, (nz, nr), eps


def render_pgm(path, values, shape: tuple[int, int]) -> None:
    """Binary PGM with r upwards and z to the right; 255 = air, 0 = solid."""
    nz, nr = shape
    img = np.clip(np.asarray(values, dtype=float).reshape(nr, nz), 0.0, 1.0)[::-1]
    pix = np.round(255 * img).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nz} {nr}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
