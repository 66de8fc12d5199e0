"""Periodic affine Cartesian meshes of quadrilateral elements."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Local face order: -xi1, +xi1, -xi2, +xi2.
FACE_DIRECTION = np.array([0, 0, 1, 1])
FACE_SIGN = np.array([-1.0, 1.0, -1.0, 1.0])
OPPOSITE_FACE = np.array([1, 0, 3, 2])
FACE_NORMALS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class CartesianMesh:
    """nx x ny periodic mesh; element (p, q) has index q * nx + p."""

    nx: int
    ny: int
    bounds: tuple[float, float, float, float]
    neighbors: np.ndarray = field(repr=False)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return (self.bounds[1] - self.bounds[0]) / self.nx

    @property
    def dy(self) -> float:
        return (self.bounds[3] - self.bounds[2]) / self.ny

    @property
    def jgeo(self) -> float:
        return self.dx * self.dy / 4.0

    @property
    def shat_xi1(self) -> float:
        return self.dy / 2.0

    @property
    def shat_xi2(self) -> float:
        return self.dx / 2.0

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.bounds
        return (x1 - x0) * (y1 - y0)

    def element_index(self, p: int, q: int) -> int:
        return (q % self.ny) * self.nx + (p % self.nx)

    def element_origin(self, e: int) -> tuple[float, float]:
        q, p = divmod(e, self.nx)
        return self.bounds[0] + p * self.dx, self.bounds[2] + q * self.dy

    def neighbor(self, e: int, face: int) -> int:
        return int(self.neighbors[e, face])

    def normal(self, face: int) -> np.ndarray:
        return FACE_NORMALS[face]

    def node_coordinates(self, nodes):
        """Physical coordinates of tensor nodes, each of shape (nE, n, n)."""
        nodes = np.asarray(nodes, dtype=float)
        e = np.arange(self.n_elements)
        q, p = np.divmod(e, self.nx)
        x0 = self.bounds[0] + p * self.dx
        y0 = self.bounds[2] + q * self.dy
        xs = x0[:, None] + (nodes[None, :] + 1.0) * self.dx / 2.0
        ys = y0[:, None] + (nodes[None, :] + 1.0) * self.dy / 2.0
        n = nodes.size
        X = np.broadcast_to(xs[:, :, None], (self.n_elements, n, n)).copy()
        Y = np.broadcast_to(ys[:, None, :], (self.n_elements, n, n)).copy()
        return X, Y


def build_cartesian_mesh(nx: int, ny: int, bounds=(-1.0, 1.0, -1.0, 1.0)) -> CartesianMesh:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"element counts must be positive integers, got nx={nx}, ny={ny}")
    x0, x1, y0, y1 = (float(b) for b in bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate bounds {bounds}")
    nx, ny = int(nx), int(ny)
    nbr = np.empty((nx * ny, 4), dtype=np.intp)
    for q in range(ny):
        for p in range(nx):
            e = q * nx + p
            nbr[e, 0] = q * nx + (p - 1) % nx
            nbr[e, 1] = q * nx + (p + 1) % nx
            nbr[e, 2] = ((q - 1) % ny) * nx + p
            nbr[e, 3] = ((q + 1) % ny) * nx + p
    nbr.setflags(write=False)
    return CartesianMesh(nx, ny, (x0, x1, y0, y1), nbr)
