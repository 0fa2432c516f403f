"""
Cubic Hermite finite element space on a 1-D grid
H²-conforming deflection space with interleaved DOFs [u_0, u'_0, u_1, u'_1, ...]
"""

from functools import cached_property
from typing import Callable, Tuple

import numpy as np
import scipy.sparse as sp

from app.errors import ParameterError

BC_MODES = ("clamped", "pinned")


def _shape_functions(t: np.ndarray, h: np.ndarray, derivative: int) -> np.ndarray:
    """
    Hermite shape functions on an element of length h at local coordinate t in [0, 1]

    Args:
        t: local coordinates
        h: element lengths (broadcast against t)
        derivative: 0, 1 or 2 (derivatives taken with respect to x)

    Returns:
        Array of shape (len(t), 4) in DOF order (w_i, theta_i, w_j, theta_j)
    """
    t = np.asarray(t, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), t.shape)
    if derivative == 0:
        cols = (1 - 3 * t**2 + 2 * t**3,
                h * (t - 2 * t**2 + t**3),
                3 * t**2 - 2 * t**3,
                h * (-t**2 + t**3))
    elif derivative == 1:
        cols = ((-6 * t + 6 * t**2) / h,
                1 - 4 * t + 3 * t**2,
                (6 * t - 6 * t**2) / h,
                -2 * t + 3 * t**2)
    elif derivative == 2:
        cols = ((-6 + 12 * t) / h**2,
                (-4 + 6 * t) / h,
                (6 - 12 * t) / h**2,
                (-2 + 6 * t) / h)
    else:
        raise ParameterError(f"Unsupported derivative order: {derivative}")
    return np.stack(cols, axis=-1)


def _element_matrices(h: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form bending, stretching and consistent mass matrices, one 4x4 block per element"""
    h = h[:, None, None]
    one = np.ones_like(h)

    bending = np.concatenate([
        np.concatenate([12 * one, 6 * h, -12 * one, 6 * h], axis=2),
        np.concatenate([6 * h, 4 * h**2, -6 * h, 2 * h**2], axis=2),
        np.concatenate([-12 * one, -6 * h, 12 * one, -6 * h], axis=2),
        np.concatenate([6 * h, 2 * h**2, -6 * h, 4 * h**2], axis=2),
    ], axis=1) / h**3

    stretching = np.concatenate([
        np.concatenate([36 * one, 3 * h, -36 * one, 3 * h], axis=2),
        np.concatenate([3 * h, 4 * h**2, -3 * h, -h**2], axis=2),
        np.concatenate([-36 * one, -3 * h, 36 * one, -3 * h], axis=2),
        np.concatenate([3 * h, -h**2, -3 * h, 4 * h**2], axis=2),
    ], axis=1) / (30 * h)

    mass = np.concatenate([
        np.concatenate([156 * one, 22 * h, 54 * one, -13 * h], axis=2),
        np.concatenate([22 * h, 4 * h**2, 13 * h, -3 * h**2], axis=2),
        np.concatenate([54 * one, 13 * h, 156 * one, -22 * h], axis=2),
        np.concatenate([-13 * h, -3 * h**2, -22 * h, 4 * h**2], axis=2),
    ], axis=1) * h / 420

    return bending, stretching, mass


class HermiteSpace:
    """
    Cubic Hermite space on the grid x_nodes
    Clamped mode constrains value and slope at both ends, pinned mode the values only
    """

    def __init__(self, x_nodes: np.ndarray, bc_mode: str = "clamped"):
        x_nodes = np.asarray(x_nodes, dtype=float)
        if x_nodes.ndim != 1 or x_nodes.size < 2:
            raise ParameterError("Hermite grid needs at least two nodes")
        if np.any(np.diff(x_nodes) <= 0):
            raise ParameterError("Hermite grid must be strictly increasing")
        if bc_mode not in BC_MODES:
            raise ParameterError(f"bc_mode must be one of {BC_MODES}, got {bc_mode!r}")

        self.x_nodes = x_nodes
        self.bc_mode = bc_mode
        self.h = np.diff(x_nodes)
        self.n_nodes = x_nodes.size
        self.n_elements = self.n_nodes - 1
        self.n_dofs = 2 * self.n_nodes

    @property
    def element_dofs(self) -> np.ndarray:
        first = 2 * np.arange(self.n_elements)
        return first[:, None] + np.arange(4)[None, :]

    @property
    def value_dofs(self) -> np.ndarray:
        return np.arange(0, self.n_dofs, 2)

    @property
    def slope_dofs(self) -> np.ndarray:
        return np.arange(1, self.n_dofs, 2)

    @property
    def constrained_dofs(self) -> np.ndarray:
        last = self.n_dofs - 2
        if self.bc_mode == "clamped":
            return np.array([0, 1, last, last + 1])
        return np.array([0, last])

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    def _assemble(self, blocks: np.ndarray) -> sp.csr_matrix:
        dofs = self.element_dofs
        rows = np.broadcast_to(dofs[:, :, None], blocks.shape).ravel()
        cols = np.broadcast_to(dofs[:, None, :], blocks.shape).ravel()
        return sp.coo_matrix((blocks.ravel(), (rows, cols)),
                             shape=(self.n_dofs, self.n_dofs)).tocsr()

    @cached_property
    def _blocks(self):
        return _element_matrices(self.h)

    @cached_property
    def bending_matrix(self) -> sp.csr_matrix:
        """K_b with c^T K_b c = integral of (u'')^2"""
        return self._assemble(self._blocks[0])

    @cached_property
    def stretching_matrix(self) -> sp.csr_matrix:
        """K_s with c^T K_s c = integral of (u')^2"""
        return self._assemble(self._blocks[1])

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        return self._assemble(self._blocks[2])

    def locate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Element index and local coordinate t for each point (points outside are clamped to the end elements)"""
        x = np.asarray(x, dtype=float)
        elem = np.clip(np.searchsorted(self.x_nodes, x, side="right") - 1, 0, self.n_elements - 1)
        t = (x - self.x_nodes[elem]) / self.h[elem]
        return elem, t

    def basis_matrix(self, x: np.ndarray, derivative: int = 0) -> sp.csr_matrix:
        """Sparse matrix B with (B @ c)[k] = d^derivative u / dx^derivative at x[k]"""
        x = np.ravel(np.asarray(x, dtype=float))
        elem, t = self.locate(x)
        values = _shape_functions(t, self.h[elem], derivative)
        rows = np.repeat(np.arange(x.size), 4)
        cols = self.element_dofs[elem].ravel()
        return sp.csr_matrix((values.ravel(), (rows, cols)), shape=(x.size, self.n_dofs))

    def evaluate(self, coefficients: np.ndarray, x: np.ndarray, derivative: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (self.basis_matrix(x, derivative) @ coefficients).reshape(x.shape)

    def quadrature(self, points_per_element: int = 4) -> Tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre rule over the grid"""
        xi, wi = np.polynomial.legendre.leggauss(points_per_element)
        left = self.x_nodes[:-1, None]
        half = 0.5 * self.h[:, None]
        xq = left + half * (xi[None, :] + 1.0)
        wq = half * wi[None, :]
        return xq.ravel(), wq.ravel()

    def pack(self, u_values: np.ndarray, du_values: np.ndarray) -> np.ndarray:
        coefficients = np.empty(self.n_dofs)
        coefficients[0::2] = u_values
        coefficients[1::2] = du_values
        return coefficients

    @staticmethod
    def unpack(coefficients: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return coefficients[0::2].copy(), coefficients[1::2].copy()

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray],
                    dfunc: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Hermite interpolant: nodal values and slopes of func"""
        return self.pack(np.asarray(func(self.x_nodes), dtype=float) * np.ones(self.n_nodes),
                         np.asarray(dfunc(self.x_nodes), dtype=float) * np.ones(self.n_nodes))
