"""
Bilinear finite elements on the reference rectangle
Structured interface-aligned mesh, weighted stiffness assembly, Dirichlet elimination and sparse solves
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from app.errors import AssemblyError, ParameterError, SolverConvergenceError

logger = logging.getLogger(__name__)

SOLVER_METHODS = ("cg", "direct")


@dataclass(frozen=True)
class QuadratureRule:
    """2x2 Gauss rule on every cell; arrays are indexed (cell, point, ...)"""

    x: np.ndarray
    z: np.ndarray
    weights: np.ndarray
    region: np.ndarray
    shape_values: np.ndarray
    shape_gradients: np.ndarray


@dataclass(frozen=True)
class ReferenceMesh:
    """
    Tensor grid on D x (-H, d) with the interface line z = 0 as a mesh line

    Nodes are numbered row by row: node (i, j) has index j*(nx+1) + i, rows j < nz1 lie
    below the interface. Cells list their nodes counter-clockwise from the lower-left corner.
    """

    L: float
    H: float
    d: float
    nx: int
    nz1: int
    nz2: int

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.nx + 1)

    @cached_property
    def z(self) -> np.ndarray:
        lower = np.linspace(-self.H, 0.0, self.nz1 + 1)
        upper = np.linspace(0.0, self.d, self.nz2 + 1)
        return np.concatenate([lower, upper[1:]])

    @property
    def nz(self) -> int:
        return self.nz1 + self.nz2

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.nz + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.nz

    @property
    def interface_row(self) -> int:
        return self.nz1

    @cached_property
    def nodes(self) -> np.ndarray:
        xx, zz = np.meshgrid(self.x, self.z)
        return np.column_stack([xx.ravel(), zz.ravel()])

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    @cached_property
    def cells(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.nz))
        i, j = i.ravel(), j.ravel()
        return np.column_stack([
            self.node_index(i, j),
            self.node_index(i + 1, j),
            self.node_index(i + 1, j + 1),
            self.node_index(i, j + 1),
        ])

    @cached_property
    def cell_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.nz), self.nx)

    @cached_property
    def cell_region(self) -> np.ndarray:
        """0 for cells below the interface line, 1 above"""
        return (self.cell_rows >= self.nz1).astype(int)

    @cached_property
    def cell_widths(self) -> np.ndarray:
        return np.full(self.n_cells, 2.0 * self.L / self.nx)

    @cached_property
    def cell_heights(self) -> np.ndarray:
        return np.diff(self.z)[self.cell_rows]

    @property
    def cell_areas(self) -> np.ndarray:
        return self.cell_widths * self.cell_heights

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        j = np.arange(self.n_nodes) // (self.nx + 1)
        i = np.arange(self.n_nodes) % (self.nx + 1)
        return (i == 0) | (i == self.nx) | (j == 0) | (j == self.nz)

    @cached_property
    def interface_nodes(self) -> np.ndarray:
        return self.node_index(np.arange(self.nx + 1), self.nz1)

    @cached_property
    def top_nodes(self) -> np.ndarray:
        return self.node_index(np.arange(self.nx + 1), self.nz)

    @cached_property
    def quadrature(self) -> QuadratureRule:
        gauss, gauss_w = np.polynomial.legendre.leggauss(2)
        local = 0.5 * (gauss + 1.0)
        xi, eta = np.meshgrid(local, local, indexing="ij")
        xi, eta = xi.ravel(), eta.ravel()
        w_local = np.outer(0.5 * gauss_w, 0.5 * gauss_w).ravel()

        values = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
        d_xi = np.column_stack([-(1 - eta), 1 - eta, eta, -eta])
        d_eta = np.column_stack([-(1 - xi), -xi, xi, 1 - xi])

        hx = self.cell_widths[:, None, None]
        hz = self.cell_heights[:, None, None]
        gradients = np.stack([
            np.broadcast_to(d_xi[None], (self.n_cells, 4, 4)) / hx,
            np.broadcast_to(d_eta[None], (self.n_cells, 4, 4)) / hz,
        ], axis=-1)

        corner = self.nodes[self.cells[:, 0]]
        xq = corner[:, 0:1] + self.cell_widths[:, None] * xi[None, :]
        zq = corner[:, 1:2] + self.cell_heights[:, None] * eta[None, :]
        weights = self.cell_areas[:, None] * w_local[None, :]
        region = np.repeat(self.cell_region[:, None], 4, axis=1)
        return QuadratureRule(x=xq, z=zq, weights=weights, region=region,
                              shape_values=values, shape_gradients=gradients)


def build_mesh(L: float, H: float, d: float, nx: int, nz1: int, nz2: int) -> ReferenceMesh:
    """
    Build the interface-aligned reference mesh

    Args:
        L, H, d: half-width, gap depth and plate thickness
        nx, nz1, nz2: cells across D, below the interface and above it

    Returns:
        ReferenceMesh
    """
    for name, value in (("L", L), ("H", H), ("d", d)):
        if not value > 0:
            raise ParameterError(f"Mesh extent {name} must be positive, got {value}")
    for name, value in (("nx", nx), ("nz1", nz1), ("nz2", nz2)):
        if int(value) != value or value < 1:
            raise ParameterError(f"Mesh cell count {name} must be a positive integer, got {value}")
    return ReferenceMesh(float(L), float(H), float(d), int(nx), int(nz1), int(nz2))


def evaluate_at_quadrature(mesh: ReferenceMesh, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolated values (cell, point) and reference gradients (cell, point, 2) of a nodal field"""
    rule = mesh.quadrature
    local = np.asarray(values, dtype=float)[mesh.cells]
    field = np.einsum("qa,ca->cq", rule.shape_values, local)
    gradient = np.einsum("cqai,ca->cqi", rule.shape_gradients, local)
    return field, gradient


def cell_center_gradients(mesh: ReferenceMesh, values: np.ndarray) -> np.ndarray:
    """Reference gradient of the bilinear interpolant at every cell centre, shape (cell, 2)"""
    v = np.asarray(values, dtype=float)[mesh.cells]
    gx = (v[:, 1] - v[:, 0] + v[:, 2] - v[:, 3]) / (2.0 * mesh.cell_widths)
    gz = (v[:, 3] - v[:, 0] + v[:, 2] - v[:, 1]) / (2.0 * mesh.cell_heights)
    return np.column_stack([gx, gz])


@dataclass(frozen=True)
class SparseSystem:
    """Dirichlet-reduced stiffness system K_ff x_f = -K_fc g_c"""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    constrained: np.ndarray
    values: np.ndarray
    full_matrix: sp.csr_matrix

    def expand(self, free_values: np.ndarray) -> np.ndarray:
        full = np.empty(self.free.size + self.constrained.size)
        full[self.free] = free_values
        full[self.constrained] = self.values
        return full


@dataclass(frozen=True)
class SolveInfo:
    method: str
    residual: float
    iterations: int


def stiffness_matrix(mesh: ReferenceMesh, A: np.ndarray) -> sp.csr_matrix:
    """Global matrix of the form integral of A grad(psi) . grad(phi); A has shape (cell, point, 2, 2)"""
    rule = mesh.quadrature
    blocks = np.einsum("cq,cqai,cqij,cqbj->cab", rule.weights, rule.shape_gradients, A, rule.shape_gradients)
    rows = np.repeat(mesh.cells, 4, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, 4)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def assemble(mesh: ReferenceMesh, A: np.ndarray, dirichlet: np.ndarray,
             constrained: Optional[np.ndarray] = None) -> SparseSystem:
    """
    Assemble and reduce the weighted stiffness system

    Args:
        mesh: reference mesh
        A: coefficient matrices at mesh.quadrature points, shape (cell, point, 2, 2)
        dirichlet: nodal values; only the entries at constrained nodes are read
        constrained: constrained node indices (defaults to the whole boundary)

    Returns:
        SparseSystem

    Raises:
        AssemblyError: if the assembled matrix is not symmetric with positive diagonal
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (mesh.n_cells, 4, 2, 2):
        raise AssemblyError(f"Coefficient field has shape {A.shape}, expected {(mesh.n_cells, 4, 2, 2)}")
    full = stiffness_matrix(mesh, A)

    scale = abs(full).max()
    asymmetry = abs(full - full.T).max() if full.nnz else 0.0
    if asymmetry > 1e-12 * max(scale, 1.0) or np.any(full.diagonal() <= 0):
        raise AssemblyError(f"Stiffness matrix is not SPD (asymmetry {asymmetry:.3e})")

    if constrained is None:
        constrained = np.flatnonzero(mesh.boundary_mask)
    constrained = np.asarray(constrained)
    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    g = np.asarray(dirichlet, dtype=float)[constrained]

    matrix = full[free][:, free].tocsr()
    rhs = -(full[free][:, constrained] @ g)
    return SparseSystem(matrix=matrix, rhs=rhs, free=free, constrained=constrained, values=g, full_matrix=full)


def galerkin_residual(system: SparseSystem, free_values: np.ndarray) -> float:
    """Relative residual of the reduced system at the given interior values"""
    residual = system.matrix @ free_values - system.rhs
    norm_b = np.linalg.norm(system.rhs)
    return float(np.linalg.norm(residual) / norm_b) if norm_b > 0 else float(np.linalg.norm(residual))


def solve_system(system: SparseSystem, tol: float = 1e-10, method: str = "cg",
                 maxiter: Optional[int] = None) -> Tuple[np.ndarray, SolveInfo]:
    """
    Solve the reduced system and return the full nodal vector

    Args:
        system: assembled SparseSystem
        tol: relative residual target
        method: "cg" (Jacobi-preconditioned conjugate gradients) or "direct" (sparse LU)
        maxiter: CG iteration cap (defaults to 10 x number of unknowns)

    Returns:
        (nodal values, SolveInfo)

    Raises:
        SolverConvergenceError: CG hit the iteration cap above tolerance
    """
    if method not in SOLVER_METHODS:
        raise ParameterError(f"Unknown solver method {method!r}, expected one of {SOLVER_METHODS}")
    n_free = system.free.size
    if n_free == 0 or not np.any(system.rhs):
        return system.expand(np.zeros(n_free)), SolveInfo(method, 0.0, 0)

    if method == "direct":
        x = spla.splu(system.matrix.tocsc()).solve(system.rhs)
        info = SolveInfo(method, galerkin_residual(system, x), 1)
        logger.debug("Direct solve: %d unknowns, residual %.3e", n_free, info.residual)
        return system.expand(x), info

    iterations = 0

    def _count(_):
        nonlocal iterations
        iterations += 1

    diagonal = system.matrix.diagonal()
    preconditioner = sp.diags(1.0 / diagonal)
    cap = maxiter if maxiter is not None else 10 * n_free
    x, status = spla.cg(system.matrix, system.rhs, rtol=tol, atol=0.0, maxiter=cap,
                        M=preconditioner, callback=_count)
    residual = galerkin_residual(system, x)
    if status != 0:
        logger.warning("CG stopped after %d iterations with residual %.3e", iterations, residual)
        raise SolverConvergenceError("Conjugate gradients did not converge", residual, iterations)
    logger.debug("CG solve: %d unknowns, %d iterations, residual %.3e", n_free, iterations, residual)
    return system.expand(x), SolveInfo(method, residual, iterations)
