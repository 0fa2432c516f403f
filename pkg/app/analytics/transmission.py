"""
Transmission problem solver
Potential of the deflected device via the flat reference rectangle, interface and top traces, electrostatic energy
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.analytics.fem2d import (
    ReferenceMesh,
    SolveInfo,
    assemble,
    build_mesh,
    cell_center_gradients,
    evaluate_at_quadrature,
    solve_system,
)
from app.analytics.geometry import (
    LOWER,
    UPPER,
    BoundaryData,
    CoefficientField,
    DeflectionProfile,
    PhysicalParams,
    coefficients,
    physical_gradient,
)
from app.errors import ParameterError

logger = logging.getLogger(__name__)

TRACE_METHODS = ("extrapolated", "midpoint")


@dataclass(frozen=True)
class PotentialField:
    """Nodal psi o Theta on the reference mesh together with the state it was solved for"""

    params: PhysicalParams
    mesh: ReferenceMesh
    deflection: DeflectionProfile
    boundary: BoundaryData
    values: np.ndarray
    coefficients: CoefficientField
    info: SolveInfo

    @property
    def residual(self) -> float:
        return self.info.residual

    @property
    def iterations(self) -> int:
        return self.info.iterations

    def grid(self) -> np.ndarray:
        """Nodal values as a (nz+1, nx+1) array, row 0 on the ground plate"""
        return self.values.reshape(self.mesh.nz + 1, self.mesh.nx + 1)


@dataclass(frozen=True)
class TraceData:
    """
    One-sided physical gradients along the interface z = u(x) and the top z = u(x) + d

    Each gradient array has shape (nx, 2) with columns (d/dx, d/dz), sampled at the
    x-midpoints of the boundary cell rows.
    """

    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    interface_upper: np.ndarray
    interface_lower: np.ndarray
    top: np.ndarray

    @property
    def top_tangential(self) -> np.ndarray:
        """d_x psi_2 + u' d_z psi_2 on the top, zero for a constant top potential"""
        return self.top[:, 0] + self.du * self.top[:, 1]


@dataclass(frozen=True)
class FlatProfile:
    """Closed-form potential of the undeflected device: linear in each layer with flux matching"""

    params: PhysicalParams
    slope_lower: float
    slope_upper: float

    def __call__(self, zbar: np.ndarray) -> np.ndarray:
        zbar = np.asarray(zbar, dtype=float)
        p = self.params
        return np.where(zbar <= 0.0, self.slope_lower * (zbar + p.H), self.slope_lower * p.H + self.slope_upper * zbar)

    @property
    def energy(self) -> float:
        p = self.params
        return -p.L * p.sigma1 * p.sigma2 * p.V**2 / (p.sigma2 * p.H + p.sigma1 * p.d)

    @property
    def force(self) -> float:
        """g(0) for this profile: both interface summands plus the top summand"""
        p = self.params
        s2 = self.slope_upper
        return -p.sigma_jump * p.sigma2 / (2.0 * p.sigma1) * s2**2 + 0.5 * p.sigma2 * s2**2

    def as_boundary(self) -> BoundaryData:
        return BoundaryData.custom_trace(self.params, lambda x, zbar: self(zbar))


def flat_transmission_profile(params: PhysicalParams) -> FlatProfile:
    """
    1-D transmission profile for u = 0

    Slopes solve sigma1 s1 = sigma2 s2 and s1 H + s2 d = V.
    """
    denominator = params.sigma2 * params.H + params.sigma1 * params.d
    return FlatProfile(params=params,
                       slope_lower=params.V * params.sigma2 / denominator,
                       slope_upper=params.V * params.sigma1 / denominator)


def _check_mesh(params: PhysicalParams, mesh: ReferenceMesh):
    if not np.allclose([mesh.L, mesh.H, mesh.d], [params.L, params.H, params.d], rtol=1e-12, atol=0.0):
        raise ParameterError(
            f"Mesh extents (L={mesh.L}, H={mesh.H}, d={mesh.d}) do not match the physical parameters"
        )


def quadrature_coefficients(params: PhysicalParams, u: DeflectionProfile, mesh: ReferenceMesh) -> CoefficientField:
    rule = mesh.quadrature
    return coefficients(params, u, rule.x, rule.z, rule.region)


def solve_potential(params: PhysicalParams, u: DeflectionProfile, mesh: ReferenceMesh,
                    bdata: Optional[BoundaryData] = None, tol: float = 1e-10,
                    method: str = "cg") -> PotentialField:
    """
    Solve the transmission problem for the deflection u

    Args:
        params: physical constants
        u: admissible deflection on a grid spanning [-L, L]
        mesh: reference mesh of D x (-H, d)
        bdata: Dirichlet data (defaults to the model data h_u)
        tol: relative residual target of the linear solve
        method: "cg" or "direct"

    Returns:
        PotentialField
    """
    _check_mesh(params, mesh)
    bdata = bdata if bdata is not None else BoundaryData.model(params)
    field = quadrature_coefficients(params, u, mesh)
    dirichlet = bdata.reference_values(params, u, mesh.nodes[:, 0], mesh.nodes[:, 1])
    system = assemble(mesh, field.A, dirichlet)
    values, info = solve_system(system, tol=tol, method=method)
    values.flags.writeable = False
    logger.debug("Potential solved on %dx(%d+%d) mesh, residual %.3e",
                 mesh.nx, mesh.nz1, mesh.nz2, info.residual)
    return PotentialField(params=params, mesh=mesh, deflection=u, boundary=bdata,
                          values=values, coefficients=field, info=info)


def _row_trace(phi: PotentialField, gradients: np.ndarray, rows, x_mid, u_mid, du_mid,
               region: int, target_z: float, method: str) -> np.ndarray:
    """Physical gradient on the cell row(s) nearest to the reference line z = target_z"""
    mesh, params = phi.mesh, phi.params
    centres = 0.5 * (mesh.z[:-1] + mesh.z[1:])
    regions = np.full(x_mid.shape, region)

    def mapped(row):
        z_row = np.full(x_mid.shape, centres[row])
        return physical_gradient(params, u_mid, du_mid, z_row, regions, gradients[row])

    first = mapped(rows[0])
    if method == "midpoint" or len(rows) < 2:
        return first
    second = mapped(rows[1])
    z1, z2 = centres[rows[0]], centres[rows[1]]
    weight = (target_z - z2) / (z1 - z2)
    return weight * first + (1.0 - weight) * second


def extract_traces(phi: PotentialField, method: str = "extrapolated") -> TraceData:
    """
    One-sided gradients of the physical potential along the interface and the top

    Cell-centre gradients of the rows adjacent to each curve are mapped by (DTheta^T)^-1;
    the extrapolated method continues the two nearest rows linearly to the curve.
    """
    if method not in TRACE_METHODS:
        raise ParameterError(f"Unknown trace method {method!r}, expected one of {TRACE_METHODS}")
    mesh = phi.mesh
    gradients = cell_center_gradients(mesh, phi.values).reshape(mesh.nz, mesh.nx, 2)

    x_mid = 0.5 * (mesh.x[:-1] + mesh.x[1:])
    u_mid = phi.deflection.evaluate(x_mid)
    du_mid = phi.deflection.evaluate(x_mid, derivative=1)

    upper_rows = [mesh.nz1 + k for k in range(min(2, mesh.nz2))]
    lower_rows = [mesh.nz1 - 1 - k for k in range(min(2, mesh.nz1))]
    top_rows = [mesh.nz - 1 - k for k in range(min(2, mesh.nz2))]

    args = (x_mid, u_mid, du_mid)
    return TraceData(
        x=x_mid,
        u=u_mid,
        du=du_mid,
        interface_upper=_row_trace(phi, gradients, upper_rows, *args, UPPER, 0.0, method),
        interface_lower=_row_trace(phi, gradients, lower_rows, *args, LOWER, 0.0, method),
        top=_row_trace(phi, gradients, top_rows, *args, UPPER, mesh.d, method),
    )


def electrostatic_energy(phi: PotentialField, field: Optional[CoefficientField] = None) -> float:
    """E_e(u) = -1/2 integral of A grad(psi~) . grad(psi~) over the reference rectangle"""
    field = field if field is not None else phi.coefficients
    _, gradient = evaluate_at_quadrature(phi.mesh, phi.values)
    density = np.einsum("cqi,cqij,cqj->cq", gradient, field.A, gradient)
    return float(-0.5 * np.sum(phi.mesh.quadrature.weights * density))


def physical_energy(phi: PotentialField) -> float:
    """
    -1/2 integral of sigma |grad psi|^2 on the mapped mesh

    Each reference cell is mapped isoparametrically through the physical positions of
    its corners, independently of the coefficient field used by the solver.
    """
    mesh, params = phi.mesh, phi.params
    rule = mesh.quadrature
    x_nodes = mesh.nodes[:, 0]
    z_nodes = mesh.nodes[:, 1]
    u_nodes = phi.deflection.evaluate(x_nodes)
    zbar = np.where(z_nodes <= 0.0, z_nodes + u_nodes * (z_nodes + params.H) / params.H, z_nodes + u_nodes)

    X = x_nodes[mesh.cells]
    Z = zbar[mesh.cells]
    jac = np.empty(rule.weights.shape + (2, 2))
    jac[..., 0, :] = np.einsum("cqai,ca->cqi", rule.shape_gradients, X)
    jac[..., 1, :] = np.einsum("cqai,ca->cqi", rule.shape_gradients, Z)
    det = np.linalg.det(jac)

    _, grad_ref = evaluate_at_quadrature(mesh, phi.values)
    inv_t = np.linalg.inv(np.swapaxes(jac, -1, -2))
    grad_phys = np.einsum("cqij,cqj->cqi", inv_t, grad_ref)
    sigma = np.where(rule.region == LOWER, params.sigma1, params.sigma2)
    density = sigma * np.sum(grad_phys**2, axis=-1)
    return float(-0.5 * np.sum(rule.weights * np.abs(det) * density))


def field_distance(phi_a: PotentialField, phi_b: PotentialField) -> float:
    """H1 distance between two transformed fields on the same reference mesh"""
    if phi_a.mesh != phi_b.mesh:
        raise ParameterError("Fields live on different reference meshes")
    diff = phi_a.values - phi_b.values
    value, gradient = evaluate_at_quadrature(phi_a.mesh, diff)
    weights = phi_a.mesh.quadrature.weights
    return float(np.sqrt(np.sum(weights * (value**2 + np.sum(gradient**2, axis=-1)))))


class TransmissionSolver:
    """
    Production-grade transmission solver bound to one mesh and one set of constants
    Repeated solves for different deflections share the reference mesh
    """

    def __init__(self, params: PhysicalParams, mesh: ReferenceMesh, boundary: Optional[BoundaryData] = None,
                 tol: float = 1e-10, method: str = "cg", trace_method: str = "extrapolated"):
        _check_mesh(params, mesh)
        if trace_method not in TRACE_METHODS:
            raise ParameterError(f"Unknown trace method {trace_method!r}, expected one of {TRACE_METHODS}")
        if not tol > 0:
            raise ParameterError(f"Solver tolerance must be positive, got {tol}")
        self.params = params
        self.mesh = mesh
        self.boundary = boundary if boundary is not None else BoundaryData.model(params)
        self.tol = tol
        self.method = method
        self.trace_method = trace_method

    @classmethod
    def for_params(cls, params: PhysicalParams, nx: int, nz1: int, nz2: int, **kwargs) -> "TransmissionSolver":
        return cls(params, build_mesh(params.L, params.H, params.d, nx, nz1, nz2), **kwargs)

    def with_params(self, params: PhysicalParams) -> "TransmissionSolver":
        boundary = BoundaryData.model(params) if self.boundary.mode == "model_hu" else self.boundary
        return TransmissionSolver(params, self.mesh, boundary, self.tol, self.method, self.trace_method)

    def solve(self, u: DeflectionProfile) -> PotentialField:
        return solve_potential(self.params, u, self.mesh, self.boundary, tol=self.tol, method=self.method)

    def traces(self, phi: PotentialField) -> TraceData:
        return extract_traces(phi, method=self.trace_method)

    def energy(self, u: DeflectionProfile) -> float:
        return electrostatic_energy(self.solve(u))
