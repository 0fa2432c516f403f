"""
Energy and Force Module
Mechanical and electrostatic energies, the electrostatic force density and its interface self-checks
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from app.analytics.geometry import DeflectionProfile, PhysicalParams, coefficient_sensitivities
from app.analytics.hermite import HermiteSpace
from app.analytics.fem2d import evaluate_at_quadrature
from app.analytics.transmission import (
    PotentialField,
    TraceData,
    TransmissionSolver,
    electrostatic_energy,
)
from app.errors import ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForceProfile:
    """Force density g(u) at the trace samples, split into its three summands"""

    x: np.ndarray
    edges: np.ndarray
    interface_tangential: np.ndarray
    interface_normal: np.ndarray
    top: np.ndarray

    @property
    def g(self) -> np.ndarray:
        return self.interface_tangential + self.interface_normal + self.top

    def to_rows(self) -> Dict[str, np.ndarray]:
        return {
            "x": self.x,
            "g": self.g,
            "interface_tangential": self.interface_tangential,
            "interface_normal": self.interface_normal,
            "top": self.top,
        }


@dataclass(frozen=True)
class EnergyReport:
    mechanical: float
    electrostatic: float
    penalties: Dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.mechanical + self.electrostatic + sum(self.penalties.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "E_m": self.mechanical,
            "E_e": self.electrostatic,
            "penalties": dict(self.penalties),
            "E_total": self.total,
        }


@dataclass(frozen=True)
class JumpResiduals:
    """Interface jumps of F = d_x psi + u' d_z psi and G = -u' d_x psi + d_z psi"""

    jump_F: float
    jump_sigma_G: float
    jump_sigma_FG: float
    identity_F: np.ndarray
    identity_FG: np.ndarray
    identity_G: np.ndarray

    @property
    def identity_norms(self) -> Dict[str, float]:
        return {
            "sigma_F2": float(np.max(np.abs(self.identity_F), initial=0.0)),
            "sigma_FG": float(np.max(np.abs(self.identity_FG), initial=0.0)),
            "sigma_G2": float(np.max(np.abs(self.identity_G), initial=0.0)),
        }


def _tangential_normal(gradient: np.ndarray, du: np.ndarray):
    F = gradient[:, 0] + du * gradient[:, 1]
    G = -du * gradient[:, 0] + gradient[:, 1]
    return F, G


def _sample_edges(traces: TraceData, params: PhysicalParams) -> np.ndarray:
    return np.linspace(-params.L, params.L, traces.x.size + 1)


def mechanical_energy(u: DeflectionProfile, params: PhysicalParams) -> float:
    """
    E_m = beta/2 ||u''||^2 + (tau/2 + a/4 ||u'||^2) ||u'||^2

    Exact for the cubic Hermite representation (closed-form element matrices).
    """
    c = u.coefficients
    bending = float(c @ (u.space.bending_matrix @ c))
    stretching = float(c @ (u.space.stretching_matrix @ c))
    return 0.5 * params.beta * bending + (0.5 * params.tau + 0.25 * params.a * stretching) * stretching


def mechanical_gradient(u: DeflectionProfile, params: PhysicalParams) -> np.ndarray:
    """Coefficient gradient of E_m: (beta K_b + (tau + a ||u'||^2) K_s) c"""
    c = u.coefficients
    ks_c = u.space.stretching_matrix @ c
    stretching = float(c @ ks_c)
    return params.beta * (u.space.bending_matrix @ c) + (params.tau + params.a * stretching) * ks_c


def mechanical_hessian(u: DeflectionProfile, params: PhysicalParams) -> np.ndarray:
    """Dense Hessian of E_m in the Hermite coefficients"""
    c = u.coefficients
    kb = u.space.bending_matrix.toarray()
    ks = u.space.stretching_matrix.toarray()
    ks_c = ks @ c
    return params.beta * kb + (params.tau + params.a * float(c @ ks_c)) * ks + 2.0 * params.a * np.outer(ks_c, ks_c)


def electrostatic_force(traces: TraceData, params: PhysicalParams) -> ForceProfile:
    """
    Pointwise force density from upper-side traces

    g = -[[sigma]] F_2^2 / (2(1+u'^2)) - [[sigma]] sigma2 G_2^2 / (2 sigma1 (1+u'^2)) + sigma2/2 |grad psi_2|^2 on the top,
    with F_2, G_2 the tangential and normal combinations of grad psi_2 on the interface.
    """
    du = traces.du
    F2, G2 = _tangential_normal(traces.interface_upper, du)
    stretch = 1.0 + du**2
    jump = params.sigma_jump
    return ForceProfile(
        x=traces.x,
        edges=_sample_edges(traces, params),
        interface_tangential=-jump * F2**2 / (2.0 * stretch),
        interface_normal=-jump * params.sigma2 * G2**2 / (2.0 * params.sigma1 * stretch),
        top=0.5 * params.sigma2 * np.sum(traces.top**2, axis=1),
    )


def jump_residuals(traces: TraceData, params: PhysicalParams) -> JumpResiduals:
    """
    Discrete interface jumps and the residuals of the quadratic jump identities

    Identities: [[sigma F^2]] = [[sigma]] F_2^2, [[sigma F G]] = 0, [[sigma G^2]] = [[1/sigma]] sigma2^2 G_2^2.
    Jump norms are L2 in x with the sample cells as quadrature.
    """
    F1, G1 = _tangential_normal(traces.interface_lower, traces.du)
    F2, G2 = _tangential_normal(traces.interface_upper, traces.du)
    s1, s2 = params.sigma1, params.sigma2
    width = 2.0 * params.L / traces.x.size

    def l2(values):
        return float(np.sqrt(width * np.sum(values**2)))

    identity_F = (s1 * F1**2 - s2 * F2**2) - params.sigma_jump * F2**2
    identity_FG = s1 * F1 * G1 - s2 * F2 * G2
    identity_G = (s1 * G1**2 - s2 * G2**2) - (1.0 / s1 - 1.0 / s2) * s2**2 * G2**2
    return JumpResiduals(
        jump_F=l2(F1 - F2),
        jump_sigma_G=l2(s1 * G1 - s2 * G2),
        jump_sigma_FG=l2(identity_FG),
        identity_F=identity_F,
        identity_FG=identity_FG,
        identity_G=identity_G,
    )


def two_sided_force(traces: TraceData, params: PhysicalParams):
    """
    Force density before the jump identities are used, from two-sided traces

    -1/2 [[sigma (d_x psi)^2 - sigma (d_z psi)^2]] - u' [[sigma d_x psi d_z psi]] + sigma2/2 |grad psi_2|^2 on the top.

    Returns:
        (values, bound) where |values - g| <= bound holds pointwise in exact arithmetic
    """
    du = traces.du
    lower, upper = traces.interface_lower, traces.interface_upper
    s1, s2 = params.sigma1, params.sigma2

    def jump(f):
        return s1 * f(lower) - s2 * f(upper)

    values = (-0.5 * jump(lambda g: g[:, 0] ** 2 - g[:, 1] ** 2)
              - du * jump(lambda g: g[:, 0] * g[:, 1])
              + 0.5 * s2 * np.sum(traces.top**2, axis=1))
    residuals = jump_residuals(traces, params)
    bound = (np.abs(residuals.identity_F) + 2.0 * np.abs(du) * np.abs(residuals.identity_FG)
             + np.abs(residuals.identity_G)) / (2.0 * (1.0 + du**2))
    return values, bound


def _force_quadrature(force: ForceProfile, space: HermiteSpace):
    """Gauss points splitting at sample edges and Hermite nodes, with g at each point"""
    breaks = np.union1d(force.edges, space.x_nodes)
    gauss, weights = np.polynomial.legendre.leggauss(3)
    left, width = breaks[:-1, None], np.diff(breaks)[:, None]
    xq = (left + 0.5 * width * (gauss[None, :] + 1.0)).ravel()
    wq = (0.5 * width * weights[None, :]).ravel()
    cell = np.clip(np.searchsorted(force.edges, xq, side="right") - 1, 0, force.x.size - 1)
    return xq, wq, force.g[cell]


def force_load_vector(force: ForceProfile, space: HermiteSpace) -> np.ndarray:
    """
    Load vector of the integral of g theta against every Hermite basis function

    g is piecewise constant on its sample cells; the rule splits at the union of sample
    edges and Hermite nodes, so each piece integrates a cubic exactly.
    """
    xq, wq, g = _force_quadrature(force, space)
    return space.basis_matrix(xq).T @ (wq * g)


def force_pairing_magnitude(force: ForceProfile, space: HermiteSpace, theta: np.ndarray) -> float:
    """Integral of |g| |theta|, the size scale of the pairing of g with theta"""
    xq, wq, g = _force_quadrature(force, space)
    return float(np.sum(wq * np.abs(g) * np.abs(space.evaluate(theta, xq))))


def discrete_shape_gradient(phi: PotentialField, space: Optional[HermiteSpace] = None) -> np.ndarray:
    """
    Exact derivative of the discrete electrostatic energy with respect to the Hermite coefficients

    dE_e/dc_j = -1/2 integral of grad(psi~) . (dA/dc_j) grad(psi~). The Dirichlet values
    zeta(z + 1) do not depend on u, so the Galerkin term drops out.
    """
    if phi.boundary.mode != "model_hu":
        raise ParameterError("Discrete shape gradient requires model boundary data")
    space = space if space is not None else phi.deflection.space
    rule = phi.mesh.quadrature
    _, gradient = evaluate_at_quadrature(phi.mesh, phi.values)
    dA_du, dA_ddu = coefficient_sensitivities(phi.params, phi.coefficients)
    a_u = np.einsum("cqi,cqij,cqj->cq", gradient, dA_du, gradient) * rule.weights
    a_du = np.einsum("cqi,cqij,cqj->cq", gradient, dA_ddu, gradient) * rule.weights
    xq = rule.x.ravel()
    return -0.5 * (space.basis_matrix(xq, 0).T @ a_u.ravel() + space.basis_matrix(xq, 1).T @ a_du.ravel())


def total_energy(u: DeflectionProfile, params: PhysicalParams, solver: TransmissionSolver,
                 penalties: Optional[Dict[str, float]] = None) -> EnergyReport:
    """E(u) = E_m(u) + E_e(u) (+ penalties); one potential solve"""
    return EnergyReport(
        mechanical=mechanical_energy(u, params),
        electrostatic=solver.energy(u),
        penalties=dict(penalties or {}),
    )


class EnergyCalculator:
    """
    Production-grade energy calculator for a deflected device
    Bundles the transmission solver with the mechanical model; caches the last solved state
    """

    def __init__(self, params: PhysicalParams, solver: TransmissionSolver):
        """
        Initialize calculator

        Args:
            params: physical constants
            solver: transmission solver on a mesh matching params
        """
        if solver.params != params:
            raise ParameterError("Solver was built for different physical parameters")
        self.params = params
        self.solver = solver
        self._last: Optional[tuple] = None

    def potential(self, u: DeflectionProfile) -> PotentialField:
        if self._last is not None and self._last[0] is u:
            return self._last[1]
        phi = self.solver.solve(u)
        self._last = (u, phi)
        return phi

    def calculate_mechanical_energy(self, u: DeflectionProfile) -> float:
        return mechanical_energy(u, self.params)

    def calculate_electrostatic_energy(self, u: DeflectionProfile) -> float:
        return electrostatic_energy(self.potential(u))

    def calculate_force(self, u: DeflectionProfile) -> ForceProfile:
        return electrostatic_force(self.solver.traces(self.potential(u)), self.params)

    def calculate_gradient(self, u: DeflectionProfile, method: str = "discrete") -> np.ndarray:
        """
        Coefficient gradient of E_m + E_e

        Args:
            u: current deflection
            method: "discrete" (exact derivative of the evaluated energy) or "traces" (integral of g theta)
        """
        if method == "discrete":
            electric = discrete_shape_gradient(self.potential(u), u.space)
        elif method == "traces":
            electric = force_load_vector(self.calculate_force(u), u.space)
        else:
            raise ParameterError(f"Unknown gradient method {method!r}")
        return mechanical_gradient(u, self.params) + electric

    def evaluate(self, u: DeflectionProfile, penalties: Optional[Dict[str, float]] = None) -> EnergyReport:
        return EnergyReport(
            mechanical=self.calculate_mechanical_energy(u),
            electrostatic=self.calculate_electrostatic_energy(u),
            penalties=dict(penalties or {}),
        )

    def get_comprehensive_analysis(self, u: DeflectionProfile) -> Dict[str, Any]:
        """Energies, force statistics and interface checks for one deflection"""
        phi = self.potential(u)
        traces = self.solver.traces(phi)
        force = electrostatic_force(traces, self.params)
        report = self.evaluate(u)
        two_sided, bound = two_sided_force(traces, self.params)
        residuals = jump_residuals(traces, self.params)
        return {
            "energy": report.to_dict(),
            "solver": {"residual": phi.residual, "iterations": phi.iterations, "method": phi.info.method},
            "force": {
                "min_g": float(np.min(force.g)),
                "max_g": float(np.max(force.g)),
                "integral_g": float(np.sum(force.g) * 2.0 * self.params.L / force.x.size),
            },
            "jumps": {
                "F": residuals.jump_F,
                "sigma_G": residuals.jump_sigma_G,
                "sigma_FG": residuals.jump_sigma_FG,
                **residuals.identity_norms,
            },
            "two_sided_consistency": {
                "max_difference": float(np.max(np.abs(two_sided - force.g))),
                "max_bound": float(np.max(bound)),
            },
            "top_tangential_max": float(np.max(np.abs(traces.top_tangential))),
        }
