"""
Device geometry and reference-domain transformation
Physical constants, plate deflections, boundary potentials and the coefficient
fields of the transmission problem pulled back to the flat reference rectangle
"""

from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from app.analytics.hermite import BC_MODES, HermiteSpace
from app.errors import DegenerateGeometryError, InadmissibleDeflectionError, ParameterError

DEFAULT_GAP_FRACTION = 1e-3
LOWER, UPPER = 0, 1


@dataclass(frozen=True)
class PhysicalParams:
    """Scalar model constants of the device"""

    L: float = 1.0
    H: float = 1.0
    d: float = 1.0
    beta: float = 1.0
    tau: float = 0.0
    a: float = 0.0
    sigma1: float = 1.0
    sigma2: float = 2.0
    V: float = 1.0
    m: float = 3.0

    def __post_init__(self):
        for name in ("L", "H", "d", "beta", "sigma1", "sigma2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} must be strictly positive, got {value}")
        for name in ("tau", "a", "V"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ParameterError(f"{name} must be nonnegative, got {value}")
        if not self.m > 2:
            raise ParameterError(f"zeta exponent m must exceed 2, got {self.m}")

    @property
    def sigma_jump(self) -> float:
        """Permittivity jump sigma1 - sigma2 across the interface"""
        return self.sigma1 - self.sigma2

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PhysicalParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"Unknown physical parameter(s): {', '.join(unknown)}")
        return cls(**{key: float(value) for key, value in data.items()})

    def to_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_updates(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)

    def default_gap_floor(self, eps_gap: Optional[float] = None) -> float:
        eps = DEFAULT_GAP_FRACTION * self.H if eps_gap is None else eps_gap
        if not 0 < eps < self.H:
            raise ParameterError(f"eps_gap must lie in (0, H), got {eps}")
        return -self.H + eps


def _readonly(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class DeflectionProfile:
    """
    Plate deflection u in the cubic Hermite representation

    Nodal values and slopes on a uniform grid over [-L, L]; u vanishes at both ends,
    clamped mode also fixes the end slopes to zero.
    """

    x_nodes: np.ndarray
    u_values: np.ndarray
    du_values: np.ndarray
    bc_mode: str = "clamped"
    gap_floor: float = -np.inf

    def __post_init__(self):
        object.__setattr__(self, "x_nodes", _readonly(self.x_nodes))
        object.__setattr__(self, "u_values", _readonly(self.u_values))
        object.__setattr__(self, "du_values", _readonly(self.du_values))

        if self.bc_mode not in BC_MODES:
            raise InadmissibleDeflectionError(f"bc_mode must be one of {BC_MODES}, got {self.bc_mode!r}")
        if not (self.x_nodes.shape == self.u_values.shape == self.du_values.shape):
            raise InadmissibleDeflectionError("x_nodes, u_values and du_values must have equal length")
        if self.x_nodes.size < 3:
            raise InadmissibleDeflectionError("Deflection grid needs at least two elements")
        spacing = np.diff(self.x_nodes)
        if np.any(spacing <= 0) or not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
            raise InadmissibleDeflectionError("Deflection grid must be uniform and increasing")
        if not np.all(np.isfinite(self.u_values)) or not np.all(np.isfinite(self.du_values)):
            raise InadmissibleDeflectionError("Deflection contains non-finite values")
        if self.u_values[0] != 0.0 or self.u_values[-1] != 0.0:
            raise InadmissibleDeflectionError("Deflection must vanish at x = -L and x = L")
        if self.bc_mode == "clamped" and (self.du_values[0] != 0.0 or self.du_values[-1] != 0.0):
            raise InadmissibleDeflectionError("Clamped deflection must have zero slope at x = -L and x = L")
        if np.any(self.u_values < self.gap_floor):
            worst = int(np.argmin(self.u_values))
            raise InadmissibleDeflectionError(
                f"Deflection {self.u_values[worst]:.6g} at x = {self.x_nodes[worst]:.6g} "
                f"is below the gap floor {self.gap_floor:.6g}"
            )

    @classmethod
    def from_function(cls, params: PhysicalParams, nx: int,
                      func: Callable[[np.ndarray], np.ndarray],
                      dfunc: Callable[[np.ndarray], np.ndarray],
                      bc_mode: str = "clamped", eps_gap: Optional[float] = None) -> "DeflectionProfile":
        """Hermite interpolant of a smooth deflection; end values within 1e-9 of zero are snapped"""
        x_nodes = np.linspace(-params.L, params.L, int(nx) + 1)
        u_values = np.asarray(func(x_nodes), dtype=float) * np.ones_like(x_nodes)
        du_values = np.asarray(dfunc(x_nodes), dtype=float) * np.ones_like(x_nodes)
        ends = [0, -1]
        scale = max(1.0, float(np.max(np.abs(u_values))))
        if np.any(np.abs(u_values[ends]) > 1e-9 * scale):
            raise InadmissibleDeflectionError("Deflection function does not vanish at x = -L and x = L")
        u_values[ends] = 0.0
        if bc_mode == "clamped":
            if np.any(np.abs(du_values[ends]) > 1e-9 * scale / params.L):
                raise InadmissibleDeflectionError("Deflection function is not clamped at x = -L and x = L")
            du_values[ends] = 0.0
        return cls(x_nodes, u_values, du_values, bc_mode, params.default_gap_floor(eps_gap))

    @classmethod
    def flat(cls, params: PhysicalParams, nx: int, bc_mode: str = "clamped",
             eps_gap: Optional[float] = None) -> "DeflectionProfile":
        x_nodes = np.linspace(-params.L, params.L, int(nx) + 1)
        zeros = np.zeros_like(x_nodes)
        return cls(x_nodes, zeros, zeros, bc_mode, params.default_gap_floor(eps_gap))

    @cached_property
    def space(self) -> HermiteSpace:
        return HermiteSpace(self.x_nodes, self.bc_mode)

    @property
    def coefficients(self) -> np.ndarray:
        return self.space.pack(self.u_values, self.du_values)

    @property
    def L(self) -> float:
        return float(self.x_nodes[-1])

    def with_coefficients(self, coefficients: np.ndarray) -> "DeflectionProfile":
        u_values, du_values = self.space.unpack(np.asarray(coefficients, dtype=float))
        return DeflectionProfile(self.x_nodes, u_values, du_values, self.bc_mode, self.gap_floor)

    def evaluate(self, x: np.ndarray, derivative: int = 0) -> np.ndarray:
        return self.space.evaluate(self.coefficients, x, derivative)

    def active_nodes(self, tol: float = 1e-12) -> np.ndarray:
        """Interior nodes sitting on the gap floor"""
        active = np.flatnonzero(self.u_values <= self.gap_floor + tol)
        return active[(active > 0) & (active < self.x_nodes.size - 1)]

    def gradient_norm_squared(self) -> float:
        """||u'||^2 in L2(D), exact for the cubic representation"""
        c = self.coefficients
        return float(c @ (self.space.stretching_matrix @ c))


@dataclass(frozen=True)
class BoundaryData:
    """
    Dirichlet data of the potential

    Model mode uses h_u(x, z) = zeta(z - u(x) + 1) with
    zeta(r) = V min{1, (r - 1)^m / d^m} for r > 1 and zeta = 0 otherwise.
    Custom mode carries an arbitrary trace f(x, zbar) given in physical coordinates.
    """

    V: float
    d: float
    m: float = 3.0
    mode: str = "model_hu"
    custom: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in ("model_hu", "custom"):
            raise ParameterError(f"Unknown boundary data mode {self.mode!r}")
        if self.mode == "custom" and self.custom is None:
            raise ParameterError("Custom boundary data needs a trace function")

    @classmethod
    def model(cls, params: PhysicalParams) -> "BoundaryData":
        return cls(V=params.V, d=params.d, m=params.m)

    @classmethod
    def custom_trace(cls, params: PhysicalParams,
                     trace: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "BoundaryData":
        return cls(V=params.V, d=params.d, m=params.m, mode="custom", custom=trace)

    def zeta(self, r: np.ndarray) -> np.ndarray:
        shifted = np.maximum(np.asarray(r, dtype=float) - 1.0, 0.0)
        return self.V * np.minimum(1.0, (shifted / self.d) ** self.m)

    def zeta_prime(self, r: np.ndarray) -> np.ndarray:
        shifted = np.asarray(r, dtype=float) - 1.0
        inside = (shifted > 0) & (shifted < self.d)
        safe = np.where(inside, shifted, 0.0)
        return np.where(inside, self.V * self.m * safe ** (self.m - 1) / self.d ** self.m, 0.0)

    def reference_values(self, params: PhysicalParams, u: DeflectionProfile,
                         x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Dirichlet values of psi o Theta at reference points"""
        if self.mode == "model_hu":
            # h_u o Theta(x, z) = zeta(z + 1) for every admissible u
            return self.zeta(np.asarray(z, dtype=float) + 1.0)
        zbar = map_to_physical(params, u, x, z)
        return np.asarray(self.custom(np.asarray(x, dtype=float), zbar), dtype=float) * np.ones_like(zbar)


@dataclass(frozen=True)
class CoefficientField:
    """Pulled-back permittivity matrix A(u) and Jacobian J_u at quadrature points"""

    A: np.ndarray
    J: np.ndarray
    region: np.ndarray
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    du: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.A)


def _check_reference_points(params: PhysicalParams, x: np.ndarray, z: np.ndarray, slack: float = 1e-12):
    if np.any(z < -params.H - slack) or np.any(z > params.d + slack):
        raise ParameterError(f"Reference z must lie in [-H, d] = [{-params.H}, {params.d}]")
    if np.any(np.abs(x) > params.L + slack):
        raise ParameterError(f"Reference x must lie in [-L, L] = [{-params.L}, {params.L}]")


def map_to_physical(params: PhysicalParams, u: DeflectionProfile,
                    x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """
    Physical height zbar of reference points under Theta_{0,u}

    Lower region: zbar = z + u(x)(z + H)/H, upper region: zbar = z + u(x).
    The interface line z = 0 lands on zbar = u(x).
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    _check_reference_points(params, x, z)
    u_x = u.evaluate(x)
    return np.where(z <= 0.0, z + u_x * (z + params.H) / params.H, z + u_x)


def map_to_reference(params: PhysicalParams, u: DeflectionProfile,
                     x: np.ndarray, zbar: np.ndarray) -> np.ndarray:
    """Inverse of map_to_physical on Omega(u)"""
    x = np.asarray(x, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    u_x = u.evaluate(x)
    lower = (zbar - u_x) * params.H / (params.H + u_x)
    return np.where(zbar <= u_x, lower, zbar - u_x)


def boundary_value(bdata: BoundaryData, u: DeflectionProfile, x: np.ndarray, zbar: np.ndarray) -> np.ndarray:
    """Dirichlet data at physical points; zero on the ground plate and V on the top in model mode"""
    x = np.asarray(x, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    if bdata.mode == "custom":
        return np.asarray(bdata.custom(x, zbar), dtype=float) * np.ones_like(zbar)
    return bdata.zeta(zbar - u.evaluate(x) + 1.0)


def coefficients(params: PhysicalParams, u: DeflectionProfile, x: np.ndarray, z: np.ndarray,
                 region: Optional[np.ndarray] = None) -> CoefficientField:
    """
    Coefficient field A(u) = sigma J (DTheta)^-1 (DTheta)^-T at reference points

    Lower region: sigma1 [[r, -s], [-s, (1 + s^2)/r]] with r = (H + u)/H, s = u'(z + H)/H.
    Upper region: sigma2 [[1, -u'], [-u', 1 + u'^2]].

    Raises:
        DegenerateGeometryError: if H + u <= eps_gap/2 at any point
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    _check_reference_points(params, x, z)
    if region is None:
        region = np.where(z < 0.0, LOWER, UPPER)
    region = np.broadcast_to(np.asarray(region), x.shape)

    u_x = u.evaluate(x)
    du_x = u.evaluate(x, derivative=1)

    gap = params.H + u_x
    eps_gap = u.gap_floor + params.H if np.isfinite(u.gap_floor) else DEFAULT_GAP_FRACTION * params.H
    if np.any(gap <= 0.5 * eps_gap):
        raise DegenerateGeometryError(
            f"Gap H + u = {gap.min():.3e} is at or below eps_gap/2 = {0.5 * eps_gap:.3e}; "
            "the reference transformation is singular",
            min_gap=float(gap.min()),
        )

    lower = region == LOWER
    r = gap / params.H
    s = du_x * (z + params.H) / params.H

    A = np.empty(x.shape + (2, 2))
    A[..., 0, 0] = np.where(lower, params.sigma1 * r, params.sigma2)
    A[..., 0, 1] = np.where(lower, -params.sigma1 * s, -params.sigma2 * du_x)
    A[..., 1, 0] = A[..., 0, 1]
    A[..., 1, 1] = np.where(lower, params.sigma1 * (1.0 + s**2) / r, params.sigma2 * (1.0 + du_x**2))
    J = np.where(lower, r, 1.0)

    return CoefficientField(A=A, J=J, region=np.array(region), x=x, z=z, u=u_x, du=du_x)


def coefficient_sensitivities(params: PhysicalParams, field: CoefficientField) -> Tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of A with respect to the local values u and u'"""
    lower = field.region == LOWER
    r = (params.H + field.u) / params.H
    s = field.du * (field.z + params.H) / params.H
    lever = (field.z + params.H) / params.H

    dA_du = np.zeros(field.A.shape)
    dA_du[..., 0, 0] = np.where(lower, params.sigma1 / params.H, 0.0)
    dA_du[..., 1, 1] = np.where(lower, -params.sigma1 * (1.0 + s**2) / (r**2 * params.H), 0.0)

    dA_ddu = np.zeros(field.A.shape)
    dA_ddu[..., 0, 1] = np.where(lower, -params.sigma1 * lever, -params.sigma2)
    dA_ddu[..., 1, 0] = dA_ddu[..., 0, 1]
    dA_ddu[..., 1, 1] = np.where(lower, 2.0 * params.sigma1 * lever * s / r, 2.0 * params.sigma2 * field.du)
    return dA_du, dA_ddu


def physical_gradient(params: PhysicalParams, u_x: np.ndarray, du_x: np.ndarray, z: np.ndarray,
                      region: np.ndarray, grad_ref: np.ndarray) -> np.ndarray:
    """Map reference gradients of psi o Theta to physical gradients of psi: (DTheta^T)^-1 grad"""
    lower = np.asarray(region) == LOWER
    p = np.where(lower, du_x * (z + params.H) / (params.H + u_x), du_x)
    q = np.where(lower, params.H / (params.H + u_x), 1.0)
    out = np.empty(np.shape(grad_ref))
    out[..., 0] = grad_ref[..., 0] - p * grad_ref[..., 1]
    out[..., 1] = q * grad_ref[..., 1]
    return out


def coefficient_bounds(params: PhysicalParams, u: DeflectionProfile, samples: int = 2049) -> Tuple[float, float]:
    """
    Eigenvalue bounds [c_minus, c_plus] of A(u)

    Both blocks have det(A/sigma) = 1, so the largest eigenvalue of A/sigma is at most its
    trace and the smallest at least the reciprocal of that trace.
    """
    x = np.linspace(-params.L, params.L, samples)
    r = (params.H + u.evaluate(x)) / params.H
    slope = float(np.max(np.abs(u.evaluate(x, derivative=1))))
    trace = max(2.0 + slope**2, float(np.max(r + (1.0 + slope**2) / r)))
    sigma_lo = min(params.sigma1, params.sigma2)
    sigma_hi = max(params.sigma1, params.sigma2)
    return sigma_lo / trace, sigma_hi * trace
