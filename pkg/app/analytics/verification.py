"""
Verification probes
Finite-difference shape-derivative checks, manufactured solutions, monotonicity, continuity and interface-jump studies
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.analytics import catalogue
from app.analytics.energy_force import (
    discrete_shape_gradient,
    electrostatic_force,
    force_load_vector,
    force_pairing_magnitude,
    jump_residuals,
    two_sided_force,
)
from app.analytics.fem2d import build_mesh
from app.analytics.geometry import BoundaryData, DeflectionProfile, PhysicalParams
from app.analytics.transmission import (
    TransmissionSolver,
    electrostatic_energy,
    extract_traces,
    field_distance,
    solve_potential,
)
from app.errors import DegenerateGeometryError, InadmissibleDeflectionError, InadmissiblePerturbationError, ParameterError

logger = logging.getLogger(__name__)

PROBES = ("derivative", "mms", "monotonicity", "continuity", "jumps")
MIN_DERIVATIVE_RESOLUTION = (16, 8, 8)
DEFAULT_STEPS = (1e-2, 5e-3, 2.5e-3)
# Pairings below this fraction of the integral of |g| |theta| are cancellation noise
PAIRING_NOISE_FRACTION = 1e-6


@dataclass(frozen=True)
class DerivativeReport:
    """Finite-difference quotients of E_e against the analytic derivative"""

    direction: str
    steps: Tuple[float, ...]
    quotients: Tuple[float, ...]
    extrapolants: Tuple[float, ...]
    extrapolated: float
    analytic: float
    discrete: float
    mismatch: float
    mismatch_discrete: float
    passed: bool
    reason: str = ""

    def to_row(self) -> Dict[str, Any]:
        return {
            "direction": self.direction,
            "extrapolated": self.extrapolated,
            "analytic": self.analytic,
            "discrete": self.discrete,
            "mismatch": self.mismatch,
            "mismatch_discrete": self.mismatch_discrete,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class ProbeResult:
    name: str
    passed: bool
    summary: Dict[str, Any]
    rows: List[Dict[str, Any]] = field(default_factory=list)


def _check_steps(steps: Sequence[float]) -> Tuple[float, ...]:
    steps = tuple(float(t) for t in steps)
    if len(steps) < 2 or any(t <= 0 for t in steps) or any(b >= a for a, b in zip(steps, steps[1:])):
        raise ParameterError("Finite-difference steps must be positive and strictly decreasing")
    return steps


def richardson(values: Sequence[float], steps: Sequence[float], order: int) -> Tuple[float, ...]:
    """
    Repeated Richardson extrapolation of a quotient with error expansion in powers of t^order

    Steps are expected to form a geometric sequence. Returns the last entry of every
    tableau column; the final entry is the extrapolated limit.
    """
    column = list(values)
    ratios = [steps[i] / steps[i + 1] for i in range(len(steps) - 1)]
    extrapolants = [column[-1]]
    power = order
    while len(column) > 1:
        column = [(ratios[i] ** power * column[i + 1] - column[i]) / (ratios[i] ** power - 1.0)
                  for i in range(len(column) - 1)]
        extrapolants.append(column[-1])
        power += order
    return tuple(extrapolants)


def _shifted(u: DeflectionProfile, theta: np.ndarray, t: float) -> DeflectionProfile:
    try:
        return u.with_coefficients(u.coefficients + t * theta)
    except InadmissibleDeflectionError as exc:
        raise InadmissiblePerturbationError(f"Perturbation at t={t:g} is inadmissible: {exc}", step=t) from exc


def _energy(solver: TransmissionSolver, u: DeflectionProfile, t: float) -> float:
    try:
        return solver.energy(u)
    except DegenerateGeometryError as exc:
        raise InadmissiblePerturbationError(f"Perturbation at t={t:g} is degenerate: {exc}", step=t) from exc


def _resolution_ok(solver: TransmissionSolver) -> bool:
    mesh = solver.mesh
    return all(have >= need for have, need in zip((mesh.nx, mesh.nz1, mesh.nz2), MIN_DERIVATIVE_RESOLUTION))


def _analytic_pairing(solver: TransmissionSolver, u: DeflectionProfile,
                     theta: np.ndarray) -> Tuple[float, float, float]:
    """Integral of g theta, the discrete gradient along theta and the integral of |g| |theta|"""
    phi = solver.solve(u)
    force = electrostatic_force(solver.traces(phi), solver.params)
    analytic = float(force_load_vector(force, u.space) @ theta)
    discrete = float(discrete_shape_gradient(phi, u.space) @ theta)
    return analytic, discrete, force_pairing_magnitude(force, u.space, theta)


def _relative(value: float, reference: float, scale: float, floor: float) -> float:
    return abs(value - reference) / max(abs(reference), PAIRING_NOISE_FRACTION * scale, floor)


def fd_directional_derivative(u: DeflectionProfile, theta: np.ndarray, solver: TransmissionSolver,
                              steps: Sequence[float] = DEFAULT_STEPS, name: str = "",
                              tol: float = 1e-2, floor: float = 1e-12) -> DerivativeReport:
    """
    Central differences of E_e along theta against the integral of g(u) theta

    Args:
        u: admissible base deflection
        theta: Hermite coefficient direction with zero constrained DOFs
        solver: transmission solver (model boundary data)
        steps: strictly decreasing step sizes
        name: direction label for the report
        tol: relative mismatch accepted
        floor: denominator floor of the relative mismatch

    Raises:
        InadmissiblePerturbationError: u +- t theta leaves the admissible set
    """
    steps = _check_steps(steps)
    theta = np.asarray(theta, dtype=float)
    if not _resolution_ok(solver):
        logger.warning("Derivative probe %s: mesh below minimum resolution", name)
        nan = float("nan")
        return DerivativeReport(name, steps, (), (), nan, nan, nan, nan, nan, False,
                                "mesh below minimum resolution")
    if not np.any(theta):
        return DerivativeReport(name, steps, tuple(0.0 for _ in steps), (0.0,), 0.0, 0.0, 0.0, 0.0, 0.0, True)

    quotients = []
    for t in steps:
        plus = _energy(solver, _shifted(u, theta, t), t)
        minus = _energy(solver, _shifted(u, theta, -t), t)
        quotients.append((plus - minus) / (2.0 * t))
    extrapolants = richardson(quotients, steps, order=2)
    extrapolated = extrapolants[-1]
    analytic, discrete, scale = _analytic_pairing(solver, u, theta)

    mismatch = _relative(extrapolated, analytic, scale, floor)
    mismatch_discrete = _relative(extrapolated, discrete, scale, floor)
    passed = bool(mismatch <= tol)
    if not passed:
        logger.warning("Derivative probe %s: mismatch %.3e exceeds %.1e", name, mismatch, tol)
    return DerivativeReport(name, steps, tuple(quotients), extrapolants, extrapolated, analytic, discrete,
                            mismatch, mismatch_discrete, passed)


def directional_form(u: DeflectionProfile, w: DeflectionProfile, solver: TransmissionSolver,
                     steps: Sequence[float] = DEFAULT_STEPS, tol: float = 1e-2,
                     floor: float = 1e-12) -> DerivativeReport:
    """One-sided quotient (E_e(u + t(w - u)) - E_e(u))/t as t -> 0+ against the integral of g(u)(w - u)"""
    steps = _check_steps(steps)
    theta = w.coefficients - u.coefficients
    if not _resolution_ok(solver):
        nan = float("nan")
        return DerivativeReport("one_sided", steps, (), (), nan, nan, nan, nan, nan, False,
                                "mesh below minimum resolution")
    base = _energy(solver, u, 0.0)
    quotients = [(_energy(solver, _shifted(u, theta, t), t) - base) / t for t in steps]
    extrapolants = richardson(quotients, steps, order=1)
    analytic, discrete, scale = _analytic_pairing(solver, u, theta)
    mismatch = _relative(extrapolants[-1], analytic, scale, floor)
    mismatch_discrete = _relative(extrapolants[-1], discrete, scale, floor)
    return DerivativeReport("one_sided", steps, tuple(quotients), extrapolants, extrapolants[-1], analytic,
                            discrete, mismatch, mismatch_discrete, bool(mismatch <= tol))


@dataclass(frozen=True)
class ManufacturedSolution:
    """Harmonic transmission solution with a flat interface, continuous flux across z = 0"""

    params: PhysicalParams
    k: float
    amplitude: float = 1.0

    def value(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        p, k, A = self.params, self.k, self.amplitude
        lower = A * np.sinh(k * (z + p.H))
        upper = A * np.sinh(k * p.H) * np.cosh(k * z) + p.sigma1 / p.sigma2 * A * np.cosh(k * p.H) * np.sinh(k * z)
        return np.sin(k * x) * np.where(z <= 0.0, lower, upper)

    def gradient(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        p, k, A = self.params, self.k, self.amplitude
        lower = A * np.sinh(k * (z + p.H))
        upper = A * np.sinh(k * p.H) * np.cosh(k * z) + p.sigma1 / p.sigma2 * A * np.cosh(k * p.H) * np.sinh(k * z)
        d_lower = A * k * np.cosh(k * (z + p.H))
        d_upper = A * k * np.sinh(k * p.H) * np.sinh(k * z) + p.sigma1 / p.sigma2 * A * k * np.cosh(k * p.H) * np.cosh(k * z)
        profile = np.where(z <= 0.0, lower, upper)
        d_profile = np.where(z <= 0.0, d_lower, d_upper)
        return np.stack([k * np.cos(k * x) * profile, np.sin(k * x) * d_profile], axis=-1)

    def boundary(self) -> BoundaryData:
        return BoundaryData.custom_trace(self.params, self.value)


def _mms_errors(phi, exact: ManufacturedSolution) -> Tuple[float, float]:
    """L2 and H1-seminorm errors with a 3x3 Gauss rule per cell"""
    mesh = phi.mesh
    gauss, weights = np.polynomial.legendre.leggauss(3)
    xi, eta = np.meshgrid(0.5 * (gauss + 1.0), 0.5 * (gauss + 1.0), indexing="ij")
    xi, eta = xi.ravel(), eta.ravel()
    w = np.outer(0.5 * weights, 0.5 * weights).ravel()

    v = phi.values[mesh.cells]
    shape = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
    d_xi = np.column_stack([-(1 - eta), 1 - eta, eta, -eta])
    d_eta = np.column_stack([-(1 - xi), -xi, xi, 1 - xi])

    corner = mesh.nodes[mesh.cells[:, 0]]
    hx, hz = mesh.cell_widths[:, None], mesh.cell_heights[:, None]
    x = corner[:, 0:1] + hx * xi[None, :]
    z = corner[:, 1:2] + hz * eta[None, :]
    approx = v @ shape.T
    grad_x = (v @ d_xi.T) / hx
    grad_z = (v @ d_eta.T) / hz

    exact_values = exact.value(x, z)
    exact_grad = exact.gradient(x, z)
    area_w = mesh.cell_areas[:, None] * w[None, :]
    l2 = np.sqrt(np.sum(area_w * (approx - exact_values) ** 2))
    h1 = np.sqrt(np.sum(area_w * ((grad_x - exact_grad[..., 0]) ** 2 + (grad_z - exact_grad[..., 1]) ** 2)))
    return float(l2), float(h1)


def observed_orders(errors: Sequence[float], sizes: Sequence[float]) -> List[float]:
    return [float(np.log(errors[i] / errors[i + 1]) / np.log(sizes[i] / sizes[i + 1]))
            for i in range(len(errors) - 1)]


def mms_convergence(params: PhysicalParams, ladder: Sequence[int] = (16, 32, 64, 128),
                    k: Optional[float] = None, amplitude: float = 1.0,
                    method: str = "cg") -> ProbeResult:
    """
    Manufactured-solution study on meshes nx = N, nz1 = nz2 = N/2

    Passes when every observed L2 order is at least 1.9 and every H1 order at least 0.9.
    """
    if len(ladder) < 2:
        raise ParameterError("Convergence ladder needs at least two meshes")
    exact = ManufacturedSolution(params, np.pi / params.L if k is None else k, amplitude)
    rows = []
    for N in ladder:
        mesh = build_mesh(params.L, params.H, params.d, N, max(N // 2, 1), max(N // 2, 1))
        flat = DeflectionProfile.flat(params, N)
        bdata = exact.boundary()
        phi = solve_potential(params, flat, mesh, bdata, method=method)
        l2, h1 = _mms_errors(phi, exact)
        traces = extract_traces(phi)
        flux = params.sigma2 * traces.interface_upper[:, 1] - params.sigma1 * traces.interface_lower[:, 1]
        flux_jump = float(np.sqrt(2.0 * params.L / N * np.sum(flux**2)))
        rows.append({"N": N, "h": 2.0 * params.L / N, "l2_error": l2, "h1_error": h1, "flux_jump": flux_jump})
        logger.debug("MMS N=%d: L2 %.3e, H1 %.3e", N, l2, h1)

    sizes = [row["h"] for row in rows]
    l2_orders = observed_orders([row["l2_error"] for row in rows], sizes)
    h1_orders = observed_orders([row["h1_error"] for row in rows], sizes)
    passed = min(l2_orders) >= 1.9 and min(h1_orders) >= 0.9
    if not passed:
        logger.warning("MMS orders below target: L2 %s, H1 %s", l2_orders, h1_orders)
    return ProbeResult("mms", bool(passed), {"l2_orders": l2_orders, "h1_orders": h1_orders}, rows)


def monotonicity_probe(pairs: Sequence[Tuple[DeflectionProfile, DeflectionProfile]],
                       solver: TransmissionSolver, tol: float = 1e-10) -> ProbeResult:
    """E_e(u0) <= E_e(u1) + tol for every ordered pair u0 <= u1 (requires sigma2 > sigma1)"""
    if not solver.params.sigma_jump < 0:
        raise ParameterError("Monotonicity holds for sigma2 > sigma1 only")
    rows = []
    for index, (u0, u1) in enumerate(pairs):
        if np.any(u0.u_values > u1.u_values):
            raise ParameterError(f"Pair {index} is not ordered nodally")
        e0, e1 = solver.energy(u0), solver.energy(u1)
        rows.append({"pair": index, "E_e_lower": e0, "E_e_upper": e1, "passed": bool(e0 <= e1 + tol)})
    failures = [row["pair"] for row in rows if not row["passed"]]
    if failures:
        logger.warning("Monotonicity violated for pairs %s", failures)
    return ProbeResult("monotonicity", not failures, {"pairs": len(rows), "failures": failures}, rows)


def _lp(values: np.ndarray, width: float, p: float) -> float:
    return float((width * np.sum(np.abs(values) ** p)) ** (1.0 / p))


def continuity_probe(u: DeflectionProfile, bump: np.ndarray, solver: TransmissionSolver,
                     ns: Sequence[int] = (1, 2, 4, 8, 16), p_values: Sequence[float] = (1, 2, 4),
                     max_slope: float = -0.9, noise: float = 1e-13) -> ProbeResult:
    """
    Distances between the states u_n = u + bump/n and u

    Columns: energy difference, L_p distances of the interface and top traces and of g,
    and the H1 distance of the transformed fields. Each column must fall with a log-log
    slope at most max_slope; columns that stay below noise pass trivially.
    """
    base_phi = solver.solve(u)
    base_traces = solver.traces(base_phi)
    base_force = electrostatic_force(base_traces, solver.params)
    base_energy = electrostatic_energy(base_phi)
    width = 2.0 * solver.params.L / base_traces.x.size

    rows = []
    for n in ns:
        un = u.with_coefficients(u.coefficients + np.asarray(bump) / n)
        phi = solver.solve(un)
        traces = solver.traces(phi)
        force = electrostatic_force(traces, solver.params)
        row = {"n": n, "energy": abs(electrostatic_energy(phi) - base_energy),
               "field_h1": field_distance(phi, base_phi)}
        for p in p_values:
            row[f"interface_L{p:g}"] = _lp(np.linalg.norm(traces.interface_upper - base_traces.interface_upper, axis=1), width, p)
            row[f"top_L{p:g}"] = _lp(np.linalg.norm(traces.top - base_traces.top, axis=1), width, p)
            row[f"force_L{p:g}"] = _lp(force.g - base_force.g, width, p)
        rows.append(row)

    slopes = {}
    log_n = np.log(np.asarray(ns, dtype=float))
    for column in rows[0]:
        if column == "n":
            continue
        values = np.array([row[column] for row in rows])
        if np.all(values <= noise):
            slopes[column] = None
            continue
        slopes[column] = float(np.polyfit(log_n, np.log(np.maximum(values, noise)), 1)[0])
    failures = [c for c, s in slopes.items() if s is not None and s > max_slope]
    if failures:
        logger.warning("Continuity probe: slopes above %.2f for %s", max_slope, failures)
    return ProbeResult("continuity", not failures, {"slopes": slopes, "failures": failures}, rows)


def jump_study(params: PhysicalParams, u_factory: Callable[[int], DeflectionProfile],
               levels: Sequence[int] = (16, 32), min_order: float = 0.9,
               trace_method: str = "extrapolated") -> ProbeResult:
    """
    Interface jump residuals under refinement and the agreement of the two force forms

    Meshes nx = N, nz1 = nz2 = N/2; u_factory(N) returns the deflection on N elements.
    """
    rows = []
    consistent = True
    for N in levels:
        solver = TransmissionSolver.for_params(params, N, max(N // 2, 1), max(N // 2, 1), trace_method=trace_method)
        traces = solver.traces(solver.solve(u_factory(N)))
        residuals = jump_residuals(traces, params)
        two_sided, bound = two_sided_force(traces, params)
        g = electrostatic_force(traces, params).g
        gap = float(np.max(np.abs(two_sided - g) - bound))
        consistent = consistent and gap <= 1e-10 * max(1.0, float(np.max(np.abs(g))))
        rows.append({"N": N, "jump_F": residuals.jump_F, "jump_sigma_G": residuals.jump_sigma_G,
                     "jump_sigma_FG": residuals.jump_sigma_FG, "two_sided_excess": gap})

    sizes = [2.0 * params.L / row["N"] for row in rows]
    orders = {key: observed_orders([row[key] for row in rows], sizes) for key in ("jump_F", "jump_sigma_G")}
    passed = consistent and all(min(values) >= min_order for values in orders.values())
    return ProbeResult("jumps", bool(passed), {"orders": orders, "two_sided_consistent": bool(consistent)}, rows)


@dataclass(frozen=True)
class VerifyConfig:
    """Probe selection and the meshes, directions and tolerances each probe uses"""

    probes: Tuple[str, ...] = PROBES
    nx: int = 128
    nz1: int = 64
    nz2: int = 64
    steps: Tuple[float, ...] = DEFAULT_STEPS
    derivative_tol: float = 1e-2
    directions: Tuple[str, ...] = catalogue.DIRECTION_NAMES
    direction_amplitude: float = -0.05
    curved_shape: str = "cosine"
    curved_amplitude: float = -0.1
    mms_ladder: Tuple[int, ...] = (16, 32, 64, 128)
    monotone_pairs: int = 20
    monotone_nx: int = 32
    continuity_ns: Tuple[int, ...] = (1, 2, 4, 8, 16)
    continuity_shape: str = "quartic"
    continuity_amplitude: float = -0.05
    jump_levels: Tuple[int, ...] = (16, 32, 64)
    seed: int = 0

    def __post_init__(self):
        unknown = sorted(set(self.probes) - set(PROBES))
        if unknown:
            raise ParameterError(f"Unknown probe(s): {', '.join(unknown)}")

    @classmethod
    def from_dict(cls, params: Optional[Dict[str, Any]] = None) -> "VerifyConfig":
        default_params = asdict(cls())
        params = params or {}
        unknown = sorted(set(params) - set(default_params))
        if unknown:
            raise ParameterError(f"Unknown verify option(s): {', '.join(unknown)}")
        merged = {**default_params, **params}
        for key, value in merged.items():
            if isinstance(value, list):
                merged[key] = tuple(value)
        return cls(**merged)


def _derivative_probe(params: PhysicalParams, cfg: VerifyConfig) -> ProbeResult:
    solver = TransmissionSolver.for_params(params, cfg.nx, cfg.nz1, cfg.nz2)
    states = [("flat", DeflectionProfile.flat(params, cfg.nx)),
              (cfg.curved_shape, catalogue.build_deflection(params, cfg.curved_shape, cfg.curved_amplitude, cfg.nx))]
    rows, passed, reasons = [], True, set()
    for state_name, u in states:
        for name in cfg.directions:
            theta = catalogue.direction(name, cfg.direction_amplitude, u.space)
            report = fd_directional_derivative(u, theta, solver, cfg.steps, name=name, tol=cfg.derivative_tol)
            rows.append({"state": state_name, **report.to_row()})
            passed = passed and report.passed
            if report.reason:
                reasons.add(report.reason)
    mismatches = [row["mismatch"] for row in rows]
    summary = {"max_mismatch": float(np.max(mismatches)) if rows else 0.0, "reasons": sorted(reasons)}
    return ProbeResult("derivative", bool(passed), summary, rows)


def _monotonicity_probe(params: PhysicalParams, cfg: VerifyConfig) -> ProbeResult:
    solver = TransmissionSolver.for_params(params, cfg.monotone_nx, cfg.monotone_nx // 2, cfg.monotone_nx // 2)
    pairs = catalogue.ordered_pair_family(params, cfg.monotone_pairs, cfg.monotone_nx, seed=cfg.seed)
    return monotonicity_probe(pairs, solver)


def _continuity_probe(params: PhysicalParams, cfg: VerifyConfig) -> ProbeResult:
    nx = cfg.monotone_nx
    solver = TransmissionSolver.for_params(params, nx, nx // 2, nx // 2)
    u = catalogue.build_deflection(params, cfg.curved_shape, cfg.curved_amplitude, nx)
    bump = catalogue.direction(cfg.continuity_shape, cfg.continuity_amplitude, u.space)
    return continuity_probe(u, bump, solver, cfg.continuity_ns)


def _jump_probe(params: PhysicalParams, cfg: VerifyConfig) -> ProbeResult:
    def factory(N):
        return catalogue.build_deflection(params, cfg.curved_shape, cfg.curved_amplitude, N)
    return jump_study(params, factory, cfg.jump_levels)


def run_probe_suite(params: PhysicalParams, cfg: VerifyConfig, serial: bool = False) -> Dict[str, ProbeResult]:
    """
    Run the selected probes, concurrently unless serial

    Returns:
        Results keyed by probe name, in selection order
    """
    runners = {
        "derivative": lambda: _derivative_probe(params, cfg),
        "mms": lambda: mms_convergence(params, cfg.mms_ladder),
        "monotonicity": lambda: _monotonicity_probe(params, cfg),
        "continuity": lambda: _continuity_probe(params, cfg),
        "jumps": lambda: _jump_probe(params, cfg),
    }
    selected = list(dict.fromkeys(cfg.probes))
    if not selected:
        logger.warning("No verification probes selected")
        return {}
    if serial or len(selected) == 1:
        return {name: runners[name]() for name in selected}
    with ThreadPoolExecutor(max_workers=len(selected)) as pool:
        futures = {name: pool.submit(runners[name]) for name in selected}
        return {name: futures[name].result() for name in selected}
