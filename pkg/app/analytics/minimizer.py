"""
Energy Minimization Module
Projected descent for the total energy over the clamped obstacle set, variational inequality residuals and voltage sweeps
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from app.analytics.energy_force import (
    EnergyCalculator,
    EnergyReport,
    electrostatic_force,
    force_load_vector,
    mechanical_hessian,
)
from app.analytics.geometry import DeflectionProfile, PhysicalParams
from app.analytics.hermite import HermiteSpace
from app.analytics.transmission import TransmissionSolver
from app.errors import DegenerateGeometryError, InadmissibleDeflectionError, ParameterError

logger = logging.getLogger(__name__)

OBSTACLE_MODES = ("projection", "penalty")
PRECONDITIONERS = ("mechanical", "identity")
GRADIENTS = ("discrete", "traces")


@dataclass(frozen=True)
class MinimizeConfig:
    """Step-size policy, obstacle handling, coercivity cap and stopping rules"""

    initial_step: float = 1.0
    backtracking: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    obstacle_mode: str = "projection"
    penalty_weight: float = 1e3
    penalty_growth: float = 10.0
    penalty_stages: int = 3
    penalty_offset: float = 0.05
    cap_enabled: bool = False
    cap_value: float = 1.0
    cap_weight: float = 1e3
    vi_tol: float = 1e-6
    step_tol: float = 1e-14
    max_iter: int = 200
    preconditioner: str = "mechanical"
    gradient: str = "discrete"

    def __post_init__(self):
        if not 0 < self.backtracking < 1:
            raise ParameterError(f"backtracking factor must lie in (0, 1), got {self.backtracking}")
        for name in ("initial_step", "armijo", "penalty_weight", "penalty_offset", "cap_weight", "vi_tol", "step_tol"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.penalty_growth < 1:
            raise ParameterError(f"penalty_growth must be at least 1, got {self.penalty_growth}")
        if self.max_iter < 0 or self.max_backtracks < 1 or self.penalty_stages < 1:
            raise ParameterError("Iteration caps must be positive")
        if self.obstacle_mode not in OBSTACLE_MODES:
            raise ParameterError(f"obstacle_mode must be one of {OBSTACLE_MODES}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ParameterError(f"preconditioner must be one of {PRECONDITIONERS}")
        if self.gradient not in GRADIENTS:
            raise ParameterError(f"gradient must be one of {GRADIENTS}")

    @classmethod
    def from_dict(cls, params: Optional[Dict[str, Any]] = None) -> "MinimizeConfig":
        """Validate and set default minimization parameters"""
        default_params = asdict(cls())
        params = params or {}
        unknown = sorted(set(params) - set(default_params))
        if unknown:
            raise ParameterError(f"Unknown minimize option(s): {', '.join(unknown)}")
        return cls(**{**default_params, **params})


@dataclass(frozen=True)
class MinimizationState:
    """Snapshot of one accepted iterate"""

    iteration: int
    deflection: DeflectionProfile
    energy: EnergyReport
    direction_norm: float
    step: float
    active: np.ndarray
    vi_residual: float
    vi_residual_traces: float
    converged: bool = False
    contact: bool = False
    message: str = ""

    @property
    def min_u(self) -> float:
        return float(np.min(self.deflection.u_values))

    @property
    def max_u(self) -> float:
        return float(np.max(self.deflection.u_values))

    def to_row(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "E_m": self.energy.mechanical,
            "E_e": self.energy.electrostatic,
            "penalty": sum(self.energy.penalties.values()),
            "E_total": self.energy.total,
            "vi_residual": self.vi_residual,
            "min_u": self.min_u,
            "step": self.step,
        }

    def summary(self) -> Dict[str, Any]:
        return {
            "iterations": self.iteration,
            "converged": self.converged,
            "contact": self.contact,
            "message": self.message,
            "vi_residual": self.vi_residual,
            "vi_residual_traces": self.vi_residual_traces,
            "active_nodes": self.deflection.x_nodes[self.active].tolist(),
            "min_u": self.min_u,
            "max_u": self.max_u,
            "energy": self.energy.to_dict(),
        }


def dof_bounds(u: DeflectionProfile, params: PhysicalParams):
    """
    Lower and upper bounds of every Hermite coefficient

    Nodal values are bounded below by the gap floor. In pinned mode the endpoint slopes
    obey -[[sigma]] u'(-L) <= 0 and [[sigma]] u'(L) <= 0.
    """
    space = u.space
    lower = np.full(space.n_dofs, -np.inf)
    upper = np.full(space.n_dofs, np.inf)
    lower[space.value_dofs] = u.gap_floor
    if u.bc_mode == "pinned" and params.sigma_jump != 0:
        left, right = 1, space.n_dofs - 1
        if params.sigma_jump < 0:
            upper[left], lower[right] = 0.0, 0.0
        else:
            lower[left], upper[right] = 0.0, 0.0
    return lower, upper


def project(coefficients: np.ndarray, u: DeflectionProfile, params: PhysicalParams) -> np.ndarray:
    """Clip to the bounds; nodes on the gap floor get zero slope"""
    lower, upper = dof_bounds(u, params)
    projected = np.clip(coefficients, lower, upper)
    values = projected[0::2]
    on_floor = values <= u.gap_floor
    on_floor[[0, -1]] = False
    projected[1::2][on_floor] = 0.0
    projected[u.space.constrained_dofs] = coefficients[u.space.constrained_dofs]
    return projected


def _fixed_dofs(u: DeflectionProfile) -> np.ndarray:
    """Constrained DOFs plus slopes at nodes sitting on the gap floor"""
    return np.union1d(u.space.constrained_dofs, 2 * u.active_nodes(tol=0.0) + 1).astype(int)


def _binding_dofs(u: DeflectionProfile, params: PhysicalParams, gradient: np.ndarray) -> np.ndarray:
    """DOFs on a bound whose descent direction points out of the feasible set"""
    lower, upper = dof_bounds(u, params)
    c = u.coefficients
    binding = ((c <= lower) & (gradient > 0)) | ((c >= upper) & (gradient < 0))
    return np.flatnonzero(binding)


def _vi_residual(u: DeflectionProfile, params: PhysicalParams, gradient: np.ndarray) -> float:
    lower, upper = dof_bounds(u, params)
    c = u.coefficients
    movable = np.ones(c.size, dtype=bool)
    movable[_fixed_dofs(u)] = False

    up_ok = movable & (c < upper)
    down_ok = movable & (c > lower)
    quotients = [gradient[up_ok], -gradient[down_ok]]

    projected = project(c - gradient, u, params)
    projected[_fixed_dofs(u)] = c[_fixed_dofs(u)]
    step = projected - c
    norm = np.linalg.norm(step)
    if norm > 0:
        quotients.append(np.array([gradient @ step / norm]))
    values = np.concatenate(quotients)
    return float(max(0.0, -np.min(values))) if values.size else 0.0


def energy_gradient(u: DeflectionProfile, calculator: EnergyCalculator, method: str = "discrete") -> np.ndarray:
    """Coefficient gradient of E with constrained DOFs zeroed"""
    gradient = calculator.calculate_gradient(u, method)
    gradient[u.space.constrained_dofs] = 0.0
    return gradient


def vi_residual(u: DeflectionProfile, params: PhysicalParams, calculator: EnergyCalculator,
                method: str = "discrete") -> float:
    """
    Variational inequality residual of u over the discrete obstacle set

    max(0, -min (dE(u) . (w - u)) / |w - u|) over the feasible coordinate directions and the
    projected gradient direction; zero certifies discrete stationarity.
    """
    return _vi_residual(u, params, energy_gradient(u, calculator, method))


def cap_penalty(u: DeflectionProfile, cap_value: float, weight: float):
    """K integral of max(0, u - M_cap)^2 and its coefficient gradient"""
    xq, wq = u.space.quadrature(4)
    basis = u.space.basis_matrix(xq)
    excess = np.maximum(basis @ u.coefficients - cap_value, 0.0)
    return float(weight * np.sum(wq * excess**2)), 2.0 * weight * (basis.T @ (wq * excess))


def obstacle_penalty(u: DeflectionProfile, floor: float, weight: float):
    """rho integral of max(0, floor - u)^2 and its coefficient gradient"""
    xq, wq = u.space.quadrature(4)
    basis = u.space.basis_matrix(xq)
    deficit = np.maximum(floor - basis @ u.coefficients, 0.0)
    return float(weight * np.sum(wq * deficit**2)), -2.0 * weight * (basis.T @ (wq * deficit))


def linearized_deflection(params: PhysicalParams, solver: TransmissionSolver, nx: int,
                          bc_mode: str = "clamped") -> DeflectionProfile:
    """
    Small-deflection estimate u_lin = -(beta K_b + tau K_s)^-1 F(g(0))

    A single 1-D solve with the force of the flat state as load.
    """
    flat = DeflectionProfile.flat(params, nx, bc_mode)
    force = electrostatic_force(solver.traces(solver.solve(flat)), params)
    space = flat.space
    load = force_load_vector(force, space)
    stiffness = (params.beta * space.bending_matrix + params.tau * space.stretching_matrix).toarray()
    free = space.free_dofs
    c = np.zeros(space.n_dofs)
    c[free] = -np.linalg.solve(stiffness[np.ix_(free, free)], load[free])
    u_values, du_values = HermiteSpace.unpack(c)
    return DeflectionProfile(flat.x_nodes, u_values, du_values, bc_mode)


class EnergyMinimizer:
    """
    Production-grade minimizer of the total device energy
    Projected, preconditioned gradient descent with Armijo backtracking on the Hermite coefficients
    """

    def __init__(self, params: PhysicalParams, solver: TransmissionSolver, minimize_params: Optional[Dict[str, Any]] = None):
        """
        Initialize minimizer

        Args:
            params: physical constants
            solver: transmission solver for the potential solves
            minimize_params: options overriding MinimizeConfig defaults
        """
        self.params = params
        self.solver = solver
        self.calculator = EnergyCalculator(params, solver)
        self.config = (minimize_params if isinstance(minimize_params, MinimizeConfig)
                       else MinimizeConfig.from_dict(minimize_params))
        if params.a == 0 and not self.config.cap_enabled and not params.sigma_jump < 0:
            raise ParameterError("With a = 0 either enable the coercivity cap or use sigma2 > sigma1")
        self.history: List[MinimizationState] = []
        self._penalty_weight = self.config.penalty_weight

    def _penalties(self, u: DeflectionProfile):
        terms, gradient = {}, np.zeros(u.space.n_dofs)
        if self.config.cap_enabled:
            value, grad = cap_penalty(u, self.config.cap_value, self.config.cap_weight)
            terms["cap"], gradient = value, gradient + grad
        if self.config.obstacle_mode == "penalty":
            floor = u.gap_floor + self.config.penalty_offset
            value, grad = obstacle_penalty(u, floor, self._penalty_weight)
            terms["obstacle"], gradient = value, gradient + grad
        return terms, gradient

    def _evaluate(self, u: DeflectionProfile):
        terms, penalty_gradient = self._penalties(u)
        report = self.calculator.evaluate(u, terms)
        gradient = self.calculator.calculate_gradient(u, self.config.gradient) + penalty_gradient
        gradient[u.space.constrained_dofs] = 0.0
        return report, gradient

    def _direction(self, u: DeflectionProfile, gradient: np.ndarray) -> np.ndarray:
        fixed = np.union1d(_fixed_dofs(u), _binding_dofs(u, self.params, gradient)).astype(int)
        mask = np.ones(gradient.size, dtype=bool)
        mask[fixed] = False
        direction = np.zeros_like(gradient)
        if self.config.preconditioner == "identity":
            direction[mask] = -gradient[mask]
            return direction
        hessian = mechanical_hessian(u, self.params)
        free = np.flatnonzero(mask)
        if free.size == 0:
            return direction
        factor = cho_factor(hessian[np.ix_(free, free)])
        direction[free] = -cho_solve(factor, gradient[free])
        return direction

    def _state(self, iteration, u, report, gradient, direction_norm, step, converged=False, message=""):
        residual = _vi_residual(u, self.params, gradient)
        if self.config.gradient == "traces":
            residual_traces = residual
        else:
            traces_gradient = self.calculator.calculate_gradient(u, "traces") + self._penalties(u)[1]
            traces_gradient[u.space.constrained_dofs] = 0.0
            residual_traces = _vi_residual(u, self.params, traces_gradient)
        active = u.active_nodes()
        return MinimizationState(iteration=iteration, deflection=u, energy=report, direction_norm=direction_norm,
                                 step=step, active=active, vi_residual=residual,
                                 vi_residual_traces=residual_traces, converged=converged,
                                 contact=active.size > 0, message=message)

    def _line_search(self, u: DeflectionProfile, report: EnergyReport, gradient: np.ndarray, direction: np.ndarray):
        c = u.coefficients
        step = self.config.initial_step
        for _ in range(self.config.max_backtracks):
            trial_c = project(c + step * direction, u, self.params)
            decrease = float(gradient @ (trial_c - c))
            if decrease >= 0:
                step *= self.config.backtracking
                continue
            try:
                trial = u.with_coefficients(trial_c)
                terms, _ = self._penalties(trial)
                trial_report = self.calculator.evaluate(trial, terms)
            except (DegenerateGeometryError, InadmissibleDeflectionError) as exc:
                logger.debug("Rejected trial step %.3e: %s", step, exc)
                step *= self.config.backtracking
                continue
            if trial_report.total <= report.total + self.config.armijo * decrease and trial_report.total < report.total:
                return trial, step
            step *= self.config.backtracking
        return None, 0.0

    def _descend(self, u: DeflectionProfile, iteration: int):
        report, gradient = self._evaluate(u)
        state = self._state(iteration, u, report, gradient, 0.0, 0.0)
        self.history.append(state)
        while True:
            if state.vi_residual <= self.config.vi_tol:
                return self._finish(state, True, "VI residual below tolerance")
            if iteration >= self.config.max_iter:
                logger.warning("Iteration cap %d reached with VI residual %.3e", self.config.max_iter, state.vi_residual)
                return self._finish(state, False, "iteration cap reached")

            direction = self._direction(u, gradient)
            trial, step = self._line_search(u, report, gradient, direction)
            if trial is None:
                logger.warning("Line search failed at iteration %d (VI residual %.3e)", iteration, state.vi_residual)
                return self._finish(state, False, "line search failed")
            change = float(np.linalg.norm(trial.coefficients - u.coefficients))

            iteration += 1
            u = trial
            report, gradient = self._evaluate(u)
            state = self._state(iteration, u, report, gradient, float(np.linalg.norm(direction)), step)
            self.history.append(state)
            logger.info("iter %d: E=%.10e  VI=%.3e  min u=%.6f  step=%.3e",
                        iteration, report.total, state.vi_residual, state.min_u, step)
            if change <= self.config.step_tol:
                return self._finish(state, state.vi_residual <= self.config.vi_tol, "step below tolerance")

    def _finish(self, state: MinimizationState, converged: bool, message: str) -> MinimizationState:
        final = MinimizationState(**{f.name: getattr(state, f.name) for f in fields(state)
                                     if f.name not in ("converged", "message")},
                                  converged=converged, message=message)
        self.history[-1] = final
        if final.contact:
            logger.warning("Obstacle contact at %d node(s); min u = %.6f", final.active.size, final.min_u)
        return final

    def run(self, u0: DeflectionProfile) -> MinimizationState:
        """
        Minimize E over the discrete obstacle set starting from u0

        Returns:
            Final MinimizationState; non-convergence and obstacle contact are flagged on it
        """
        if u0.L != self.params.L:
            raise ParameterError("Initial deflection does not span [-L, L]")
        self.history = []
        self._penalty_weight = self.config.penalty_weight
        stages = self.config.penalty_stages if self.config.obstacle_mode == "penalty" else 1
        state = None
        u, iteration = u0, 0
        for stage in range(stages):
            state = self._descend(u, iteration)
            u, iteration = state.deflection, state.iteration
            if stage + 1 < stages:
                self._penalty_weight *= self.config.penalty_growth
                logger.info("Penalty stage %d: weight %.3e", stage + 2, self._penalty_weight)
        return state

    def history_rows(self) -> List[Dict[str, Any]]:
        return [state.to_row() for state in self.history]

    def voltage_sweep(self, voltages: Sequence[float], u0: DeflectionProfile) -> List[Dict[str, Any]]:
        """
        Continuation in V with warm starts

        Args:
            voltages: increasing top potentials
            u0: starting deflection for the first voltage

        Returns:
            One summary row per voltage
        """
        rows = []
        u = u0
        previous_min = None
        for V in voltages:
            params = self.params.with_updates(V=float(V))
            minimizer = EnergyMinimizer(params, self.solver.with_params(params), self.config)
            state = minimizer.run(u)
            rows.append({
                "V": float(V),
                "min_u": state.min_u,
                "max_u": state.max_u,
                "E_total": state.energy.total,
                "vi_residual": state.vi_residual,
                "iterations": state.iteration,
                "converged": state.converged,
                "contact": state.contact,
            })
            if previous_min is not None and state.min_u > previous_min + 1e-12:
                logger.warning("min u did not deepen from V=%.4g to V=%.4g", rows[-2]["V"], V)
            previous_min = state.min_u
            u = state.deflection
        return rows


def minimize_total_energy(params: PhysicalParams, cfg: Optional[Dict[str, Any]], u0: DeflectionProfile,
                          solver: TransmissionSolver) -> MinimizationState:
    """Run one EnergyMinimizer from u0 and return its final state"""
    return EnergyMinimizer(params, solver, cfg).run(u0)
