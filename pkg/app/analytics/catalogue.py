"""
Deflection shape catalogue
Named smooth shapes on [-L, L] used as deflection sources, perturbation directions and ordered pair families
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.analytics.geometry import DeflectionProfile, PhysicalParams
from app.analytics.hermite import HermiteSpace
from app.errors import ParameterError

_OFFSET_PEAK = 0.8**2 * 1.2**3


@dataclass(frozen=True)
class Shape:
    """Shape in xi = x/L with its xi-derivative; clamped shapes have double roots at xi = +-1"""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    dfunc: Callable[[np.ndarray], np.ndarray]
    clamped: bool = True
    nonnegative: bool = True


SHAPES: Dict[str, Shape] = {
    "quartic": Shape("quartic",
                     lambda s: (1 - s**2) ** 2,
                     lambda s: -4 * s * (1 - s**2)),
    "cosine": Shape("cosine",
                    lambda s: 0.5 * (1 + np.cos(np.pi * s)),
                    lambda s: -0.5 * np.pi * np.sin(np.pi * s)),
    "sextic": Shape("sextic",
                    lambda s: (1 - s**2) ** 3,
                    lambda s: -6 * s * (1 - s**2) ** 2),
    "wiggle": Shape("wiggle",
                    lambda s: s * (1 - s**2) ** 2,
                    lambda s: (1 - s**2) * (1 - 5 * s**2),
                    nonnegative=False),
    "offset_bump": Shape("offset_bump",
                         lambda s: (1 - s) ** 2 * (1 + s) ** 3 / _OFFSET_PEAK,
                         lambda s: (1 - s) * (1 + s) ** 2 * (1 - 5 * s) / _OFFSET_PEAK),
    "half_cosine": Shape("half_cosine",
                         lambda s: np.cos(0.5 * np.pi * s),
                         lambda s: -0.5 * np.pi * np.sin(0.5 * np.pi * s),
                         clamped=False),
}

DIRECTION_NAMES = ("quartic", "cosine", "sextic", "wiggle", "offset_bump")


def get_shape(name: str) -> Shape:
    try:
        return SHAPES[name]
    except KeyError:
        raise ParameterError(f"Unknown shape {name!r}, expected one of {sorted(SHAPES)}") from None


def shape_functions(name: str, L: float, amplitude: float = 1.0) -> Tuple[Callable, Callable]:
    """Callables x -> amplitude*f(x/L) and its x-derivative"""
    shape = get_shape(name)
    return (lambda x: amplitude * shape.func(np.asarray(x, dtype=float) / L),
            lambda x: amplitude * shape.dfunc(np.asarray(x, dtype=float) / L) / L)


def build_deflection(params: PhysicalParams, name: str, amplitude: float, nx: int,
                     bc_mode: str = "clamped", eps_gap: Optional[float] = None) -> DeflectionProfile:
    """Hermite interpolant of amplitude*shape on a grid of nx elements"""
    if name == "flat":
        return DeflectionProfile.flat(params, nx, bc_mode, eps_gap)
    shape = get_shape(name)
    if bc_mode == "clamped" and not shape.clamped:
        raise ParameterError(f"Shape {name!r} is not admissible for clamped plates")
    func, dfunc = shape_functions(name, params.L, amplitude)
    return DeflectionProfile.from_function(params, nx, func, dfunc, bc_mode, eps_gap)


def direction(name: str, amplitude: float, space: HermiteSpace) -> np.ndarray:
    """Coefficient vector of a perturbation direction with its constrained DOFs set to zero"""
    shape = get_shape(name)
    if space.bc_mode == "clamped" and not shape.clamped:
        raise ParameterError(f"Shape {name!r} is not a clamped direction")
    L = space.x_nodes[-1]
    func, dfunc = shape_functions(name, L, amplitude)
    theta = space.interpolate(func, dfunc)
    theta[space.constrained_dofs] = 0.0
    return theta


def ordered_pair_family(params: PhysicalParams, count: int, nx: int, seed: int = 0,
                        bc_mode: str = "clamped") -> List[Tuple[DeflectionProfile, DeflectionProfile]]:
    """
    Deterministic pairs (u0, u1) with u0 <= u1 at every node

    u1 is a random multiple of a catalogue shape; u0 = u1 - b*bump with b > 0 and a
    nonnegative bump, so the ordering is exact at the nodes.
    """
    rng = np.random.default_rng(seed)
    names = list(DIRECTION_NAMES)
    bumps = [name for name in names if SHAPES[name].nonnegative]
    pairs = []
    for _ in range(count):
        upper_name = names[rng.integers(len(names))]
        bump_name = bumps[rng.integers(len(bumps))]
        a = float(rng.uniform(-0.3, 0.2)) * params.H
        b = float(rng.uniform(0.02, 0.3)) * params.H
        u1 = build_deflection(params, upper_name, a, nx, bc_mode)
        bump = build_deflection(params, bump_name, b, nx, bc_mode)
        u0 = u1.with_coefficients(u1.coefficients - bump.coefficients)
        pairs.append((u0, u1))
    return pairs
