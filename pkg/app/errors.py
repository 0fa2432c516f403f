"""
Error types for the MEMS transmission toolkit
Validation errors subclass ValueError so existing `except ValueError` handlers keep working
"""

from typing import Optional


class MemsModelError(Exception):
    """Base class for every error raised by the toolkit"""


class ConfigError(MemsModelError, ValueError):
    """Malformed or unknown configuration entry"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParameterError(MemsModelError, ValueError):
    """Physical or numerical parameter outside its admissible range"""


class InadmissibleDeflectionError(MemsModelError, ValueError):
    """Deflection violates boundary conditions or the obstacle"""


class DegenerateGeometryError(MemsModelError, ValueError):
    """Gap H + u too small for the reference transformation"""

    def __init__(self, message: str, min_gap: float):
        self.min_gap = min_gap
        super().__init__(message)


class InadmissiblePerturbationError(MemsModelError, ValueError):
    """Perturbed state u + t*theta left the admissible set"""

    def __init__(self, message: str, step: float):
        self.step = step
        super().__init__(message)


class AssemblyError(MemsModelError, RuntimeError):
    """Assembled stiffness matrix is not symmetric positive definite"""


class SolverConvergenceError(MemsModelError, RuntimeError):
    """Iterative solve stopped before reaching the requested residual"""

    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
