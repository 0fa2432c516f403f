"""
Tests for the transmission solver, traces and electrostatic energy
"""

import numpy as np
import pytest

from app.analytics.fem2d import build_mesh
from app.analytics.geometry import BoundaryData
from app.analytics.transmission import (
    TransmissionSolver,
    electrostatic_energy,
    field_distance,
    flat_transmission_profile,
    physical_energy,
)
from app.errors import ParameterError


@pytest.fixture
def oned_solver(base_params):
    """Flat-profile boundary data on a 16 x (8 + 8) mesh"""
    boundary = flat_transmission_profile(base_params).as_boundary()
    return TransmissionSolver.for_params(base_params, 16, 8, 8, boundary=boundary, tol=1e-13)


class TestFlatProfile:
    """Test cases for the closed-form undeflected potential"""

    def test_slopes(self, base_params):
        """sigma1 s1 = sigma2 s2 and s1 H + s2 d = V"""
        profile = flat_transmission_profile(base_params)
        assert profile.slope_lower == pytest.approx(2.0 / 3.0)
        assert profile.slope_upper == pytest.approx(1.0 / 3.0)
        assert profile(np.array([-1.0, 0.0, 1.0])) == pytest.approx([0.0, 2.0 / 3.0, 1.0])

    def test_energy_and_force(self, base_params):
        """E_e = -2/3 and g = 2/9 for the default device"""
        profile = flat_transmission_profile(base_params)
        assert profile.energy == pytest.approx(-2.0 / 3.0)
        assert profile.force == pytest.approx(2.0 / 9.0)


class TestSolvePotential:
    """Test cases for TransmissionSolver.solve"""

    def test_oned_data_reproduced(self, base_params, flat_profile, oned_solver):
        """Piecewise-linear profile is exact in the bilinear space"""
        phi = oned_solver.solve(flat_profile)
        expected = flat_transmission_profile(base_params)(phi.mesh.nodes[:, 1])
        np.testing.assert_allclose(phi.values, expected, atol=1e-10)
        assert electrostatic_energy(phi) == pytest.approx(-2.0 / 3.0, abs=1e-10)

    def test_oned_traces(self, flat_profile, oned_solver):
        """Interface and top gradients match the layer slopes"""
        traces = oned_solver.traces(oned_solver.solve(flat_profile))
        np.testing.assert_allclose(traces.interface_upper, np.tile([0.0, 1.0 / 3.0], (16, 1)), atol=1e-9)
        np.testing.assert_allclose(traces.interface_lower, np.tile([0.0, 2.0 / 3.0], (16, 1)), atol=1e-9)
        np.testing.assert_allclose(traces.top, np.tile([0.0, 1.0 / 3.0], (16, 1)), atol=1e-9)

    def test_constant_custom_data(self, base_params, curved_profile):
        """Constant Dirichlet data gives a constant field and zero energy"""
        boundary = BoundaryData.custom_trace(base_params, lambda x, zbar: np.full_like(zbar, 0.7))
        solver = TransmissionSolver.for_params(base_params, 16, 8, 8, boundary=boundary)
        phi = solver.solve(curved_profile)
        np.testing.assert_allclose(phi.values, 0.7, atol=1e-10)
        assert electrostatic_energy(phi) == pytest.approx(0.0, abs=1e-12)

    def test_model_boundary_values(self, base_params, curved_profile, small_solver):
        """Side values follow zeta(z + 1): zero below the interface, V on the top"""
        phi = small_solver.solve(curved_profile)
        grid = phi.grid()
        bdata = BoundaryData.model(base_params)
        np.testing.assert_allclose(grid[:, 0], bdata.zeta(phi.mesh.z + 1.0))
        np.testing.assert_allclose(grid[:, -1], bdata.zeta(phi.mesh.z + 1.0))
        np.testing.assert_allclose(grid[-1], 1.0)
        np.testing.assert_allclose(grid[0], 0.0)

    def test_maximum_principle(self, flat_profile, small_solver):
        """Potential stays within the range of its boundary data on square cells"""
        phi = small_solver.solve(flat_profile)
        assert phi.values.min() >= -1e-10
        assert phi.values.max() <= 1.0 + 1e-10

    def test_zero_voltage(self, base_params, curved_profile):
        """V = 0 gives the zero field without iterating"""
        solver = TransmissionSolver.for_params(base_params.with_updates(V=0.0), 16, 8, 8)
        phi = solver.solve(curved_profile)
        assert not np.any(phi.values)
        assert phi.iterations == 0
        assert electrostatic_energy(phi) == 0.0

    def test_energy_nonpositive(self, curved_profile, small_solver):
        """E_e(u) <= 0"""
        assert small_solver.energy(curved_profile) < 0.0

    def test_energy_scales_with_voltage(self, base_params, curved_profile, small_solver):
        """Model data is linear in V, so E_e scales with V^2"""
        half = small_solver.with_params(base_params.with_updates(V=0.5))
        assert half.energy(curved_profile) == pytest.approx(0.25 * small_solver.energy(curved_profile), rel=1e-8)

    def test_physical_energy_agrees(self, curved_profile, small_solver):
        """Mapped-mesh energy matches the reference-domain energy"""
        phi = small_solver.solve(curved_profile)
        assert physical_energy(phi) == pytest.approx(electrostatic_energy(phi), rel=1e-2)

    def test_solver_methods_agree(self, base_params, curved_profile, small_solver):
        """CG and direct solves give the same field"""
        direct = TransmissionSolver(base_params, small_solver.mesh, method="direct")
        phi_cg = small_solver.solve(curved_profile)
        phi_lu = direct.solve(curved_profile)
        assert field_distance(phi_cg, phi_lu) < 1e-6

    def test_values_read_only(self, curved_profile, small_solver):
        """Solved values cannot be changed in place"""
        phi = small_solver.solve(curved_profile)
        with pytest.raises(ValueError):
            phi.values[0] = 1.0


class TestTraces:
    """Test cases for extract_traces"""

    def test_top_tangential_small(self, curved_profile, medium_solver):
        """Tangential derivative along the constant-potential top is near zero away from the side walls"""
        traces = medium_solver.traces(medium_solver.solve(curved_profile))
        # end cells touch the side walls, where the model data varies along z
        assert np.max(np.abs(traces.top_tangential[1:-1])) < 0.02
        assert np.max(np.abs(traces.top_tangential)) < 0.1

    def test_trace_shapes(self, curved_profile, small_solver):
        """One sample per x-cell"""
        traces = small_solver.traces(small_solver.solve(curved_profile))
        assert traces.x.shape == (16,)
        assert traces.interface_upper.shape == (16, 2)

    def test_midpoint_method(self, base_params, flat_profile):
        """Midpoint traces are exact for the flat device as well"""
        boundary = flat_transmission_profile(base_params).as_boundary()
        solver = TransmissionSolver.for_params(base_params, 8, 4, 4, boundary=boundary, tol=1e-13,
                                               trace_method="midpoint")
        traces = solver.traces(solver.solve(flat_profile))
        np.testing.assert_allclose(traces.interface_lower[:, 1], 2.0 / 3.0, atol=1e-9)


class TestTransmissionSolver:
    """Test cases for solver construction"""

    def test_mesh_mismatch(self, base_params):
        """Mesh extents must agree with the device"""
        with pytest.raises(ParameterError):
            TransmissionSolver(base_params, build_mesh(2.0, 1.0, 1.0, 4, 2, 2))

    def test_invalid_options(self, base_params):
        """Unknown trace methods and nonpositive tolerances are rejected"""
        mesh = build_mesh(1.0, 1.0, 1.0, 4, 2, 2)
        with pytest.raises(ParameterError):
            TransmissionSolver(base_params, mesh, trace_method="spline")
        with pytest.raises(ParameterError):
            TransmissionSolver(base_params, mesh, tol=0.0)


@pytest.mark.slow
class TestFlatProfileAcceptance:
    """Closed-form 1-D profile on the 128 x (64 + 64) mesh"""

    def test_oned_fine_mesh(self, base_params, flat_profile):
        """Nodal values reproduced and E_e = -2/3 within 1e-3 relative"""
        boundary = flat_transmission_profile(base_params).as_boundary()
        solver = TransmissionSolver.for_params(base_params, 128, 64, 64, boundary=boundary, method="direct")
        phi = solver.solve(flat_profile)
        expected = flat_transmission_profile(base_params)(phi.mesh.nodes[:, 1])
        np.testing.assert_allclose(phi.values, expected, atol=1e-10)
        assert electrostatic_energy(phi) == pytest.approx(-2.0 / 3.0, rel=1e-3)
