"""
Tests for the verification probes
"""

import numpy as np
import pytest

from app.analytics import catalogue
from app.analytics.transmission import TransmissionSolver
from app.analytics.verification import (
    VerifyConfig,
    continuity_probe,
    directional_form,
    fd_directional_derivative,
    jump_study,
    mms_convergence,
    monotonicity_probe,
    richardson,
    run_probe_suite,
)
from app.errors import InadmissiblePerturbationError, ParameterError

STEPS = (1e-2, 5e-3, 2.5e-3)


class TestRichardson:
    """Test cases for richardson"""

    def test_even_expansion(self):
        """Two eliminations remove t^2 and t^4 terms exactly"""
        quotients = [3.0 + 2.0 * t**2 - 5.0 * t**4 for t in STEPS]
        extrapolants = richardson(quotients, STEPS, order=2)
        assert len(extrapolants) == 3
        assert extrapolants[-1] == pytest.approx(3.0, abs=1e-12)

    def test_first_order_expansion(self):
        """One-sided quotients eliminate t and t^2"""
        quotients = [-1.5 + 0.7 * t + 4.0 * t**2 for t in STEPS]
        assert richardson(quotients, STEPS, order=1)[-1] == pytest.approx(-1.5, abs=1e-12)


class TestDerivativeProbe:
    """Test cases for fd_directional_derivative and directional_form"""

    def test_zero_direction(self, curved_profile, small_solver):
        """theta = 0 passes with zero derivatives"""
        report = fd_directional_derivative(curved_profile, np.zeros(34), small_solver, STEPS)
        assert report.passed
        assert report.extrapolated == 0.0

    def test_coarse_mesh(self, base_params, curved_profile):
        """Meshes below the minimum resolution fail with a reason"""
        solver = TransmissionSolver.for_params(base_params, 8, 4, 4)
        theta = catalogue.direction("quartic", -0.05, curved_profile.space)
        report = fd_directional_derivative(curved_profile, theta, solver, STEPS)
        assert not report.passed
        assert report.reason == "mesh below minimum resolution"

    def test_inadmissible_step(self, base_params, small_solver):
        """Steps that push the plate through the gap floor are reported with their size"""
        u = catalogue.build_deflection(base_params, "cosine", -0.995, 16)
        theta = catalogue.direction("cosine", -1.0, u.space)
        with pytest.raises(InadmissiblePerturbationError) as excinfo:
            fd_directional_derivative(u, theta, small_solver, STEPS)
        assert excinfo.value.step == 1e-2

    @pytest.mark.parametrize("steps", [(1e-2,), (1e-3, 1e-2), (1e-2, -1e-3)])
    def test_invalid_steps(self, curved_profile, small_solver, steps):
        """Steps must be positive, strictly decreasing and at least two"""
        with pytest.raises(ParameterError):
            fd_directional_derivative(curved_profile, np.zeros(34), small_solver, steps)

    def test_central_quotients(self, curved_profile, medium_solver):
        """Extrapolated quotients reproduce the discrete derivative and approximate the force pairing"""
        theta = catalogue.direction("cosine", -0.05, curved_profile.space)
        report = fd_directional_derivative(curved_profile, theta, medium_solver, STEPS, name="cosine", tol=0.1)
        assert report.mismatch_discrete <= 1e-6
        assert report.mismatch <= 0.1
        assert report.passed
        assert report.to_row()["direction"] == "cosine"

    def test_odd_direction_on_symmetric_state(self, base_params, curved_profile):
        """Vanishing pairings are measured against the integral of |g| |theta|, not against roundoff"""
        solver = TransmissionSolver.for_params(base_params, 32, 16, 16, method="direct")
        theta = catalogue.direction("wiggle", -0.05, curved_profile.space)
        report = fd_directional_derivative(curved_profile, theta, solver, STEPS, name="wiggle", tol=1e-2)
        assert abs(report.analytic) < 1e-9
        assert report.passed
        assert report.mismatch <= 1e-3

    def test_one_sided_form(self, curved_profile, medium_solver):
        """One-sided quotients toward w approach the derivative along w - u"""
        theta = catalogue.direction("sextic", -0.05, curved_profile.space)
        w = curved_profile.with_coefficients(curved_profile.coefficients + theta)
        report = directional_form(curved_profile, w, medium_solver, STEPS, tol=0.1)
        assert report.mismatch_discrete <= 1e-5
        assert report.mismatch <= 0.1


class TestManufacturedSolution:
    """Test cases for mms_convergence"""

    def test_orders(self, base_params):
        """Second order in L2 and first order in H1 across the interface"""
        result = mms_convergence(base_params, (16, 32))
        assert result.summary["l2_orders"][0] >= 1.8
        assert result.summary["h1_orders"][0] >= 0.9
        assert [row["N"] for row in result.rows] == [16, 32]

    def test_equal_permittivities(self, base_params):
        """Homogeneous medium converges at the same rates"""
        result = mms_convergence(base_params.with_updates(sigma2=1.0), (16, 32))
        assert result.summary["l2_orders"][0] >= 1.8
        assert result.summary["h1_orders"][0] >= 0.9

    def test_short_ladder(self, base_params):
        """One mesh gives no order"""
        with pytest.raises(ParameterError):
            mms_convergence(base_params, (16,))


class TestMonotonicityProbe:
    """Test cases for monotonicity_probe"""

    def test_ordered_pairs(self, base_params, small_solver):
        """Lower plates store less (more negative) energy"""
        pairs = catalogue.ordered_pair_family(base_params, 4, 16, seed=1)
        result = monotonicity_probe(pairs, small_solver)
        assert result.passed
        assert all(row["E_e_lower"] <= row["E_e_upper"] + 1e-10 for row in result.rows)

    def test_twenty_pair_family(self, base_params, medium_solver):
        """The full deterministic family of 20 ordered pairs is monotone"""
        pairs = catalogue.ordered_pair_family(base_params, 20, 32, seed=0)
        result = monotonicity_probe(pairs, medium_solver)
        assert len(result.rows) == 20
        assert result.passed
        assert all(row["E_e_lower"] <= row["E_e_upper"] + 1e-10 for row in result.rows)

    def test_pairs_deterministic(self, base_params):
        """Same seed, same family"""
        first = catalogue.ordered_pair_family(base_params, 3, 16, seed=7)
        second = catalogue.ordered_pair_family(base_params, 3, 16, seed=7)
        for (a0, a1), (b0, b1) in zip(first, second):
            np.testing.assert_array_equal(a0.u_values, b0.u_values)
            np.testing.assert_array_equal(a1.u_values, b1.u_values)

    def test_permittivity_guard(self, base_params, small_solver):
        """Probe applies to sigma2 > sigma1 only"""
        params = base_params.with_updates(sigma1=2.0, sigma2=1.0)
        solver = TransmissionSolver(params, small_solver.mesh)
        with pytest.raises(ParameterError):
            monotonicity_probe([], solver)

    def test_unordered_pair(self, base_params, flat_profile, curved_profile, small_solver):
        """Pairs must satisfy u0 <= u1 at every node"""
        with pytest.raises(ParameterError):
            monotonicity_probe([(flat_profile, curved_profile)], small_solver)


class TestContinuityProbe:
    """Test cases for continuity_probe"""

    def test_distances_decay(self, curved_profile, small_solver):
        """Every distance falls at least like 1/n"""
        bump = catalogue.direction("quartic", -0.05, curved_profile.space)
        result = continuity_probe(curved_profile, bump, small_solver)
        assert result.passed
        assert result.rows[-1]["field_h1"] < result.rows[0]["field_h1"]
        assert {"energy", "interface_L2", "top_L4", "force_L1"} <= set(result.rows[0])

    def test_zero_bump(self, curved_profile, small_solver):
        """A vanishing bump leaves every column at the noise floor"""
        result = continuity_probe(curved_profile, np.zeros(34), small_solver, ns=(1, 2, 4))
        assert result.passed
        assert all(slope is None for slope in result.summary["slopes"].values())


class TestJumpStudy:
    """Test cases for jump_study"""

    def test_jumps_decrease(self, base_params):
        """Discrete interface jumps shrink under refinement and the two-sided force form stays within its bound"""
        def factory(N):
            return catalogue.build_deflection(base_params, "cosine", -0.1, N)

        result = jump_study(base_params, factory, (16, 32))
        first, second = result.rows
        assert second["jump_F"] < first["jump_F"]
        assert second["jump_sigma_G"] < first["jump_sigma_G"]
        assert result.summary["two_sided_consistent"]


class TestProbeSuite:
    """Test cases for VerifyConfig and run_probe_suite"""

    def test_config_lists(self):
        """Lists from TOML become tuples"""
        cfg = VerifyConfig.from_dict({"probes": ["mms"], "mms_ladder": [16, 32]})
        assert cfg.probes == ("mms",)
        assert cfg.mms_ladder == (16, 32)

    def test_config_rejects_unknown(self):
        """Unknown probes and options are rejected"""
        with pytest.raises(ParameterError):
            VerifyConfig.from_dict({"probes": ["stability"]})
        with pytest.raises(ParameterError):
            VerifyConfig.from_dict({"mesh": 4})

    def test_empty_selection(self, base_params):
        """Selecting nothing returns no results"""
        assert run_probe_suite(base_params, VerifyConfig(probes=())) == {}

    def test_concurrent_matches_serial(self, base_params):
        """Thread pool and serial runs give identical rows"""
        cfg = VerifyConfig(probes=("monotonicity", "continuity"), monotone_pairs=3, monotone_nx=16,
                           continuity_ns=(1, 2, 4))
        pooled = run_probe_suite(base_params, cfg)
        serial = run_probe_suite(base_params, cfg, serial=True)
        assert list(pooled) == ["monotonicity", "continuity"]
        for name in pooled:
            assert pooled[name].rows == serial[name].rows
            assert pooled[name].passed


@pytest.mark.slow
class TestAcceptance:
    """Acceptance-scale checks on fine meshes"""

    def test_derivative_probe_fine_mesh(self, base_params):
        """All catalogue directions match to 1e-2 on 128 x (64 + 64)"""
        result = run_probe_suite(base_params, VerifyConfig(probes=("derivative",)))
        assert result["derivative"].passed
        assert result["derivative"].summary["max_mismatch"] <= 1e-2

    def test_mms_ladder(self, base_params):
        """Full ladder to N = 128 meets the order targets"""
        assert mms_convergence(base_params).passed

    def test_jump_orders(self, base_params):
        """Interface jumps decay at least at first order over 16, 32, 64"""
        def factory(N):
            return catalogue.build_deflection(base_params, "cosine", -0.1, N)

        result = jump_study(base_params, factory, (16, 32, 64))
        assert min(result.summary["orders"]["jump_F"]) >= 0.9
        assert min(result.summary["orders"]["jump_sigma_G"]) >= 0.9
        assert result.summary["two_sided_consistent"]
        assert result.passed

    def test_full_suite_passes(self, base_params):
        """Every default check passes on the base device"""
        results = run_probe_suite(base_params, VerifyConfig())
        failed = [name for name, result in results.items() if not result.passed]
        assert failed == []
