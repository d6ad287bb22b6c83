"""Tests for comb specifications and the solved comb maps."""

import math

import numpy as np
import pytest

from escapedim.comb_conformal import (
    CombSpec,
    ConformalMapHandle,
    ToothLaw,
    build_comb_from_sector,
    build_comb_modified_exp,
    build_conformal_map,
    build_uniform_comb,
    cauchy_riemann_residual,
    check_modified_injectivity,
    cosh_critical_point,
    halve_teeth,
    max_modulus_log,
    point_in_comb,
    psi_profile,
    reference_grid,
    sector_bound,
    theta_diagnostics,
    theta_profile,
    winding_number,
)
from escapedim.config import MapOptions
from escapedim.errors import ConfigurationError, InjectivityCheckFailed, OutOfDomain


class TestCombSpec:
    """Construction and validation of combs."""

    def test_sector_teeth_follow_bound(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=16)
        lengths = spec.tooth_lengths(40)
        assert np.all(np.diff(lengths) >= 0.0)
        for k in range(1, 40):
            assert lengths[k] <= sector_bound(0.5, k) + 1e-12

    def test_symmetric_in_n(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=8)
        for n in (1, 5, 8, 20):
            assert spec.tooth_length(-n) == spec.tooth_length(n)
        assert spec.critical_value(1) == pytest.approx(-math.exp(spec.tooth_length(1)))

    def test_continuation_matches_table(self) -> None:
        short = build_comb_from_sector(0.5, truncation_N=8)
        long = build_comb_from_sector(0.5, truncation_N=32)
        for n in range(9, 33):
            assert short.tooth_length(n) == pytest.approx(long.tooth_length(n))
        assert short.extended(32).teeth == pytest.approx(long.teeth)

    def test_custom_provider(self) -> None:
        spec = build_comb_from_sector(0.5, xk_provider=lambda n: math.exp(n), truncation_N=8)
        assert spec.tail_law == ToothLaw.SECTOR_BOUNDARY
        assert spec.tooth_length(3) <= sector_bound(0.5, 3)

    def test_cosh_points(self) -> None:
        assert cosh_critical_point(0) == 1.0
        assert cosh_critical_point(-2) == cosh_critical_point(2)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
    def test_sector_alpha_range(self, alpha: float) -> None:
        with pytest.raises(ConfigurationError):
            build_comb_from_sector(alpha)

    def test_invalid_spec(self) -> None:
        with pytest.raises(ConfigurationError):
            CombSpec(alpha=0.5, teeth=(0.0, 1.0), truncation_N=4)
        with pytest.raises(ConfigurationError):
            CombSpec(alpha=0.5, teeth=(0.0, math.nan), truncation_N=1)

    def test_uniform_comb(self) -> None:
        spec = build_uniform_comb(8)
        assert spec.alpha == 1.0
        assert all(spec.tooth_length(n) == 0.0 for n in range(30))

    def test_uniform_core(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=8, uniform_core_N=3)
        assert spec.teeth[:4] == (0.0, 0.0, 0.0, 0.0)

    def test_halve_teeth(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=8)
        halved = halve_teeth(spec)
        assert halved.tooth_length(5) == pytest.approx(spec.tooth_length(5) / 2.0)
        assert halved.tooth_length(50) == pytest.approx(spec.tooth_length(50) / 2.0)

    def test_dict_round_trip(self) -> None:
        spec = build_comb_modified_exp(0.5, 10.0, 1, truncation_N=8)
        data = spec.to_dict()
        assert len(data["teeth"]) == 17
        assert CombSpec.from_dict(data) == spec

    def test_absent_tooth_serialized_as_null(self) -> None:
        spec = CombSpec(alpha=0.5, teeth=(-math.inf, 1.0), truncation_N=1)
        data = spec.to_dict()
        assert data["teeth"][1] == {"n": 0, "log_len": None}
        assert CombSpec.from_dict(data).teeth[0] == -math.inf


class TestModifiedExponential:
    def test_q_zero_is_sector(self) -> None:
        assert build_comb_modified_exp(0.5, 10.0, 0, truncation_N=8) == build_comb_from_sector(
            0.5, truncation_N=8
        )

    def test_small_c_rejected(self) -> None:
        with pytest.raises(InjectivityCheckFailed):
            check_modified_injectivity(0.5, 1.0, 1)

    def test_large_q_rejected(self) -> None:
        with pytest.raises(InjectivityCheckFailed):
            check_modified_injectivity(0.1, 2.0, 5)

    def test_records_parameters(self) -> None:
        spec = build_comb_modified_exp(0.5, 10.0, 1, truncation_N=16)
        assert spec.tail_law == ToothLaw.MODIFIED_EXP
        assert spec.modified_exp is not None
        assert (spec.modified_exp.c, spec.modified_exp.q) == (10.0, 1)
        assert np.all(np.diff(spec.tooth_lengths(40)) >= 0.0)


class TestProfiles:
    def test_point_in_comb(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=8)
        length = spec.tooth_length(2)
        assert not point_in_comb(spec, complex(length - 1.0, 2.0 * math.pi))
        assert point_in_comb(spec, complex(length + 1.0, 2.0 * math.pi))
        assert point_in_comb(spec, complex(-100.0, 1.0))

    def test_psi_bounded(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=16)
        for r in (1.0, 10.0, 100.0, 1000.0):
            assert 0.0 <= psi_profile(spec, r) <= 2.0 * math.pi

    def test_theta_tends_to_pi(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=16)
        assert theta_profile(spec, 20.0) == pytest.approx(math.pi, abs=0.1)
        with pytest.raises(ConfigurationError):
            theta_profile(spec, -1.0)

    def test_theta_integral_settles(self) -> None:
        spec = build_comb_from_sector(0.5, truncation_N=16)
        _, increment, _ = theta_diagnostics(spec, (10.0, 20.0))
        assert abs(increment) < 0.5


class TestSectorMap:
    """The solved map for the order-1/2 sector comb."""

    def test_domain(self, sector_map: ConformalMapHandle) -> None:
        with pytest.raises(OutOfDomain):
            sector_map.phi(np.array([1.0 + 0.5j]))

    def test_certified(self, sector_map: ConformalMapHandle) -> None:
        assert sector_map.accuracy <= 1e-2
        assert sector_map.tooth_residual <= 1e-6
        assert sector_map.warschawski.oscillation <= 5e-2

    def test_teeth_reached_at_critical_points(self, sector_map: ConformalMapHandle) -> None:
        for crossing in sector_map.critical_points(6):
            assert crossing.log_value == pytest.approx(
                sector_map.spec.tooth_length(crossing.n), abs=1e-6
            )
            assert crossing.left_zero <= crossing.t <= crossing.right_zero

    def test_image_avoids_teeth(self, sector_map: ConformalMapHandle) -> None:
        z = np.array([0.5 - 0.5j, 3.0 - 1.0j, -7.0 - 0.2j, 20.0 - 40.0j])
        for w in sector_map.phi(z):
            assert point_in_comb(sector_map.spec, complex(w), tol=1e-9)

    def test_inverse(self, sector_map: ConformalMapHandle) -> None:
        z = np.array([1.0 - 1.0j, -4.0 - 2.0j, 10.0 - 0.3j, 30.0 - 30.0j])
        back = sector_map.inverse(sector_map.phi(z))
        np.testing.assert_allclose(back, z, rtol=1e-8)

    def test_inverse_of_real_target(self, sector_map: ConformalMapHandle) -> None:
        z = sector_map.inverse(np.array([5.0 + 0j]))
        assert z[0].real == pytest.approx(0.0, abs=1e-12)
        assert sector_map.eval(complex(z[0])).real == pytest.approx(5.0, abs=1e-9)

    def test_analytic(self, sector_map: ConformalMapHandle) -> None:
        z = np.array([1.0 - 1.0j, -5.0 - 3.0j, 12.0 - 8.0j])
        assert cauchy_riemann_residual(sector_map, z) < 1e-5
        assert winding_number(sector_map, (-3.0 - 4.0j, 3.0 - 1.0j)) == 1
        with pytest.raises(OutOfDomain):
            winding_number(sector_map, (-1.0 - 1.0j, 1.0 + 1.0j))

    def test_reflection(self, sector_map: ConformalMapHandle) -> None:
        x = np.linspace(-10.0, 10.0, 21)
        assert sector_map.reflection_seam(x) < 1e-8 * np.max(np.abs(sector_map.entire(x)))
        z = np.array([2.0 + 1.0j])
        np.testing.assert_allclose(sector_map.entire(z), np.conj(sector_map.entire(np.conj(z))))

    def test_axis_growth(self, sector_map: ConformalMapHandle) -> None:
        for r in (1e3, 1e4):
            assert sector_map.product.phi_axis(r) / math.sqrt(r) == pytest.approx(1.0, abs=0.1)

    @pytest.mark.slow
    def test_truncation_stability(self, sector_map: ConformalMapHandle) -> None:
        """Doubling truncation_N once more moves phi by less than the certified accuracy."""
        spec = sector_map.spec
        single = MapOptions(max_doublings=0)
        finer = build_conformal_map(spec.extended(2 * spec.truncation_N), single)
        grid = reference_grid()
        change = np.max(np.abs(finer.product.log_g(grid) - sector_map.product.log_g(grid)))
        assert change < MapOptions().accuracy_target

    @pytest.mark.slow
    def test_order(self, sector_map: ConformalMapHandle) -> None:
        radii = np.geomspace(1e2, 1e4, 5)
        logs = np.log([max_modulus_log(sector_map, float(r)) for r in radii])
        slope = np.polyfit(np.log(radii), logs, 1)[0]
        assert slope == pytest.approx(0.5, abs=0.05)


class TestUniformMap:
    @pytest.mark.slow
    def test_cosine(self, uniform_map: ConformalMapHandle) -> None:
        """g for the uniform comb satisfies g'^2 + a^2 g^2 = a^2."""
        xs = np.linspace(-2.0, 2.0, 10)
        z = (xs[None, :] + 1j * np.linspace(-1.5, 1.5, 5)[:, None]).ravel()
        g = uniform_map.entire(z)
        gp = uniform_map.entire_derivative(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            freq_sq = gp**2 / (1.0 - g**2)
        a_sq = float(np.median(freq_sq.real[np.isfinite(freq_sq)]))
        residual = np.abs(gp**2 + a_sq * g**2 - a_sq) / (a_sq * np.maximum(1.0, np.abs(g) ** 2))
        assert np.max(residual) < 1e-3
