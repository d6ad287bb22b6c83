"""Tests for the function families and their pole atlases."""

import cmath
import math
from dataclasses import replace

import numpy as np
import pytest
from pytest_mock import MockerFixture

from escapedim.comb_conformal import ConformalMapHandle
from escapedim.config import RunConfig
from escapedim.elliptic_core import EllipticConfig, h_array, nearest_pole_distance
from escapedim.errors import CompletenessError, ConfigurationError, PoleAtOrigin, PoleOfF
from escapedim.speiser_constructions import (
    DELTA_SECTOR,
    FunctionHandle,
    FunctionKind,
    PoleAtlas,
    affine_rescale,
    arcsin_from_log,
    arcsin_stable,
    check_completeness,
    coefficient_errors,
    compose_f_poles,
    construct,
    critical_points_xk,
    delta_bound_report,
    eval_F,
    make_composed_handle,
    make_F_handle,
    make_power_handle,
    make_scaled_handle,
    make_theorem2_handle,
    poles_of_F,
    power_of_function,
    power_trick,
    restrict_to_sector,
    scaled_family,
    seed_lattice,
    seed_poles,
    theorem2_poles,
)


@pytest.fixture
def small_atlas() -> PoleAtlas:
    locations = np.array([3.0 + 4.0j, 1.0 + 0j, -2.0j, 1.0 + 1e-12j])
    coefficients = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.complex128)
    return PoleAtlas.from_arrays(locations, coefficients, M=1, radius=5.0, provenance="test")


@pytest.fixture(scope="module")
def composed_atlas(sector_map: ConformalMapHandle) -> PoleAtlas:
    """Poles of F o g for the order-1/2 sector comb within |z| <= 64."""
    return compose_f_poles(sector_map, EllipticConfig(M=1), 64.0)


class TestPoleAtlas:
    """Canonical ordering and deduplication."""

    def test_sorted_and_deduplicated(self, small_atlas: PoleAtlas) -> None:
        assert len(small_atlas) == 3
        np.testing.assert_allclose(small_atlas.moduli, [1.0, 2.0, 5.0])
        assert small_atlas.coefficients[0] == 2.0

    def test_within(self, small_atlas: PoleAtlas) -> None:
        inner = small_atlas.within(2.5)
        assert len(inner) == 2
        assert inner.radius == 2.5

    def test_records(self, small_atlas: PoleAtlas) -> None:
        record = small_atlas.records[1]
        assert record.location == -2.0j
        assert record.multiplicity == 1

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ConfigurationError):
            PoleAtlas(np.zeros(2, complex), np.zeros(3, complex), M=1, radius=1.0, provenance="x")


class TestHelpers:
    def test_critical_points_conventions(self) -> None:
        assert critical_points_xk(0) == 1.0
        assert critical_points_xk(0, "zero_at_origin") == 0.0
        assert critical_points_xk(-3) == -critical_points_xk(3)
        with pytest.raises(ConfigurationError):
            critical_points_xk(1, "other")

    def test_arcsin(self) -> None:
        z = np.array([0.3 + 0.1j, -2.0 + 5.0j, 1e9 + 1e9j, -3e10j])
        w = arcsin_stable(z)
        np.testing.assert_allclose(np.sin(w), z, rtol=1e-9)

    def test_arcsin_from_log(self) -> None:
        logs = np.array([0.1 + 0.2j, 40.0 - 1.0j])
        w = arcsin_from_log(logs)
        np.testing.assert_allclose(np.log(np.sin(w)).real, logs.real, rtol=1e-9)


class TestHandles:
    def test_missing_parts(self, elliptic_config: EllipticConfig) -> None:
        with pytest.raises(ConfigurationError):
            FunctionHandle(kind=FunctionKind.POWER_TRICK, config=elliptic_config, evaluator=np.sin)

    def test_F_needs_unit_kappa(self) -> None:
        with pytest.raises(ConfigurationError):
            make_F_handle(EllipticConfig(kappa=0.5))

    def test_F_is_even(self, elliptic_config: EllipticConfig) -> None:
        F = make_F_handle(elliptic_config)
        z = np.array([0.4 + 0.3j, 2.0 - 1.0j, 10.0 + 0j])
        np.testing.assert_allclose(F(-z), F(z), rtol=1e-9)
        assert abs(F.eval(0j)) < 1e-12

    def test_F_critical_values(self, elliptic_config: EllipticConfig) -> None:
        """F(1) = a and F(cosh(pi / 2)) = 1."""
        F = make_F_handle(elliptic_config)
        assert F.eval(1.0 + 0j) == pytest.approx(elliptic_config.critical_a, abs=1e-9)
        assert F.eval(complex(math.cosh(math.pi / 2.0))) == pytest.approx(1.0, abs=1e-9)

    def test_eval_F_at_pole(self, elliptic_config: EllipticConfig) -> None:
        atlas = poles_of_F(10.0, elliptic_config)
        with pytest.raises(PoleOfF):
            eval_F(complex(atlas.locations[0]), elliptic_config)

    def test_power_and_scaled(self, elliptic_config: EllipticConfig) -> None:
        F = make_F_handle(elliptic_config)
        z = np.array([0.5 + 0.2j, 1.3 - 0.4j])
        np.testing.assert_allclose(make_power_handle(F, 3)(z), F(z**3))
        np.testing.assert_allclose(make_scaled_handle(F, 0.5)(z), F(0.5 * z))
        with pytest.raises(ConfigurationError):
            make_scaled_handle(F, 1.5)
        assert "power_trick" in make_power_handle(F, 3).descriptor()


class TestPolesOfF:
    def test_atlas(self, elliptic_config: EllipticConfig) -> None:
        atlas = poles_of_F(100.0, elliptic_config)
        assert len(atlas) > 0
        assert np.all(atlas.moduli <= 100.0)
        assert np.all(np.diff(atlas.moduli) >= 0.0)
        assert atlas.metadata["C"] > 0.0

    def test_coefficients(self, elliptic_config: EllipticConfig) -> None:
        atlas = poles_of_F(100.0, elliptic_config)
        errors = coefficient_errors(make_F_handle(elliptic_config), atlas, [0, 1, len(atlas) - 1])
        assert np.max(errors) < 1e-4

    def test_log_density(self, elliptic_config: EllipticConfig) -> None:
        """n(r) grows like log r."""
        atlas = poles_of_F(1e8, elliptic_config)
        radii = np.array([1e4, 1e6, 1e8])
        counts = np.array([np.sum(atlas.moduli <= r) for r in radii])
        ratios = counts / np.log(radii)
        assert ratios.max() / ratios.min() < 1.3

    def test_radius_floor(self, elliptic_config: EllipticConfig) -> None:
        with pytest.raises(ConfigurationError):
            poles_of_F(1.0, elliptic_config)

    def test_completeness(self, elliptic_config: EllipticConfig) -> None:
        F = make_F_handle(elliptic_config)
        atlas = poles_of_F(4.0, elliptic_config)
        assert check_completeness(F, atlas, radius=2.0, spacing=0.02) >= 1

    def test_incomplete_atlas_detected(self, elliptic_config: EllipticConfig) -> None:
        F = make_F_handle(elliptic_config)
        full = poles_of_F(4.0, elliptic_config)
        broken = PoleAtlas.from_arrays(
            full.locations[1:], full.coefficients[1:], M=1, radius=4.0, provenance="broken"
        )
        with pytest.raises(CompletenessError):
            check_completeness(F, broken, radius=2.0, spacing=0.02)


class TestTheorem2:
    def test_poles(self) -> None:
        atlas = theorem2_poles(2.0, EllipticConfig(M=1), perturb=True)
        assert len(atlas) > 0
        assert np.all(atlas.moduli <= 2.0)
        assert {"kappa", "delta", "lattice_bound_max_ratio", "h_pole_count"} <= set(atlas.metadata)
        config = EllipticConfig(M=1, kappa=atlas.metadata["kappa"])
        handle = make_theorem2_handle(config)
        errors = coefficient_errors(handle, atlas, [0, len(atlas) - 1])
        assert np.max(errors) < 1e-4

    def test_exponentials_are_poles_of_H(self) -> None:
        atlas = theorem2_poles(2.0, EllipticConfig(M=1), perturb=True)
        config = EllipticConfig(M=1, kappa=atlas.metadata["kappa"])
        for a in atlas.locations:
            assert nearest_pole_distance(cmath.exp(a), config, scale=config.kappa) < 1e-8

    def test_H_matches(self) -> None:
        config = EllipticConfig(M=2)
        handle = make_theorem2_handle(config)
        z = np.array([0.3 + 0.2j, -1.0 + 2.0j])
        np.testing.assert_allclose(handle(z), h_array(np.exp(z), config))

    def test_strip_matches_full_atlas(self) -> None:
        config = EllipticConfig(M=1)
        full = theorem2_poles(3.0, config, perturb=True)
        strip = theorem2_poles(3.0, config, perturb=True, max_real=2.0)
        assert strip.metadata["max_real"] == 2.0
        assert full.metadata["max_real"] is None
        expected = full.locations[full.locations.real <= 2.0]
        assert len(strip) == len(expected)
        np.testing.assert_allclose(strip.locations, expected, rtol=0, atol=1e-12)

    @pytest.mark.slow
    def test_grid_oracle_at_radius_8(self) -> None:
        atlas = theorem2_poles(8.0, EllipticConfig(M=1), perturb=True, max_real=2.0)
        assert np.all(atlas.moduli <= 8.0)
        assert np.all(atlas.locations.real <= 2.0)
        assert float(np.max(np.abs(atlas.locations.imag))) > 7.0
        handle = make_theorem2_handle(EllipticConfig(M=1, kappa=atlas.metadata["kappa"]))
        assert check_completeness(handle, atlas, radius=8.0) >= 1

    def test_max_real_needs_theorem2(self) -> None:
        construction = construct(RunConfig(rho=0.0))
        with pytest.raises(ConfigurationError, match="max_real"):
            construction.atlas(10.0, max_real=1.0)


class TestAtlasTransforms:
    def test_power_trick(self, elliptic_config: EllipticConfig) -> None:
        base = poles_of_F(100.0, elliptic_config)
        tricked = power_trick(base, 2)
        assert len(tricked) == 2 * len(base)
        assert tricked.radius == pytest.approx(10.0)
        squares = tricked.locations**2
        distance = np.min(np.abs(squares[:, None] - base.locations[None, :]), axis=1)
        assert np.max(distance / np.abs(squares)) < 1e-12
        assert power_trick(base, 1) is base

    def test_power_trick_origin(self) -> None:
        atlas = PoleAtlas.from_arrays([0j, 1.0 + 0j], [1.0, 1.0], M=1, radius=2.0, provenance="x")
        with pytest.raises(PoleAtOrigin):
            power_trick(atlas, 2)

    def test_power_of_function(self, small_atlas: PoleAtlas) -> None:
        squared = power_of_function(small_atlas, 2)
        assert squared.M == 2
        np.testing.assert_array_equal(squared.locations, small_atlas.locations)

    def test_scaled(self, small_atlas: PoleAtlas) -> None:
        scaled = scaled_family(small_atlas, 0.5)
        np.testing.assert_allclose(scaled.locations, 2.0 * small_atlas.locations)
        np.testing.assert_allclose(scaled.coefficients, 2.0 * small_atlas.coefficients)
        assert scaled.radius == 10.0
        with pytest.raises(ConfigurationError):
            scaled_family(small_atlas, 0.0)

    def test_restrict_to_sector(self, elliptic_config: EllipticConfig) -> None:
        atlas = restrict_to_sector(poles_of_F(1e4, elliptic_config), annulus=(10.0, 1e3))
        angles = np.angle(atlas.locations)
        assert np.all((angles > DELTA_SECTOR[0]) & (angles < DELTA_SECTOR[1]))
        assert atlas.sector_filter == DELTA_SECTOR
        assert atlas.radius == 1e3

    def test_affine_rescale(self, elliptic_config: EllipticConfig) -> None:
        atlas = poles_of_F(100.0, elliptic_config)
        handle = affine_rescale(elliptic_config, atlas)
        scale, shift = handle.parts["affine"]
        assert handle.metadata["critical_values"][:2] == [atlas.locations[0], atlas.locations[1]]
        np.testing.assert_allclose(
            handle.parts["atlas"].coefficients, atlas.coefficients * scale
        )
        F = make_F_handle(elliptic_config)
        assert handle.eval(0.3j) == pytest.approx(scale * F.eval(0.3j) + shift)


class TestSeedLattice:
    def test_exponentials_are_poles_of_F(self, elliptic_config: EllipticConfig) -> None:
        lattice = seed_lattice(elliptic_config, range(-2, 3), range(4))
        assert lattice.u.shape == (5, 4)
        expected = np.broadcast_to(lattice.q, (5, 4))
        np.testing.assert_allclose(np.exp(lattice.u), expected, rtol=1e-11)
        for w in arcsin_stable(lattice.q):
            assert nearest_pole_distance(complex(w), elliptic_config) < 1e-8

    def test_lattice_spacing(self, elliptic_config: EllipticConfig) -> None:
        lattice = seed_lattice(elliptic_config, range(0, 2), range(5, 7))
        assert lattice.u[1, 0] - lattice.u[0, 0] == pytest.approx(2j * math.pi)
        assert (lattice.u[0, 1] - lattice.u[0, 0]).real == pytest.approx(math.pi, abs=1e-9)


@pytest.mark.slow
class TestComposedPoles:
    """Poles of F o g for the order-1/2 sector comb."""

    def test_seed_identity(self, sector_map: ConformalMapHandle) -> None:
        seeds = seed_poles(sector_map, EllipticConfig(M=1), 40.0)
        assert len(seeds.z) > 0
        assert np.all(seeds.z.imag <= 0.0)
        assert np.max(seeds.identity_residual(sector_map)) < 1e-6

    def test_atlas_holds_seed_preimages(
        self, sector_map: ConformalMapHandle, composed_atlas: PoleAtlas
    ) -> None:
        assert composed_atlas.metadata["seed_count"] > 0
        seeds = seed_poles(sector_map, EllipticConfig(M=1), composed_atlas.metadata["w_bound"])
        inside = seeds.z[np.abs(seeds.z) <= composed_atlas.radius]
        assert len(inside) > 0
        for z in inside:
            assert np.min(np.abs(composed_atlas.locations - z)) < 1e-6 * max(1.0, abs(z))

    def test_dropped_branch_detected(
        self, sector_map: ConformalMapHandle, mocker: MockerFixture
    ) -> None:
        mocker.patch(
            "escapedim.speiser_constructions._sector_prefilter",
            side_effect=lambda w, alpha, sector: np.zeros(len(w), dtype=bool),
        )
        with pytest.raises(CompletenessError) as exc_info:
            compose_f_poles(sector_map, EllipticConfig(M=1), 64.0)
        assert exc_info.value.details["missing"] > 0

    def test_delta_bound_report(self, composed_atlas: PoleAtlas) -> None:
        meta = composed_atlas.metadata
        in_delta = restrict_to_sector(composed_atlas, DELTA_SECTOR)
        assert meta["delta_count"] == len(in_delta) > 0
        assert meta["delta_ratio_min_outer"] > 0.5
        assert 0.0 <= meta["delta_fraction_below"] <= 1.0
        assert meta["C"] > 0.0

    def test_chain_rule_law(
        self, sector_map: ConformalMapHandle, composed_atlas: PoleAtlas
    ) -> None:
        handle = make_composed_handle(sector_map, EllipticConfig(M=1))
        n = len(composed_atlas)
        errors = coefficient_errors(handle, composed_atlas, [0, n // 4, n // 2, n - 1])
        assert np.max(errors) < 1e-4

    def test_count_slope_in_delta(self, composed_atlas: PoleAtlas) -> None:
        moduli = restrict_to_sector(composed_atlas, DELTA_SECTOR).moduli
        radii = np.geomspace(16.0, 64.0, 5)
        counts = np.array([np.sum(moduli <= r) for r in radii], dtype=np.float64)
        assert np.all(counts > 0)
        slope = np.polyfit(np.log(radii), np.log(counts), 1)[0]
        assert slope == pytest.approx(2.0 * composed_atlas.metadata["alpha"], abs=0.2)

    def test_real_poles_are_symmetric(self, composed_atlas: PoleAtlas) -> None:
        real = composed_atlas.locations[np.abs(composed_atlas.locations.imag) < 1e-12].real
        np.testing.assert_allclose(np.sort(real), np.sort(-real), atol=1e-9)


class TestDeltaBoundReport:
    def test_ratios(self) -> None:
        moduli = np.array([1.0, 2.0, 3.0, 4.0])
        locations = np.concatenate([moduli * -1j, [2.0j]])
        coefficients = np.concatenate([8.0 * np.sqrt(moduli), [1.0]]).astype(np.complex128)
        report = delta_bound_report(locations, coefficients, alpha=0.5, c_const=2.0)
        assert report["delta_count"] == 4
        assert report["delta_ratio_min_outer"] == pytest.approx(2.0)
        assert report["delta_fraction_below"] == 0.0

    def test_without_constant(self) -> None:
        report = delta_bound_report(np.array([-1j]), np.array([1.0 + 0j]), 0.5, math.nan)
        assert report == {"delta_count": 1}


class TestConstruct:
    def test_F_route(self) -> None:
        construction = construct(RunConfig(rho=0.0))
        assert construction.route == FunctionKind.F_ARCSIN
        data = construction.to_dict()
        assert data["kind"] == "F_arcsin"
        assert data["comb"] is None
        assert "theoretical" not in data

    def test_F_route_atlas(self) -> None:
        construction = construct(RunConfig(rho=0.0, M=2, **{"lambda": 0.5}))
        atlas = construction.atlas(50.0)
        assert atlas.M == 2
        assert np.all(atlas.moduli <= 50.0 * (1.0 + 1e-12))

    def test_theorem2_route(self) -> None:
        construction = construct(RunConfig(theorem2=True))
        assert construction.rho == math.inf
        assert len(construction.atlas(2.0)) > 0

    def test_handle_follows_perturbed_kappa(self) -> None:
        construction = construct(RunConfig(theorem2=True))
        atlas = construction.atlas(2.0)
        assert construction.handle_for(atlas) is construction.handle
        kappa = construction.config.kappa * 0.99
        moved = replace(atlas, metadata={**atlas.metadata, "kappa": kappa})
        assert f"kappa={kappa}" in construction.handle_for(moved).descriptor()

    @pytest.mark.slow
    def test_composed_route(self) -> None:
        construction = construct(RunConfig(M=2, rho=1.0))
        assert construction.spec is not None
        assert construction.spec.alpha == 0.5
        atlas = construction.atlas(64.0)
        assert atlas.M == 2
        errors = coefficient_errors(construction.handle, atlas, [0, len(atlas) // 2])
        assert np.max(errors) < 1e-6
        assert construction.to_dict()["map"]["alpha"] == 0.5

    @pytest.mark.slow
    def test_power_route(self) -> None:
        construction = construct(RunConfig(rho=3.0))
        assert construction.route == FunctionKind.POWER_TRICK
        assert construction.N == 3
        atlas = construction.atlas(8.0)
        assert atlas.metadata["N"] == 3
