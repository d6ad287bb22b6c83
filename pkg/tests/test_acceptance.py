"""Tests for the acceptance suite."""

import numpy as np
import pytest
from pytest_mock import MockerFixture

from escapedim.acceptance import (
    QUICK_CRITERIA,
    AcceptanceReport,
    AcceptanceSuite,
    CriterionResult,
    power_law_atlas,
)
from escapedim.config import AcceptanceConfig
from escapedim.errors import InsufficientBlocks


def _stub(number: int, passed: bool = True) -> list[CriterionResult]:
    return [CriterionResult(number, f"criterion {number}", passed, {"value": 1.0})]


@pytest.fixture
def stubbed_suite() -> AcceptanceSuite:
    """Suite whose criteria return immediately."""
    suite = AcceptanceSuite(quick=True)
    for number, (name, _) in list(suite.criteria.items()):
        suite.criteria[number] = (name, lambda n=number: _stub(n))
    return suite


class TestPowerLawAtlas:
    def test_shape(self) -> None:
        atlas = power_law_atlas(64, 1.0, M=2)
        assert len(atlas) == 64
        assert atlas.M == 2
        np.testing.assert_allclose(np.sort(atlas.moduli), np.arange(1, 65))
        np.testing.assert_allclose(np.abs(atlas.coefficients), atlas.moduli)


class TestReport:
    def test_seconds_not_serialized(self) -> None:
        result = CriterionResult(1, "x", True, {"a": 1}, seconds=3.2)
        assert "seconds" not in result.to_dict()
        assert result == CriterionResult(1, "x", True, {"a": 1})

    def test_passed(self) -> None:
        assert not AcceptanceReport([], quick=False, halve_teeth=False).passed
        report = AcceptanceReport(_stub(1) + _stub(2, passed=False), quick=False, halve_teeth=False)
        assert not report.passed
        assert [r.number for r in report.failures] == [2]
        assert report.to_dict()["criteria"][1]["passed"] is False


class TestSuiteRun:
    def test_quick_selection(self, stubbed_suite: AcceptanceSuite) -> None:
        report = stubbed_suite.run()
        assert [r.number for r in report.results] == list(QUICK_CRITERIA)
        assert report.passed
        assert report.quick

    def test_only(self, stubbed_suite: AcceptanceSuite) -> None:
        report = stubbed_suite.run([11, 4])
        assert [r.number for r in report.results] == [11, 4]

    def test_halved_run_skips_negative_control(self) -> None:
        suite = AcceptanceSuite(halve_teeth=True)
        for number, (name, _) in list(suite.criteria.items()):
            suite.criteria[number] = (name, lambda n=number: _stub(n))
        numbers = [r.number for r in suite.run().results]
        assert 12 not in numbers
        assert 11 in numbers

    def test_errors_become_failures(
        self, stubbed_suite: AcceptanceSuite, mocker: MockerFixture
    ) -> None:
        failing = mocker.Mock(side_effect=InsufficientBlocks(3, 8))
        stubbed_suite.criteria[6] = ("synthetic dimension recovery", failing)
        report = stubbed_suite.run([1, 6])
        assert [r.passed for r in report.results] == [True, False]
        assert "3" in report.results[1].message
        assert report.results[1].seconds >= 0.0

    def test_radius(self) -> None:
        config = AcceptanceConfig(atlas_radius=512.0, quick_atlas_radius=64.0)
        assert AcceptanceSuite(config, quick=True).radius == 64.0
        assert AcceptanceSuite(config).radius == 512.0


class TestCriteria:
    """The cheap criteria, run for real."""

    def test_elliptic_identities(self) -> None:
        (result,) = AcceptanceSuite().elliptic_identities()
        assert result.passed, result.measured

    def test_critical_value_structure(self) -> None:
        (result,) = AcceptanceSuite().critical_value_structure()
        assert result.passed, result.measured

    @pytest.mark.slow
    def test_synthetic_recovery(self) -> None:
        (result,) = AcceptanceSuite().synthetic_recovery()
        assert result.passed, result.measured
        assert set(result.measured) == {"0.5", "1.0", "1.5"}

    @pytest.mark.slow
    def test_theorem2_sums(self) -> None:
        (result,) = AcceptanceSuite().theorem2_sums()
        assert result.passed, result.measured


class TestThresholds:
    """Criteria judged against stubbed measurements."""

    def test_default_values(self) -> None:
        th = AcceptanceConfig().thresholds
        assert th.warschawski_oscillation == 1e-3
        assert th.phi_ratio_radii == (1e2, 1e4)
        assert th.composite_order == 0.1
        assert AcceptanceConfig().atlas_radius == 1e4

    def test_comb_asymptotics_fails_above_threshold(self, mocker: MockerFixture) -> None:
        suite = AcceptanceSuite()
        handle = mocker.Mock()
        handle.product.phi_axis.side_effect = lambda r: 1.18 * r**0.5
        handle.warschawski.oscillation = 0.0243
        handle.spec.truncation_N = 64
        handle.accuracy = 1e-4
        handle.normalization_shift = 0.0
        sector = mocker.patch.object(suite, "sector_map", return_value=handle)
        (result,) = suite.comb_asymptotics()
        assert not result.passed
        assert result.measured["phi_ratio_deviation"] == pytest.approx(0.18)
        assert result.thresholds["phi_ratio_radii"] == [1e2, 1e4]
        options = sector.call_args.args[1]
        assert options.accuracy_target == AcceptanceConfig().comb_accuracy

    def test_comb_asymptotics_passes_within_threshold(self, mocker: MockerFixture) -> None:
        suite = AcceptanceSuite()
        handle = mocker.Mock()
        handle.product.phi_axis.side_effect = lambda r: 1.05 * r**0.5
        handle.warschawski.oscillation = 5e-4
        handle.spec.truncation_N = 64
        handle.accuracy = 1e-4
        handle.normalization_shift = 0.0
        mocker.patch.object(suite, "sector_map", return_value=handle)
        (result,) = suite.comb_asymptotics()
        assert result.passed, result.measured

    def test_trend_runs_every_case_in_quick_mode(self, mocker: MockerFixture) -> None:
        suite = AcceptanceSuite(quick=True)
        mocker.patch.object(suite, "atlas", return_value=power_law_atlas(1 << 10, 0.0))
        mocker.patch(
            "escapedim.acceptance.sigma",
            side_effect=lambda atlas, t: mocker.Mock(converges=t > 0.9, sigma=t - 0.9),
        )
        mocker.patch(
            "escapedim.acceptance.critical_exponent", return_value=mocker.Mock(t_star=0.5)
        )
        trend, counts = suite.dimension_trend()
        assert set(trend.measured) == {"M=1,rho=1.0", "M=2,rho=1.0", "M=1,rho=1.5"}
        assert set(counts.measured) == set(trend.measured)

    @pytest.mark.parametrize(
        "powered_t_star, passed",
        [(0.51, True), (0.6, False)],
    )
    def test_power_covariance_uses_bracket_width(
        self, mocker: MockerFixture, powered_t_star: float, passed: bool
    ) -> None:
        suite = AcceptanceSuite()
        mocker.patch.object(suite, "atlas", return_value=power_law_atlas(64, 0.0))
        mocker.patch(
            "escapedim.acceptance.critical_exponent",
            side_effect=[
                mocker.Mock(t_star=0.5, t_bracket=(0.49, 0.51)),
                mocker.Mock(t_star=powered_t_star, t_bracket=(0.49, 0.51)),
            ],
        )
        (result,) = suite.power_covariance()
        assert result.passed is passed
        assert result.thresholds["bracket_width"] == pytest.approx(0.02)
