"""Tests for critical exponents, growth curves and the covering bound."""

import math
from collections.abc import Callable
from dataclasses import replace

import numpy as np
import pytest

from escapedim.acceptance import power_law_atlas
from escapedim.config import DimensionOptions
from escapedim.elliptic_core import EllipticConfig, PoleRecord
from escapedim.errors import (
    ConfigurationError,
    EvaluationRangeExceeded,
    HypothesisViolated,
    IncompatibleRanges,
    InsufficientBlocks,
    PreconditionRadius,
)
from escapedim.escape_dimension import (
    DimensionEstimate,
    DimensionMethod,
    GrowthCurve,
    GrowthSample,
    composite_growth_bounds,
    counting_functions,
    covering_sum_bound,
    critical_exponent,
    dyadic_blocks,
    growth_curve,
    lemma2b_diagnostics,
    partial_sum_bisection,
    series_term,
    sigma,
    theorem2_divergence_indicators,
    theorem2_lattice_sums,
    theoretical_bound,
)
from escapedim.speiser_constructions import PoleAtlas, make_F_handle, poles_of_F, theorem2_poles

Factory = Callable[..., PoleAtlas]


class TestTheoreticalBound:
    @pytest.mark.parametrize(
        ("M", "rho", "expected"),
        [(1, 1.0, 2.0 / 3.0), (2, 1.0, 1.0), (1, 0.0, 0.0), (3, 2.0, 1.5), (1, math.inf, 2.0)],
    )
    def test_values(self, M: int, rho: float, expected: float) -> None:
        assert theoretical_bound(M, rho) == pytest.approx(expected)

    def test_invalid(self) -> None:
        with pytest.raises(ConfigurationError):
            theoretical_bound(0, 1.0)
        with pytest.raises(ConfigurationError):
            theoretical_bound(1, -0.5)

    def test_series_term(self) -> None:
        record = PoleRecord(location=2.0 + 0j, multiplicity=1, coefficient=1.0 + 0j)
        assert series_term(record, 1.0, 1) == pytest.approx(0.25)
        assert series_term(record, 0.0, 1) == 1.0


class TestBlocks:
    def test_counts_at_zero(self, synthetic_atlas: Factory) -> None:
        """At t = 0 every term is 1, so S_l counts the poles in [2^l, 2^{l+1})."""
        blocks = dyadic_blocks(synthetic_atlas(1 << 10), 0.0)
        for level, total in blocks[:-1]:
            assert total == pytest.approx(2.0**level)

    def test_sigma_slope(self, synthetic_atlas: Factory) -> None:
        atlas = synthetic_atlas()
        above = sigma(atlas, 1.0)
        below = sigma(atlas, 0.25)
        assert above.sigma == pytest.approx(1.0, abs=0.05)
        assert above.converges
        assert below.sigma == pytest.approx(-0.5, abs=0.05)
        assert not below.converges


class TestCriticalExponent:
    """Recovery of t* = 1/(1 + 1/M - gamma) on power-law atlases."""

    @pytest.mark.parametrize(
        ("gamma", "M", "expected"),
        [(0.0, 1, 0.5), (1.0, 1, 1.0), (0.0, 2, 2.0 / 3.0), (1.5, 1, 2.0)],
    )
    def test_recovery(self, synthetic_atlas: Factory, gamma: float, M: int, expected: float) -> None:
        estimate = critical_exponent(synthetic_atlas(gamma=gamma, M=M))
        assert estimate.t_star == pytest.approx(expected, abs=0.05)
        assert estimate.t_bracket[0] <= estimate.t_star <= estimate.t_bracket[1]
        assert estimate.method == DimensionMethod.BLOCK_DECAY_FIT

    def test_bisection_agrees(self, synthetic_atlas: Factory) -> None:
        estimate = partial_sum_bisection(synthetic_atlas())
        assert estimate.t_star == pytest.approx(0.5, abs=0.05)
        assert estimate.method == DimensionMethod.PARTIAL_SUM_BISECTION

    def test_theoretical_reported(self, synthetic_atlas: Factory) -> None:
        estimate = critical_exponent(synthetic_atlas(), DimensionOptions(rho=1.0))
        assert estimate.theoretical == pytest.approx(2.0 / 3.0)
        assert estimate.gap == pytest.approx(abs(estimate.t_star - 2.0 / 3.0))
        data = estimate.to_dict()
        assert data["method"] == "block_decay_fit"
        assert data["rho"] == 1.0

    def test_empty_tail_gives_zero(self) -> None:
        atlas = replace(power_law_atlas(4, 0.0), radius=4096.0)
        estimate = critical_exponent(atlas)
        assert estimate.t_star == 0.0
        assert estimate.t_bracket == (0.0, 0.0)

    def test_insufficient_blocks(self) -> None:
        with pytest.raises(InsufficientBlocks):
            critical_exponent(power_law_atlas(16, 0.0))

    def test_estimate_validation(self) -> None:
        with pytest.raises(ConfigurationError):
            DimensionEstimate(
                t_star=0.9,
                t_bracket=(0.4, 0.6),
                block_sums=[],
                method=DimensionMethod.BLOCK_DECAY_FIT,
                theoretical=None,
                M=1,
                rho=None,
            )


class TestCountingFunctions:
    def test_exact_integral(self) -> None:
        atlas = power_law_atlas(4, 0.0)
        n_r, big_n = counting_functions(atlas, 4.0)
        assert n_r == 4
        assert big_n == pytest.approx(math.log(32.0 / 3.0))

    def test_multiplicity(self) -> None:
        n_r, big_n = counting_functions(power_law_atlas(4, 0.0, M=2), 4.0)
        assert n_r == 8
        assert big_n == pytest.approx(2.0 * math.log(32.0 / 3.0))

    def test_range(self) -> None:
        with pytest.raises(EvaluationRangeExceeded):
            counting_functions(power_law_atlas(4, 0.0), 8.0)


class TestGrowthCurve:
    def test_needs_atlas(self, elliptic_config: EllipticConfig) -> None:
        with pytest.raises(ConfigurationError):
            growth_curve(make_F_handle(elliptic_config), [10.0, 100.0])

    def test_increasing_radii(self, elliptic_config: EllipticConfig) -> None:
        atlas = poles_of_F(100.0, elliptic_config)
        with pytest.raises(ConfigurationError):
            growth_curve(make_F_handle(elliptic_config), [50.0, 10.0], atlas)

    def test_beyond_atlas(self, elliptic_config: EllipticConfig) -> None:
        atlas = poles_of_F(100.0, elliptic_config)
        with pytest.raises(EvaluationRangeExceeded):
            growth_curve(make_F_handle(elliptic_config), [10.0, 1000.0], atlas)

    @pytest.mark.slow
    def test_F_loglog_density(self, elliptic_config: EllipticConfig) -> None:
        """T(r, F) grows like (log r)^2."""
        atlas = poles_of_F(1e6, elliptic_config)
        radii = np.geomspace(1e2, 1e6, 8)
        curve = growth_curve(make_F_handle(elliptic_config), radii, atlas)
        assert curve.loglog_density == pytest.approx(2.0, abs=0.15)
        assert curve.to_dict()["metadata"]["kind"] == "meromorphic"

    def test_composite_radii_must_match(self) -> None:
        def curve(radii: list[float]) -> GrowthCurve:
            samples = [GrowthSample(r=r, n_r=0, N_r=0.0, T_r=r, logM_r=r) for r in radii]
            return GrowthCurve(samples=samples, order_fit=1.0, loglog_density=1.0, p_fit=None)

        with pytest.raises(IncompatibleRanges):
            composite_growth_bounds(curve([10.0, 20.0]), curve([1.0, 2.0]), curve([1.0, 3.0]))


class TestLogCorrectedSplit:
    def test_hypothesis(self, synthetic_atlas: Factory) -> None:
        with pytest.raises(HypothesisViolated):
            lemma2b_diagnostics(synthetic_atlas(1 << 10), rho=1.0, p=2.5)

    def test_holder_inequality(self, synthetic_atlas: Factory) -> None:
        report = lemma2b_diagnostics(synthetic_atlas(1 << 10), rho=1.0, p=4.0)
        assert report["holder_holds"]
        assert report["exponent"] == pytest.approx(3.0 * (2.0 - 2.0 / 3.0) / 2.0)
        assert report["exponent_exceeds_one"]


class TestCoveringBound:
    def test_precondition(self, synthetic_atlas: Factory) -> None:
        with pytest.raises(PreconditionRadius):
            covering_sum_bound(synthetic_atlas(1 << 10), 1.0, 16.0, 1)

    def test_contracts_above_critical_exponent(self, synthetic_atlas: Factory) -> None:
        atlas = synthetic_atlas(1 << 10)
        first = covering_sum_bound(atlas, 1.0, 64.0, 1)
        second = covering_sum_bound(atlas, 1.0, 64.0, 2)
        assert first.contracts
        assert second.value < first.value
        assert first.bracket == pytest.approx(48.0 * sum(1.0 / j**2 for j in range(64, 1025)))


@pytest.mark.slow
class TestTheorem2Sums:
    """Lattice sums for f = H o exp, whose escaping set has dimension 2."""

    @pytest.fixture(scope="class")
    def atlas(self) -> PoleAtlas:
        return theorem2_poles(2.0, EllipticConfig(M=1), perturb=True)

    def test_divergent_side(self, atlas: PoleAtlas) -> None:
        report = theorem2_lattice_sums(atlas, 1.95, 0.05)
        assert report["k_sum_bound_holds"]
        assert report["log_slope"] > 0.0
        assert report["window_growth_exponent"] >= -0.05

    def test_convergent_side(self, atlas: PoleAtlas) -> None:
        report = theorem2_lattice_sums(atlas, 2.0, 0.2)
        assert report["window_growth_exponent"] < -0.05

    def test_indicators(self, atlas: PoleAtlas) -> None:
        indicators = theorem2_divergence_indicators(atlas, ts=(1.0, 1.9))
        assert indicators == {1.0: True, 1.9: True}
