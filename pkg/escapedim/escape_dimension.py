"""
Escaping-set dimension from pole atlases.

For poles a_j of multiplicity M with f(z) ~ (b_j / (z - a_j))^M, dim I(f) is the
infimum of t > 0 for which

    sum_j (|b_j| / |a_j|^{1 + 1/M})^t

converges. Atlases are finite, so convergence is judged from the decay of the dyadic
block sums S_l (poles with 2^l <= |a| < 2^{l+1}): S_l ~ l^power 2^{-sigma(t) l}, and
the series converges iff sigma(t) > 0, or sigma(t) = 0 with power < -1.

Also here: Nevanlinna growth curves, the Hoelder split of S_l used for the
log-corrected growth case, Theorem-2 lattice sums and the covering-sum bound.
"""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.special import beta as beta_function

from .comb_conformal import ConformalMapHandle, max_modulus_log
from .config import DimensionOptions, GrowthOptions
from .elliptic_core import EllipticConfig, PoleRecord, fundamental_poles
from .errors import (
    ConfigurationError,
    EvaluationRangeExceeded,
    HypothesisViolated,
    IncompatibleRanges,
    InsufficientBlocks,
    NonMonotone,
    PreconditionRadius,
)
from .logging_config import get_logger
from .speiser_constructions import FunctionHandle, PoleAtlas
from .utils import canonical_order, dedup_sorted

logger = get_logger(__name__)

FloatArray = npt.NDArray[np.float64]

COVERING_R0 = 2.0
DEFAULT_DIVERGENCE_TS = (0.5, 1.0, 1.5, 1.9)


class DimensionMethod(str, Enum):
    BLOCK_DECAY_FIT = "block_decay_fit"
    PARTIAL_SUM_BISECTION = "partial_sum_bisection"


@dataclass(frozen=True)
class DimensionEstimate:
    """Estimated critical exponent t* with its bracket and the block sums at t*."""

    t_star: float
    t_bracket: tuple[float, float]
    block_sums: list[tuple[int, float]]
    method: DimensionMethod
    theoretical: float | None
    M: int
    rho: float | None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        low, high = self.t_bracket
        if not (low <= self.t_star <= high and 0.0 <= self.t_star <= 2.0):
            raise ConfigurationError(
                "t_star must lie in its bracket within [0, 2]",
                value=(self.t_star, self.t_bracket),
            )

    @property
    def gap(self) -> float | None:
        if self.theoretical is None:
            return None
        return abs(self.t_star - self.theoretical)

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_star": self.t_star,
            "t_low": self.t_bracket[0],
            "t_high": self.t_bracket[1],
            "theoretical": self.theoretical,
            "M": self.M,
            "rho": self.rho,
            "blocks": [[l, s] for l, s in self.block_sums],
            "method": self.method.value,
        }


@dataclass(frozen=True)
class GrowthSample:
    r: float
    n_r: int
    N_r: float
    T_r: float
    logM_r: float | None = None


@dataclass(frozen=True)
class GrowthCurve:
    """Nevanlinna quantities on increasing radii and the exponents fitted to them."""

    samples: list[GrowthSample]
    order_fit: float
    loglog_density: float
    p_fit: float | None
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def radii(self) -> FloatArray:
        return np.array([s.r for s in self.samples], dtype=np.float64)

    @property
    def characteristic(self) -> FloatArray:
        return np.array([s.T_r for s in self.samples], dtype=np.float64)

    def to_dict(self) -> dict[str, Any]:
        return {
            "order_fit": self.order_fit,
            "loglog_density": self.loglog_density,
            "p_fit": self.p_fit,
            "samples": [
                {"r": s.r, "n": s.n_r, "N": s.N_r, "T": s.T_r, "logM": s.logM_r}
                for s in self.samples
            ],
            "metadata": self.metadata,
        }


@dataclass(frozen=True)
class SigmaFit:
    """Fitted decay of the block sums at one t.

    sigma is the exponent in S_l ~ 2^{-sigma l}; power is the exponent of the
    log fit S_l ~ l^power, only computed when |sigma| is borderline.
    """

    t: float
    sigma: float
    power: float | None
    blocks_used: int

    @property
    def converges(self) -> bool:
        if self.power is not None:
            return self.power < -1.0
        return self.sigma > 0.0

    def score(self, borderline: float) -> float:
        """Signed indicator: positive iff the series is judged convergent."""
        if self.power is None or not math.isfinite(self.sigma):
            return self.sigma
        return borderline * float(np.clip(-1.0 - self.power, -1.0, 1.0))


def theoretical_bound(M: int, rho: float) -> float:
    """2 M rho / (2 + M rho)."""
    if M < 1:
        raise ConfigurationError("M must be positive", parameter="M", value=M)
    if rho < 0.0:
        raise ConfigurationError("rho must be nonnegative", parameter="rho", value=rho)
    if math.isinf(rho):
        return 2.0
    product = M * rho
    return 2.0 * product / (2.0 + product)


def series_term(record: PoleRecord, t: float, M: int) -> float:
    """(|b| / |a|^{1 + 1/M})^t."""
    a = abs(record.location)
    if a == 0.0:
        raise ConfigurationError("series term needs a nonzero pole", parameter="location")
    if t == 0.0:
        return 1.0
    return float((abs(record.coefficient) / a ** (1.0 + 1.0 / M)) ** t)


@dataclass(frozen=True)
class _BlockLayout:
    """Poles grouped into dyadic blocks, with log-terms at t = 1."""

    levels: npt.NDArray[np.int64]
    starts: npt.NDArray[np.int64]
    stops: npt.NDArray[np.int64]
    log_base: FloatArray
    complete: npt.NDArray[np.bool_]

    def sums(self, t: float) -> FloatArray:
        terms = np.exp(t * self.log_base)
        return np.array(
            [math.fsum(terms[a:b]) for a, b in zip(self.starts, self.stops, strict=True)],
            dtype=np.float64,
        )


def _layout(atlas: PoleAtlas) -> _BlockLayout:
    mod = atlas.moduli
    nonzero = mod > 0.0
    mod = mod[nonzero]
    if not len(mod):
        raise InsufficientBlocks(0, 1)
    coef = np.abs(atlas.coefficients[nonzero])
    order = np.argsort(mod, kind="stable")
    mod, coef = mod[order], coef[order]
    log_base = np.log(coef) - (1.0 + 1.0 / atlas.M) * np.log(mod)
    l_min = math.floor(math.log2(float(mod[0])))
    l_max = math.floor(math.log2(max(atlas.radius, float(mod[-1]))))
    levels = np.arange(l_min, l_max + 1, dtype=np.int64)
    edges = np.ldexp(1.0, np.append(levels, l_max + 1).astype(np.int32))
    cuts = np.searchsorted(mod, edges, side="left")
    complete = np.ldexp(1.0, (levels + 1).astype(np.int32)) <= atlas.radius
    return _BlockLayout(
        levels=levels,
        starts=cuts[:-1].astype(np.int64),
        stops=cuts[1:].astype(np.int64),
        log_base=log_base,
        complete=complete,
    )


def dyadic_blocks(atlas: PoleAtlas, t: float) -> list[tuple[int, float]]:
    """(l, S_l) for every dyadic block meeting [min |a|, radius]."""
    layout = _layout(atlas)
    return [(int(l), float(s)) for l, s in zip(layout.levels, layout.sums(t), strict=True)]


def _fit_rows(layout: _BlockLayout, options: DimensionOptions) -> npt.NDArray[np.int64]:
    complete = np.flatnonzero(layout.complete)
    count = max(2, int(math.ceil(options.fit_fraction * len(complete))))
    return complete[-count:]


def _sigma_from_layout(layout: _BlockLayout, t: float, options: DimensionOptions) -> SigmaFit:
    rows = _fit_rows(layout, options)
    sums = layout.sums(t)[rows]
    levels = layout.levels[rows].astype(np.float64)
    nonempty = sums > 0.0
    if int(np.sum(nonempty)) < 2:
        return SigmaFit(t=t, sigma=math.inf, power=None, blocks_used=int(np.sum(nonempty)))
    x = levels[nonempty]
    y = np.log2(sums[nonempty])
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    sigma = -float(coef[1])
    power = None
    if abs(sigma) < options.borderline_sigma and np.all(x > 0):
        log_design = np.column_stack([np.ones_like(x), np.log(x)])
        log_coef, *_ = np.linalg.lstsq(log_design, np.log(sums[nonempty]), rcond=None)
        power = float(log_coef[1])
    return SigmaFit(t=t, sigma=sigma, power=power, blocks_used=len(x))


def _check_blocks(layout: _BlockLayout, options: DimensionOptions) -> None:
    # Empty top blocks count: they are evidence of a finite series, not missing data.
    available = int(np.sum(layout.complete))
    if available < options.min_blocks:
        raise InsufficientBlocks(available, options.min_blocks)


def sigma(atlas: PoleAtlas, t: float, options: DimensionOptions | None = None) -> SigmaFit:
    """Fitted block decay exponent at t, over the upper part of the complete blocks."""
    opts = options or DimensionOptions()
    return _sigma_from_layout(_layout(atlas), t, opts)


def _ratio_indicator(layout: _BlockLayout, t: float, options: DimensionOptions) -> SigmaFit:
    """-log2 of the median ratio S_{l+1} / S_l between consecutive fit blocks."""
    rows = _fit_rows(layout, options)
    sums = layout.sums(t)[rows]
    if int(np.sum(sums > 0.0)) < 2:
        return SigmaFit(t=t, sigma=math.inf, power=None, blocks_used=int(np.sum(sums > 0.0)))
    pairs = (sums[:-1] > 0.0) & (sums[1:] > 0.0)
    if not np.any(pairs):
        return SigmaFit(t=t, sigma=math.inf, power=None, blocks_used=0)
    ratios = sums[1:][pairs] / sums[:-1][pairs]
    decay = -float(np.median(np.log2(ratios)))
    power = None
    if abs(decay) < options.borderline_sigma:
        levels = layout.levels[rows].astype(np.float64)
        keep = (sums > 0.0) & (levels > 0)
        if int(np.sum(keep)) >= 2:
            log_coef = np.polyfit(np.log(levels[keep]), np.log(sums[keep]), 1)
            power = float(log_coef[0])
    return SigmaFit(t=t, sigma=decay, power=power, blocks_used=int(np.sum(pairs)) + 1)


def _locate_zero(
    indicator: Callable[[float], SigmaFit], options: DimensionOptions
) -> tuple[float, tuple[float, float], list[SigmaFit]]:
    grid = np.linspace(options.t_min, options.t_max, options.scan_points)
    scan = [indicator(float(t)) for t in grid]
    for left, right in zip(scan, scan[1:], strict=False):
        if math.isfinite(left.sigma) and math.isfinite(right.sigma):
            drop = left.sigma - right.sigma
            if drop > options.monotone_tolerance:
                raise NonMonotone(left.t, right.t, drop)

    scores = [fit.score(options.borderline_sigma) for fit in scan]
    if scores[0] > 0.0:
        return options.t_min, (options.t_min, options.t_min), scan
    if scores[-1] <= 0.0:
        return options.t_max, (options.t_max, options.t_max), scan
    i = next(k for k, s in enumerate(scores) if s > 0.0)
    lo, hi = float(grid[i - 1]), float(grid[i])
    f_lo, f_hi = scan[i - 1], scan[i]
    while hi - lo > options.bracket_width:
        mid = 0.5 * (lo + hi)
        fit = indicator(mid)
        if fit.score(options.borderline_sigma) > 0.0:
            hi, f_hi = mid, fit
        else:
            lo, f_lo = mid, fit
    t_star = 0.5 * (lo + hi)
    s_lo, s_hi = f_lo.sigma, f_hi.sigma
    if math.isfinite(s_lo) and math.isfinite(s_hi) and s_hi > s_lo and s_lo <= 0.0 <= s_hi:
        t_star = lo + (hi - lo) * (-s_lo) / (s_hi - s_lo)
    return float(np.clip(t_star, lo, hi)), (lo, hi), scan


def critical_exponent(atlas: PoleAtlas, options: DimensionOptions | None = None) -> DimensionEstimate:
    """Estimate t*, the zero crossing of the block decay exponent sigma(t).

    Raises:
        InsufficientBlocks: fewer than options.min_blocks complete dyadic blocks
        NonMonotone: sigma(t) decreases along the scan
    """
    opts = options or DimensionOptions()
    method = DimensionMethod(opts.method)
    layout = _layout(atlas)
    _check_blocks(layout, opts)
    if method == DimensionMethod.BLOCK_DECAY_FIT:
        t_star, bracket, scan = _locate_zero(lambda t: _sigma_from_layout(layout, t, opts), opts)
    else:
        t_star, bracket, scan = _locate_zero(lambda t: _ratio_indicator(layout, t, opts), opts)

    theoretical = theoretical_bound(atlas.M, opts.rho) if opts.rho is not None else None
    blocks = [(int(l), float(s)) for l, s in zip(layout.levels, layout.sums(t_star), strict=True)]
    logger.info(
        f"t* = {t_star:.4f} in [{bracket[0]:.4f}, {bracket[1]:.4f}] "
        f"({method.value}, {len(atlas)} poles)"
    )
    return DimensionEstimate(
        t_star=t_star,
        t_bracket=bracket,
        block_sums=blocks,
        method=method,
        theoretical=theoretical,
        M=atlas.M,
        rho=opts.rho,
        metadata={
            "provenance": atlas.provenance,
            "poles": len(atlas),
            "scan": [[fit.t, fit.sigma] for fit in scan],
        },
    )


def partial_sum_bisection(
    atlas: PoleAtlas, options: DimensionOptions | None = None
) -> DimensionEstimate:
    """critical_exponent with the block-ratio test in place of the least-squares fit."""
    opts = options or DimensionOptions()
    return critical_exponent(
        atlas,
        DimensionOptions(
            method=DimensionMethod.PARTIAL_SUM_BISECTION.value,
            t_min=opts.t_min,
            t_max=opts.t_max,
            scan_points=opts.scan_points,
            bracket_width=opts.bracket_width,
            min_blocks=opts.min_blocks,
            fit_fraction=opts.fit_fraction,
            borderline_sigma=opts.borderline_sigma,
            monotone_tolerance=opts.monotone_tolerance,
            rho=opts.rho,
        ),
    )


def counting_functions(atlas: PoleAtlas, r: float) -> tuple[int, float]:
    """n(r) and N(r) = int_0^r (n(s) - n(0)) / s ds + n(0) log r, counted with multiplicity.

    The integral is taken exactly over the steps of n between consecutive moduli.
    """
    if r > atlas.radius * (1.0 + 1e-12):
        raise EvaluationRangeExceeded(r, atlas.radius)
    mod = np.sort(atlas.moduli)
    inside = mod[mod <= r]
    at_origin = int(np.sum(inside == 0.0))
    steps = inside[inside > 0.0]
    n_r = atlas.M * len(inside)
    if not len(steps):
        return n_r, atlas.M * at_origin * math.log(r)
    breaks = np.append(steps, r)
    counts = at_origin + np.arange(1, len(steps) + 1)
    widths = np.log(breaks[1:] / breaks[:-1])
    integral = math.fsum((counts - at_origin) * widths)
    return n_r, atlas.M * (integral + at_origin * math.log(r))


def _log_plus_mean(values: FloatArray) -> float:
    finite = values[np.isfinite(values)]
    if not len(finite):
        return math.inf
    return float(np.mean(np.maximum(finite, 0.0)))


def proximity(
    handle: FunctionHandle | ConformalMapHandle, r: float, options: GrowthOptions | None = None
) -> float:
    """m(r) = mean of log+ |f| on |z| = r, doubling the node count until it settles."""
    opts = options or GrowthOptions()

    def mean_at(nodes: int) -> float:
        theta = 2.0 * math.pi * (np.arange(nodes) + 0.5) / nodes
        z = r * np.exp(1j * theta)
        if isinstance(handle, ConformalMapHandle):
            return _log_plus_mean(handle.log_abs_entire(z))
        with np.errstate(divide="ignore", invalid="ignore"):
            return _log_plus_mean(np.log(np.abs(handle(z))))

    nodes = opts.nodes
    value = mean_at(nodes)
    while nodes < opts.max_nodes:
        nodes *= 2
        refined = mean_at(nodes)
        if abs(refined - value) <= opts.change_tolerance * max(1.0, abs(refined)):
            return refined
        value = refined
    logger.debug(f"m({r:.4g}) did not settle within {opts.max_nodes} nodes")
    return value


def _top_half(values: FloatArray, fraction: float) -> slice:
    count = max(2, int(math.ceil(fraction * len(values))))
    return slice(len(values) - count, len(values))


def _slope(x: FloatArray, y: FloatArray) -> float:
    keep = np.isfinite(x) & np.isfinite(y)
    if int(np.sum(keep)) < 2:
        return math.nan
    return float(np.polyfit(x[keep], y[keep], 1)[0])


def fit_log_power(radii: FloatArray, characteristic: FloatArray) -> tuple[float, float | None]:
    """Joint fit log T = c + rho log r - p log log r; returns (rho, p)."""
    keep = (radii > math.e) & (characteristic > 0.0) & np.isfinite(characteristic)
    if int(np.sum(keep)) < 4:
        return math.nan, None
    log_r = np.log(radii[keep])
    design = np.column_stack([np.ones_like(log_r), log_r, -np.log(log_r)])
    coef, *_ = np.linalg.lstsq(design, np.log(characteristic[keep]), rcond=None)
    return float(coef[1]), float(coef[2])


def growth_curve(
    handle: FunctionHandle | ConformalMapHandle,
    r_samples: Sequence[float],
    atlas: PoleAtlas | None = None,
    options: GrowthOptions | None = None,
) -> GrowthCurve:
    """T(r) = m(r) + N(r) on the given radii, with order, log-log density and p fits.

    For the entire function g (a ConformalMapHandle) N vanishes, log M(r, g) is
    sampled, and the order is the slope of log log M against log r. A meromorphic
    handle needs the atlas of its poles for n and N.

    Raises:
        EvaluationRangeExceeded: a radius lies beyond the atlas or options.max_radius
    """
    opts = options or GrowthOptions()
    radii = np.asarray(r_samples, dtype=np.float64)
    if len(radii) < 2 or np.any(np.diff(radii) <= 0.0):
        raise ConfigurationError("r_samples must be increasing", parameter="r_samples")
    entire = isinstance(handle, ConformalMapHandle)
    limit = opts.max_radius if entire or atlas is None else min(atlas.radius, opts.max_radius)
    if not entire and atlas is None:
        raise ConfigurationError("a meromorphic growth curve needs its pole atlas", parameter="atlas")
    if float(radii[-1]) > limit:
        raise EvaluationRangeExceeded(float(radii[-1]), limit)

    samples: list[GrowthSample] = []
    for r in radii:
        m_r = proximity(handle, float(r), opts)
        if entire:
            assert isinstance(handle, ConformalMapHandle)
            samples.append(
                GrowthSample(
                    r=float(r),
                    n_r=0,
                    N_r=0.0,
                    T_r=m_r,
                    logM_r=max_modulus_log(handle, float(r)),
                )
            )
        else:
            assert atlas is not None
            n_r, big_n = counting_functions(atlas, float(r))
            samples.append(GrowthSample(r=float(r), n_r=n_r, N_r=big_n, T_r=m_r + big_n))

    t_values = np.array([s.T_r for s in samples])
    top = _top_half(radii, opts.fit_fraction)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_t = np.log(t_values)
        if entire:
            log_m = np.array([s.logM_r for s in samples], dtype=np.float64)
            order = _slope(np.log(radii[top]), np.log(log_m[top]))
        else:
            order = _slope(np.log(radii[top]), log_t[top])
        density = _slope(np.log(np.log(radii[top])), log_t[top])
    _, p_fit = fit_log_power(radii, t_values)
    metadata: dict[str, Any] = {"kind": "entire" if entire else "meromorphic"}
    if entire:
        assert isinstance(handle, ConformalMapHandle)
        metadata["abs_at_zero"] = float(abs(handle.entire(np.array([0.0]))[0]))
    else:
        assert isinstance(handle, FunctionHandle)
        metadata["function"] = handle.descriptor()
    logger.info(f"Growth: order {order:.4f}, log-log density {density:.4f}")
    return GrowthCurve(
        samples=samples, order_fit=order, loglog_density=density, p_fit=p_fit, metadata=metadata
    )


def composite_growth_bounds(
    curve_f: GrowthCurve, curve_g: GrowthCurve, curve_fg: GrowthCurve, epsilon: float = 0.1
) -> dict[str, Any]:
    """Compare the growth of f o g with that of f and g.

    (i) rho(g) liminf <= rho(f o g) <= rho(g) limsup of log T(r, f) / log log r;
    (ii) T(r, f o g) <= (1 + epsilon) T(M(r, g) + 2|g(0)|, f) where M(r, g) falls
    inside the radii of curve_f.

    Raises:
        IncompatibleRanges: g and f o g were sampled on different radii, or no
            M(r, g) lands in the range of curve_f
    """
    r_g, r_fg = curve_g.radii, curve_fg.radii
    if len(r_g) != len(r_fg) or not np.allclose(r_g, r_fg, rtol=1e-12):
        raise IncompatibleRanges("g and f o g must share their sample radii")
    log_m = np.array([s.logM_r for s in curve_g.samples], dtype=np.float64)
    if np.any(~np.isfinite(log_m)):
        raise IncompatibleRanges("curve_g carries no maximum modulus samples")

    r_f = curve_f.radii
    top = _top_half(r_f, 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.log(curve_f.characteristic[top]) / np.log(np.log(r_f[top]))
    lower = curve_g.order_fit * float(np.min(ratios))
    upper = curve_g.order_fit * float(np.max(ratios))
    fitted = curve_g.order_fit * curve_f.loglog_density
    order_fg = curve_fg.order_fit

    g0 = float(curve_g.metadata.get("abs_at_zero", 0.0))
    log_arg = np.logaddexp(log_m, math.log(2.0 * g0)) if g0 > 0.0 else log_m
    log_rf = np.log(r_f)
    usable = (log_arg >= log_rf[0]) & (log_arg <= log_rf[-1])
    if not np.any(usable):
        raise IncompatibleRanges(
            "no M(r, g) lies inside the radii of curve_f",
            details={"log_M_range": [float(log_m.min()), float(log_m.max())]},
        )
    t_f_at = np.exp(np.interp(log_arg[usable], log_rf, np.log(curve_f.characteristic)))
    t_fg = curve_fg.characteristic[usable]
    margins = (1.0 + epsilon) * t_f_at - t_fg
    return {
        "order_lower": lower,
        "order_upper": upper,
        "order_predicted": fitted,
        "order_fg": order_fg,
        "order_within": bool(lower - epsilon <= order_fg <= upper + epsilon),
        "overlap_radii": [float(r) for r in r_fg[usable]],
        "pointwise_margins": [float(m) for m in margins],
        "pointwise_holds": bool(np.all(margins >= 0.0)),
    }


def lemma2b_diagnostics(
    atlas: PoleAtlas, rho: float, p: float, R: float | None = None
) -> dict[str, Any]:
    """Hoelder split of S_l at t = 2 M rho / (2 + M rho) for log-corrected growth.

    S_l <= (sum |b|^2/|a|^2)^{t/2} (sum |a|^{-rho})^{(2-t)/2}; the first factor is at
    most (12 R)^t and the block sums decay like l^{-(p-1)(2-t)/2}, which is summable
    because (p - 1)(2 - t)/2 > 1 whenever p > (4 + M rho)/2.

    Raises:
        HypothesisViolated: p <= (4 + M rho)/2
    """
    required = (4.0 + atlas.M * rho) / 2.0
    if p <= required:
        raise HypothesisViolated(p, required)
    t = theoretical_bound(atlas.M, rho)
    layout = _layout(atlas)
    nonzero = atlas.moduli > 0.0
    order = np.argsort(atlas.moduli[nonzero], kind="stable")
    mod = atlas.moduli[nonzero][order]
    coef = np.abs(atlas.coefficients[nonzero])[order]

    envelope = 0.0
    first: list[float] = []
    second: list[float] = []
    for level, start, stop in zip(layout.levels, layout.starts, layout.stops, strict=True):
        b2 = coef[start:stop] ** 2
        a = mod[start:stop]
        envelope = max(envelope, math.sqrt(math.fsum(b2) / (36.0 * 4.0 ** (int(level) + 1))))
        first.append(math.fsum(b2 / a**2) ** (t / 2.0))
        second.append(math.fsum(a ** (-rho)) ** ((2.0 - t) / 2.0))
    radius_r = R if R is not None else 2.0 * max(2.0, envelope)
    first_bound = (12.0 * radius_r) ** t
    sums = layout.sums(t)
    holder = np.array(first) * np.array(second)

    exponent = (p - 1.0) * (2.0 - t) / 2.0
    levels = layout.levels.astype(np.float64)
    keep = (sums > 0.0) & (levels > 0) & layout.complete
    decay = -_slope(np.log(levels[keep]), np.log(sums[keep])) if np.sum(keep) >= 2 else math.nan
    return {
        "t": t,
        "p": p,
        "R": radius_r,
        "first_factor_bound": first_bound,
        "first_factor_max": float(max(first)) if first else 0.0,
        "first_factor_holds": bool(all(v <= first_bound * (1.0 + 1e-12) for v in first)),
        "holder_holds": bool(np.all(sums <= holder * (1.0 + 1e-12))),
        "exponent": exponent,
        "exponent_exceeds_one": bool(exponent > 1.0),
        "fitted_decay": decay,
        "fitted_decay_exceeds_one": bool(decay > 1.0) if math.isfinite(decay) else False,
    }


def _b_constant(t: float, M: int, delta: float) -> float:
    """B_t = A_t int_0^inf (1 + y^2)^{-s/2} dy with s = (1 + 1/M) t."""
    s = (1.0 + 1.0 / M) * t
    if s <= 1.0:
        return math.inf
    a_t = (1.0 + 2.0 * math.pi**2 / delta**2) ** (-s / 2.0)
    return a_t * 0.5 * float(beta_function(0.5, (s - 1.0) / 2.0))


def _k_sum(p: complex, s: float, k_max: int = 100_000) -> float:
    """sum over all k of |log p + 2 pi i k|^{-s}, with an integral tail beyond k_max."""
    u = math.log(abs(p))
    v = math.atan2(p.imag, p.real)
    k = np.arange(-k_max, k_max + 1, dtype=np.float64)
    body = math.fsum(np.hypot(u, v + 2.0 * math.pi * k) ** (-s))
    if s <= 1.0:
        return math.inf
    tail = 2.0 * (2.0 * math.pi * k_max) ** (1.0 - s) / (2.0 * math.pi * (s - 1.0))
    return body + tail


def lattice_window_sums(
    config: EllipticConfig, exponent: float, windows: Sequence[int]
) -> FloatArray:
    """sum of |p_{m,n}|^{-exponent} over poles of H with translates |m|, |n| <= W."""
    w_max = int(max(windows))
    idx = np.arange(-w_max, w_max + 1, dtype=np.float64)
    m, n = np.meshgrid(idx, idx, indexing="ij")
    ring = np.maximum(np.abs(m), np.abs(n)).astype(np.int64).ravel()
    totals = np.zeros(w_max + 1, dtype=np.float64)
    for rec in fundamental_poles(config):
        p = (rec.location + math.pi * m + 1j * math.pi * n).ravel() / config.kappa
        totals += np.bincount(ring, weights=np.abs(p) ** (-exponent), minlength=w_max + 1)
    cumulative = np.cumsum(totals)
    return np.asarray(cumulative[np.asarray(windows, dtype=np.int64)], dtype=np.float64)


def _h_poles_of(atlas: PoleAtlas) -> np.ndarray:
    p = np.exp(atlas.locations)
    p = p[canonical_order(p)]
    return p[dedup_sorted(p, 1e-9)]


def theorem2_lattice_sums(
    atlas: PoleAtlas,
    t: float,
    epsilon: float,
    windows: Sequence[int] = (8, 16, 32, 64, 128, 256, 512),
    samples: int = 20,
) -> dict[str, Any]:
    """Lower bound and lattice partial sums behind dim I(f) = 2 for f = H o exp.

    Per pole p of H, the full k-sum of |log p + 2 pi i k|^{-(1+1/M)t} is compared with
    B_t / |log|p||^{(1+1/M)t - 1}. The partial sums of |p|^{-(t+epsilon)} over square
    windows are fitted against log W, and the growth of their increments decides
    divergence.
    """
    kappa = float(atlas.metadata.get("kappa", 1.0))
    config = EllipticConfig(M=atlas.M, kappa=kappa)
    delta = float(atlas.metadata.get("delta", math.nan))
    h_poles = _h_poles_of(atlas)
    if not math.isfinite(delta) and len(h_poles):
        delta = float(np.min(np.abs(np.log(np.abs(h_poles)))))

    s = (1.0 + 1.0 / atlas.M) * t
    b_t = _b_constant(t, atlas.M, delta)
    picks = np.linspace(0, len(h_poles) - 1, min(samples, len(h_poles))).astype(int)
    checks = []
    for i in np.unique(picks):
        p = complex(h_poles[i])
        u = abs(math.log(abs(p)))
        k_sum = _k_sum(p, s)
        bound = b_t / u ** (s - 1.0) if math.isfinite(b_t) else math.inf
        checks.append({"p": [p.real, p.imag], "k_sum": k_sum, "bound": bound, "holds": k_sum >= bound})

    exponent = t + epsilon
    w = np.asarray(windows, dtype=np.float64)
    sums = lattice_window_sums(config, exponent, windows)
    design = np.column_stack([np.ones_like(w), np.log(w)])
    coef, *_ = np.linalg.lstsq(design, sums, rcond=None)
    fitted = design @ coef
    total = float(np.sum((sums - sums.mean()) ** 2))
    r_squared = 1.0 - float(np.sum((sums - fitted) ** 2)) / total if total > 0.0 else 1.0
    increments = np.diff(sums)
    with np.errstate(divide="ignore"):
        growth = _slope(np.log(w[1:]), np.log(increments))
    return {
        "t": t,
        "epsilon": epsilon,
        "B_t": b_t,
        "delta": delta,
        "k_sum_checks": checks,
        "k_sum_bound_holds": bool(all(c["holds"] for c in checks)),
        "windows": [int(v) for v in windows],
        "partial_sums": [float(v) for v in sums],
        "log_slope": float(coef[1]),
        "log_r_squared": r_squared,
        "increments": [float(v) for v in increments],
        "window_growth_exponent": growth,
    }


def theorem2_divergence_indicators(
    atlas: PoleAtlas,
    ts: Sequence[float] = DEFAULT_DIVERGENCE_TS,
    epsilon: float = 0.05,
    growth_threshold: float = -0.05,
) -> dict[float, bool]:
    """True at t when the lattice lower bound at t + epsilon shows non-decaying increments."""
    indicators: dict[float, bool] = {}
    for t in ts:
        report = theorem2_lattice_sums(atlas, t, min(epsilon, 2.0 - t))
        indicators[t] = bool(
            report["window_growth_exponent"] >= growth_threshold and report["k_sum_bound_holds"]
        )
    return indicators


@dataclass(frozen=True)
class CoveringBound:
    """Right side of the spherical covering estimate for the l-th level cover."""

    value: float
    prefactor: float
    bracket: float
    tail_sum: float
    full_contraction: float
    l: int

    @property
    def contracts(self) -> bool:
        return self.bracket < 1.0


def covering_sum_bound(atlas: PoleAtlas, t: float, R: float, l: int) -> CoveringBound:
    """(1/M)(32 / ((2R)^{1/M} 24))^t (M (2^{1/M} 24)^t sum_{j >= n(R)} term_j)^l.

    Raises:
        PreconditionRadius: R < (16 R0)^M with R0 = 2, or no poles beyond n(R)
    """
    M = atlas.M
    if l < 1:
        raise ConfigurationError("l must be positive", parameter="l", value=l)
    floor = (16.0 * COVERING_R0) ** M
    if R < floor:
        raise PreconditionRadius(
            f"R = {R} is below (16 R0)^M = {floor}", details={"R": R, "required": floor}
        )
    mod = atlas.moduli
    nonzero = mod > 0.0
    order = np.argsort(mod[nonzero], kind="stable")
    mod_sorted = mod[nonzero][order]
    log_terms = (
        np.log(np.abs(atlas.coefficients[nonzero][order])) - (1.0 + 1.0 / M) * np.log(mod_sorted)
    ) * t
    n_r = int(np.searchsorted(mod_sorted, R, side="right"))
    tail = log_terms[max(n_r - 1, 0) :]
    if not len(tail):
        raise PreconditionRadius("no poles beyond n(R)", details={"R": R, "poles": len(atlas)})
    factor = M * (2.0 ** (1.0 / M) * 24.0) ** t
    tail_sum = math.fsum(np.exp(tail))
    bracket = factor * tail_sum
    prefactor = (32.0 / ((2.0 * R) ** (1.0 / M) * 24.0)) ** t / M
    return CoveringBound(
        value=prefactor * bracket**l,
        prefactor=prefactor,
        bracket=bracket,
        tail_sum=tail_sum,
        full_contraction=factor * math.fsum(np.exp(log_terms)),
        l=l,
    )
