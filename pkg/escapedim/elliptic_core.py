"""
Weierstrass elliptic core on the square lattice with periods pi and i*pi.

wp is evaluated by reducing z to the nearest lattice point and summing the Laurent
series at the origin. Its coefficients follow from the invariants g2 = (4/3) E4(i)
and g3 = 0. On top of wp sit

    G(z) = L(wp(z)^2),  L(w) = delta / (w + delta),  delta = a e1^2 / (1 - a)

which has critical values exactly {0, 1, a}, and H(z) = G(kappa z)^M.
Every function has a vectorised ``*_array`` kernel that returns inf at
singularities, plus a scalar entry point that raises instead.
"""

import cmath
import math
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.typing as npt
from scipy.special import roots_legendre

from .config import (
    DEFAULT_POLE_CAP,
    DEFAULT_TOLERANCE,
    EXCLUSION_RADIUS,
    RESIDUE_NODES,
    RESIDUE_RADIUS,
)
from .errors import (
    ConfigurationError,
    LatticePointSingularity,
    PoleOfG,
    PoleOfH,
    RegionTooLarge,
    RootPolishFailed,
)
from .logging_config import get_logger
from .utils import canonical_order

logger = get_logger(__name__)

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]

PERIOD = math.pi
MAX_SERIES_TERMS = 200
_EISENSTEIN_TERMS = 40


def default_critical_value(M: int) -> complex:
    """a = exp(2 pi i / M) for M >= 2; a = -1 for M = 1."""
    if M == 1:
        return -1.0 + 0.0j
    return cmath.exp(2j * math.pi / M)


@dataclass(frozen=True)
class EllipticConfig:
    """Parameters of G, H and their evaluation.

    Attributes:
        M: Multiplicity of every pole of H.
        a: Third critical value of G; derived from M when omitted.
        kappa: Rescaling in H(z) = G(kappa z)^M.
        tolerance: Target absolute error of wp.
        pole_cap: Largest pole enumeration allowed before RegionTooLarge.
    """

    M: int = 1
    a: complex | None = None
    kappa: float = 1.0
    tolerance: float = DEFAULT_TOLERANCE
    pole_cap: int = DEFAULT_POLE_CAP

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ConfigurationError("M must be a positive integer", parameter="M", value=self.M)
        if not 0.0 < self.kappa <= 1.0:
            raise ConfigurationError("kappa must lie in (0, 1]", parameter="kappa", value=self.kappa)
        if self.tolerance <= 0.0:
            raise ConfigurationError(
                "tolerance must be positive", parameter="tolerance", value=self.tolerance
            )
        if self.a is None:
            object.__setattr__(self, "a", default_critical_value(self.M))
        a = complex(self.critical_a)
        object.__setattr__(self, "a", a)
        if abs(a) < 1e-14 or abs(a - 1.0) < 1e-14:
            raise ConfigurationError("a must avoid 0 and 1", parameter="a", value=a)
        if self.M >= 2 and abs(a - default_critical_value(self.M)) > 1e-12:
            raise ConfigurationError(
                "For M >= 2 the critical value must be exp(2 pi i / M)", parameter="a", value=a
            )

    @property
    def critical_a(self) -> complex:
        if self.a is None:
            raise ConfigurationError("critical value not set", parameter="a")
        return self.a

    @property
    def delta(self) -> complex:
        """Coefficient of the Moebius map L(w) = delta / (w + delta)."""
        return mobius_coefficient(self.critical_a)


@dataclass(frozen=True)
class CriticalValueTriple:
    """Finite critical values (wp(pi/2), wp((pi + i pi)/2), wp(i pi/2))."""

    e1: complex
    e2: complex
    e3: complex

    def violations(self, tolerance: float) -> list[str]:
        problems = []
        if abs(self.e2) > tolerance:
            problems.append(f"|e2| = {abs(self.e2):.3e}")
        if abs(self.e1 + self.e3) > tolerance:
            problems.append(f"|e1 + e3| = {abs(self.e1 + self.e3):.3e}")
        if abs(self.e1.imag) > tolerance or self.e1.real <= 0.0:
            problems.append(f"e1 = {self.e1} is not positive real")
        return problems


@dataclass(frozen=True)
class PoleRecord:
    """A pole a with multiplicity m and coefficient b, f(z) ~ (b / (z - a))^m."""

    location: complex
    multiplicity: int
    coefficient: complex

    def __post_init__(self) -> None:
        if self.multiplicity < 1:
            raise ConfigurationError(
                "multiplicity must be positive", parameter="multiplicity", value=self.multiplicity
            )
        if self.coefficient == 0:
            raise ConfigurationError("coefficient must be nonzero", parameter="coefficient")


@dataclass(frozen=True)
class Rectangle:
    """Half-open rectangle [x_min, x_max) x [y_min, y_max)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigurationError("rectangle must have positive area", value=self)
        if not all(math.isfinite(v) for v in (self.x_min, self.x_max, self.y_min, self.y_max)):
            raise ConfigurationError("rectangle must be bounded", value=self)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, z: ComplexArray) -> npt.NDArray[np.bool_]:
        return (
            (z.real >= self.x_min)
            & (z.real < self.x_max)
            & (z.imag >= self.y_min)
            & (z.imag < self.y_max)
        )


def _sigma3(n: int) -> int:
    return sum(d**3 for d in range(1, n + 1) if n % d == 0)


@lru_cache(maxsize=1)
def eisenstein_invariants() -> tuple[float, float]:
    """(g2, g3) for the lattice pi Z + i pi Z.

    G4 of this lattice is E4(i) / 45, so g2 = 60 G4 = (4/3) E4(i); g3 vanishes
    because E6(i) = 0.
    """
    q = math.exp(-2.0 * math.pi)
    e4 = 1.0 + 240.0 * math.fsum(_sigma3(n) * q**n for n in range(1, _EISENSTEIN_TERMS))
    return 4.0 * e4 / 3.0, 0.0


@lru_cache(maxsize=1)
def laurent_coefficients() -> FloatArray:
    """c[k] with wp(z) = z^-2 + sum_{k >= 1} c[k] z^(2k); c[0] is unused."""
    g2, g3 = eisenstein_invariants()
    c = np.zeros(MAX_SERIES_TERMS + 1)
    c[1] = g2 / 20.0
    c[2] = g3 / 28.0
    for k in range(3, MAX_SERIES_TERMS + 1):
        convolution = math.fsum(c[m] * c[k - 1 - m] for m in range(1, k - 1))
        c[k] = 3.0 * convolution / ((2 * k + 3) * (k - 2))
    return c


@lru_cache(maxsize=32)
def series_depth(tolerance: float) -> int:
    """Number of Laurent terms needed on the reduced cell |z| <= pi / sqrt(2).

    The k-th coefficient is dominated by the four nearest lattice points, giving
    terms of size about 4 (2k + 1) / pi^2 * 2^-k; the extra factor k covers wp'.
    """
    for k in range(8, MAX_SERIES_TERMS):
        if 4.0 * (2 * k + 1) * k / math.pi**2 * 0.5**k < tolerance * 1e-2:
            return k
    return MAX_SERIES_TERMS


def reduce_to_cell(z: ComplexArray) -> ComplexArray:
    """Subtract the nearest lattice point."""
    shift = PERIOD * (np.round(z.real / PERIOD) + 1j * np.round(z.imag / PERIOD))
    return np.asarray(z - shift, dtype=np.complex128)


def _series_parts(w: ComplexArray, depth: int) -> tuple[ComplexArray, ComplexArray]:
    """Horner sums P(w) = sum c_k w^(k-1) and Q(w) = sum 2k c_k w^(k-1)."""
    c = laurent_coefficients()
    p = np.zeros_like(w)
    q = np.zeros_like(w)
    for k in range(depth, 0, -1):
        p = p * w + c[k]
        q = q * w + 2 * k * c[k]
    return p, q


def wp_array(z: npt.ArrayLike, tolerance: float = DEFAULT_TOLERANCE) -> ComplexArray:
    """Vectorised wp; inf at lattice points."""
    zr = reduce_to_cell(np.asarray(z, dtype=np.complex128))
    w = zr * zr
    p, _ = _series_parts(w, series_depth(tolerance))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 / w + w * p
    return np.where(w == 0, np.inf + 0j, out)


def wp_prime_array(z: npt.ArrayLike, tolerance: float = DEFAULT_TOLERANCE) -> ComplexArray:
    """Vectorised wp'; inf at lattice points."""
    zr = reduce_to_cell(np.asarray(z, dtype=np.complex128))
    w = zr * zr
    _, q = _series_parts(w, series_depth(tolerance))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -2.0 / (w * zr) + zr * q
    return np.where(w == 0, np.inf + 0j, out)


def _check_lattice(z: complex) -> None:
    distance = float(abs(reduce_to_cell(np.asarray([z], dtype=np.complex128))[0]))
    if distance < EXCLUSION_RADIUS:
        raise LatticePointSingularity(z, distance)


def wp(z: complex, config: EllipticConfig) -> complex:
    """Weierstrass wp for the lattice (pi, i pi).

    Raises:
        LatticePointSingularity: z within the exclusion radius of a lattice point
    """
    _check_lattice(z)
    return complex(wp_array(np.asarray([z]), config.tolerance)[0])


def wp_prime(z: complex, config: EllipticConfig) -> complex:
    """Derivative of wp.

    Raises:
        LatticePointSingularity: z within the exclusion radius of a lattice point
    """
    _check_lattice(z)
    return complex(wp_prime_array(np.asarray([z]), config.tolerance)[0])


def wp_lattice_sum(z: complex, n_max: int = 200) -> complex:
    """Brute-force wp by Eisenstein summation over |m|, |n| <= n_max.

    The truncated sum omits sum' 1/(z - w)^2 - 1/w^2 over far lattice points,
    which is 3 z^2 times the missing part of G4 to leading order.
    """
    idx = np.arange(-n_max, n_max + 1, dtype=np.float64)
    m, n = np.meshgrid(idx, idx, indexing="ij")
    omega = PERIOD * (m + 1j * n).ravel()
    omega = omega[omega != 0]
    terms = 1.0 / (z - omega) ** 2 - 1.0 / omega**2
    partial = complex(np.sum(terms)) + 1.0 / z**2
    g4_full = eisenstein_invariants()[0] / 60.0
    g4_partial = complex(np.sum(1.0 / omega**4))
    return partial + 3.0 * z**2 * (g4_full - g4_partial)


@lru_cache(maxsize=8)
def critical_values(config: EllipticConfig) -> CriticalValueTriple:
    """(e1, e2, e3) = (wp(pi/2), wp((pi + i pi)/2), wp(i pi/2))."""
    half = PERIOD / 2.0
    return CriticalValueTriple(
        e1=wp(complex(half, 0.0), config),
        e2=wp(complex(half, half), config),
        e3=wp(complex(0.0, half), config),
    )


def mobius_coefficient(a: complex) -> complex:
    """delta such that L(w) = delta / (w + delta) has L(inf)=0, L(0)=1, L(e1^2)=a.

    The first two conditions force L(w) = delta / (w + delta); the third is
    linear in delta: delta (1 - a) = a e1^2.
    """
    e1 = critical_values(EllipticConfig(M=1)).e1
    return a * e1 * e1 / (1.0 - a)


def g_array(z: npt.ArrayLike, config: EllipticConfig) -> ComplexArray:
    """Vectorised G; inf/nan at poles.

    With w = z_red^2 and wp = (1 + w^2 P(w)) / w, G = delta w^2 / ((1 + w^2 P)^2 + delta w^2),
    which is regular at lattice points and at zeros of wp.
    """
    zr = reduce_to_cell(np.asarray(z, dtype=np.complex128))
    w = zr * zr
    p, _ = _series_parts(w, series_depth(config.tolerance))
    numer = 1.0 + w * w * p
    delta = config.delta
    dw2 = delta * w * w
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.asarray(dw2 / (numer * numer + dw2), dtype=np.complex128)


def g_derivative_array(z: npt.ArrayLike, config: EllipticConfig) -> ComplexArray:
    """G' = -2 delta wp wp' / (wp^2 + delta)^2, evaluated as G^2 * (-2 wp wp' / delta)."""
    zz = np.asarray(z, dtype=np.complex128)
    g = g_array(zz, config)
    zr = reduce_to_cell(zz)
    w = zr * zr
    p, q = _series_parts(w, series_depth(config.tolerance))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        wp_val = (1.0 + w * w * p) / w
        wpp = -2.0 / (w * zr) + zr * q
        out = -2.0 * g * g * wp_val * wpp / config.delta
    return np.where(w == 0, 0.0 + 0j, out)


def h_array(z: npt.ArrayLike, config: EllipticConfig) -> ComplexArray:
    """Vectorised H(z) = G(kappa z)^M."""
    g = g_array(config.kappa * np.asarray(z, dtype=np.complex128), config)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.asarray(g**config.M, dtype=np.complex128)


def nearest_pole_distance(z: complex, config: EllipticConfig, scale: float = 1.0) -> float:
    """Distance from z to the nearest pole of G(scale * z), in z units."""
    poles = np.array([rec.location for rec in fundamental_poles(config)])
    zr = complex(z) * scale
    diffs = reduce_to_cell(zr - poles)
    return float(np.min(np.abs(diffs))) / scale


def eval_G(z: complex, config: EllipticConfig) -> complex:
    """G(z) = L(wp(z)^2).

    Raises:
        PoleOfG: z within the exclusion radius of a pole of G
    """
    if nearest_pole_distance(z, config) < EXCLUSION_RADIUS:
        raise PoleOfG(z)
    return complex(g_array(np.asarray([z]), config)[0])


def eval_G_derivative(z: complex, config: EllipticConfig) -> complex:
    if nearest_pole_distance(z, config) < EXCLUSION_RADIUS:
        raise PoleOfG(z)
    return complex(g_derivative_array(np.asarray([z]), config)[0])


def eval_H(z: complex, config: EllipticConfig) -> complex:
    """H(z) = G(kappa z)^M.

    Raises:
        PoleOfH: z within the exclusion radius of a pole of H
    """
    if nearest_pole_distance(z, config, scale=config.kappa) < EXCLUSION_RADIUS:
        raise PoleOfH(z)
    return complex(h_array(np.asarray([z]), config)[0])


def _wrap_to_cell(z: ComplexArray) -> ComplexArray:
    """Representative in [0, pi) x [0, pi)."""
    x = np.mod(z.real, PERIOD)
    y = np.mod(z.imag, PERIOD)
    x = np.where(x > PERIOD - 1e-10, 0.0, x)
    y = np.where(y > PERIOD - 1e-10, 0.0, y)
    return np.asarray(x + 1j * y, dtype=np.complex128)


def _contour_residue(func: Callable[[ComplexArray], ComplexArray], center: complex) -> complex:
    theta = 2.0 * np.pi * np.arange(RESIDUE_NODES) / RESIDUE_NODES
    offsets = RESIDUE_RADIUS * np.exp(1j * theta)
    return complex(np.mean(func(center + offsets) * offsets))


@lru_cache(maxsize=16)
def fundamental_poles(config: EllipticConfig) -> tuple[PoleRecord, ...]:
    """The four simple poles of G in [0, pi)^2 with their residues.

    Poles solve wp(z)^2 = -delta; each of the two square roots is taken twice per
    cell (at z and -z). Newton from a seed grid, then reduction and deduplication.
    """
    targets = np.array([1.0, -1.0]) * cmath.sqrt(-config.delta)
    seeds_1d = np.linspace(0.2, PERIOD - 0.2, 8)
    sx, sy = np.meshgrid(seeds_1d, seeds_1d)
    seeds = (sx + 1j * sy).ravel()
    found: list[complex] = []
    for v in targets:
        z = seeds.copy()
        for _ in range(60):
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                step = (wp_array(z, config.tolerance) - v) / wp_prime_array(z, config.tolerance)
            step = np.where(np.isfinite(step), step, 0.0)
            z = reduce_to_cell(z - step)
        with np.errstate(invalid="ignore", over="ignore"):
            residual = np.abs(wp_array(z, config.tolerance) - v)
        ok = residual < 1e-10 * max(1.0, abs(v))
        found.extend(_wrap_to_cell(z[ok]).tolist())

    unique: list[complex] = []
    for cand in found:
        if all(abs(complex(reduce_to_cell(np.asarray([cand - u]))[0])) > 1e-7 for u in unique):
            unique.append(cand)
    if len(unique) != 4:
        raise RootPolishFailed("Expected four poles of G per period cell", failures=len(unique))

    locations = np.array(unique, dtype=np.complex128)
    locations = locations[canonical_order(locations)]
    records = []
    for p in locations:
        residue = _contour_residue(lambda zz: g_array(zz, config), complex(p))
        wp_p = complex(wp_array(np.asarray([p]), config.tolerance)[0])
        wpp_p = complex(wp_prime_array(np.asarray([p]), config.tolerance)[0])
        closed_form = config.delta / (2.0 * wp_p * wpp_p)
        if abs(residue - closed_form) > 1e-6 * abs(closed_form):
            logger.warning(
                f"Residue quadrature at {p} disagrees with closed form: {residue} vs {closed_form}"
            )
        records.append(PoleRecord(location=complex(p), multiplicity=1, coefficient=residue))
    logger.debug(f"Fundamental poles of G for M={config.M}: {[r.location for r in records]}")
    return tuple(records)


def residue_floor(config: EllipticConfig) -> float:
    """C0 = min |beta| over poles of H (translates share the fundamental residues)."""
    return min(abs(rec.coefficient) for rec in fundamental_poles(config)) / config.kappa


def pole_arrays_H(region: Rectangle, config: EllipticConfig) -> tuple[ComplexArray, ComplexArray]:
    """Poles of H in the region and their coefficients, canonically sorted."""
    kappa = config.kappa
    base = fundamental_poles(config)
    ranges = []
    estimated = 0
    for rec in base:
        p = rec.location
        m_lo = math.ceil((kappa * region.x_min - p.real) / PERIOD)
        m_hi = math.floor((kappa * region.x_max - p.real) / PERIOD)
        n_lo = math.ceil((kappa * region.y_min - p.imag) / PERIOD)
        n_hi = math.floor((kappa * region.y_max - p.imag) / PERIOD)
        ranges.append((m_lo, m_hi, n_lo, n_hi))
        estimated += max(0, m_hi - m_lo + 1) * max(0, n_hi - n_lo + 1)
    if estimated > config.pole_cap:
        raise RegionTooLarge(estimated, config.pole_cap)

    locs: list[ComplexArray] = []
    coefs: list[ComplexArray] = []
    for rec, (m_lo, m_hi, n_lo, n_hi) in zip(base, ranges, strict=True):
        if m_hi < m_lo or n_hi < n_lo:
            continue
        m, n = np.meshgrid(
            np.arange(m_lo, m_hi + 1, dtype=np.float64),
            np.arange(n_lo, n_hi + 1, dtype=np.float64),
            indexing="ij",
        )
        z = ((rec.location + PERIOD * m + 1j * PERIOD * n) / kappa).ravel()
        z = z[region.contains(z)]
        locs.append(z)
        coefs.append(np.full(z.shape, rec.coefficient / kappa, dtype=np.complex128))
    if not locs:
        return np.zeros(0, dtype=np.complex128), np.zeros(0, dtype=np.complex128)
    locations = np.concatenate(locs)
    coefficients = np.concatenate(coefs)
    order = canonical_order(locations)
    return locations[order], coefficients[order]


def poles_of_H(region: Rectangle, config: EllipticConfig) -> list[PoleRecord]:
    """All poles of H in a half-open rectangle, each of multiplicity M.

    Raises:
        RegionTooLarge: the enumeration would exceed config.pole_cap
    """
    locations, coefficients = pole_arrays_H(region, config)
    return [
        PoleRecord(location=complex(a), multiplicity=config.M, coefficient=complex(b))
        for a, b in zip(locations, coefficients, strict=True)
    ]


def _log_derivative_wp2(z: ComplexArray, config: EllipticConfig) -> ComplexArray:
    wp_val = wp_array(z, config.tolerance)
    return 2.0 * wp_val * wp_prime_array(z, config.tolerance) / (wp_val**2 + config.delta)


def count_poles_in_cell(config: EllipticConfig, nodes_per_side: int = 400) -> int:
    """Count poles of G in one period cell by the argument principle.

    Integrates d log(wp^2 + delta) = d log(1/G) around a shifted period cell and
    subtracts a small circle about the lattice point inside, which removes the order-4
    zero of G there. The remainder counts the zeros of 1/G, i.e. the poles of G.
    """
    poles = np.array([rec.location for rec in fundamental_poles(config)])
    best_shift, best_gap = 0.0j, -1.0
    for k in range(1, 9):
        shift = complex(0.07 * k, 0.031 * k)
        corner = shift - complex(PERIOD / 2, PERIOD / 2)
        rel = _wrap_to_cell(poles - corner)
        gap = float(np.min(np.minimum.reduce([rel.real, PERIOD - rel.real, rel.imag, PERIOD - rel.imag])))
        if gap > best_gap:
            best_shift, best_gap = shift, gap
    corner = best_shift - complex(PERIOD / 2, PERIOD / 2)

    x, wts = roots_legendre(nodes_per_side)
    t = (x + 1.0) / 2.0
    wts = wts / 2.0
    vertices = [corner, corner + PERIOD, corner + PERIOD + 1j * PERIOD, corner + 1j * PERIOD]
    outer = 0.0j
    for start, end in zip(vertices, vertices[1:] + vertices[:1], strict=True):
        pts = start + (end - start) * t
        outer += complex(np.sum(wts * _log_derivative_wp2(pts, config))) * (end - start)

    nearest = float(np.min(np.abs(reduce_to_cell(poles))))
    radius = 0.25 * min(nearest, 1.0)
    theta = 2.0 * np.pi * np.arange(256) / 256
    offsets = radius * np.exp(1j * theta)
    inner = complex(np.mean(_log_derivative_wp2(offsets, config) * offsets)) * 2j * np.pi

    count = (outer - inner) / (2j * np.pi)
    logger.debug(f"Argument principle count {count} (outer {outer / (2j * np.pi)})")
    return round(count.real)


def kappa_for_unit_disk(config: EllipticConfig, max_halvings: int = 20) -> float:
    """Largest kappa = 2^-j with sup_{|z| <= 4} |G(kappa z)|^M <= 1/2 on a polar grid."""
    nearest_pole = float(np.min(np.abs(reduce_to_cell(
        np.array([rec.location for rec in fundamental_poles(config)])
    ))))
    r, theta = np.meshgrid(np.linspace(0.0, 4.0, 41), 2.0 * np.pi * np.arange(256) / 256)
    grid = (r * np.exp(1j * theta)).ravel()
    for j in range(max_halvings + 1):
        kappa = 0.5**j
        if 4.0 * kappa >= 0.9 * nearest_pole:
            continue
        sup = float(np.max(np.abs(g_array(kappa * grid, config)) ** config.M))
        if sup <= 0.5:
            logger.debug(f"kappa = {kappa} gives sup |H| = {sup:.3e} on |z| <= 4")
            return kappa
    raise ConfigurationError("No admissible kappa found", parameter="max_halvings", value=max_halvings)


def laurent_exponent(
    func: Callable[[ComplexArray], ComplexArray],
    pole: complex,
    radii: FloatArray | None = None,
    n_angles: int = 8,
) -> float:
    """Fitted order of a pole: minus the slope of mean log|f| against log radius."""
    rho = radii if radii is not None else np.geomspace(1e-5, 1e-3, 9)
    theta = 2.0 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    logs = [
        float(np.mean(np.log(np.abs(func(pole + r * np.exp(1j * theta)))))) for r in rho
    ]
    slope = np.polyfit(np.log(rho), np.asarray(logs), 1)[0]
    return float(-slope)
