"""
Function families built from the elliptic core and the comb map, and their pole atlases.

    F(z)     = H(arcsin z)           poles A = sin(alpha), B = beta cos(alpha)
    f(z)     = F(g(z))               poles g(a) = A, b = B / g'(a)
    f(z)     = H(exp z)              poles log p + 2 pi i k, b = beta / p
    f(z)     = f0(z^N)               N roots per pole, b = B / (N z0^{N-1})
    f(z)     = f0(lambda z)          a / lambda, b / lambda

Coefficients follow the convention f(z) ~ (b / (z - a))^M. Large poles of F are
handled in log space: |A| reaches e^{r^alpha} on the circle |z| = r.
"""

import cmath
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.spatial import cKDTree

from .comb_conformal import (
    CombSpec,
    ConformalMapHandle,
    build_comb_modified_exp,
    build_conformal_map,
    halve_teeth,
    point_in_comb,
)
from .config import DEDUP_RELATIVE_DISTANCE, EXCLUSION_RADIUS, MapOptions, RunConfig
from .elliptic_core import (
    EllipticConfig,
    PoleRecord,
    Rectangle,
    fundamental_poles,
    h_array,
    nearest_pole_distance,
    pole_arrays_H,
)
from .errors import (
    CompletenessError,
    ConfigurationError,
    ModulusOnePole,
    PoleAtOrigin,
    PoleOfF,
    RootPolishFailed,
)
from .logging_config import get_logger
from .utils import canonical_order, chunked, chunked_map, dedup_sorted

logger = get_logger(__name__)

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]

DELTA_SECTOR = (-3.0 * math.pi / 4.0, -math.pi / 4.0)
ASYMPTOTIC_ARCSIN = 1e8
MODULUS_ONE_MARGIN = 1e-3
_INVERSE_CHUNK = 2048


class FunctionKind(str, Enum):
    F_ARCSIN = "F_arcsin"
    COMPOSED_F = "composed_f"
    THEOREM2_EXP = "theorem2_exp"
    POWER_TRICK = "power_trick"
    SCALED = "scaled"
    AFFINE = "affine"


_REQUIRED_PARTS: dict[FunctionKind, tuple[str, ...]] = {
    FunctionKind.F_ARCSIN: (),
    FunctionKind.COMPOSED_F: ("map",),
    FunctionKind.THEOREM2_EXP: (),
    FunctionKind.POWER_TRICK: ("inner", "N"),
    FunctionKind.SCALED: ("inner", "lambda"),
    FunctionKind.AFFINE: ("inner", "affine"),
}


@dataclass(frozen=True, eq=False)
class FunctionHandle:
    """A meromorphic function from one of the families, with its ingredients.

    Attributes:
        kind: Which construction produced the function.
        config: Elliptic parameters of the underlying H.
        evaluator: Vectorized evaluation; inf or nan at poles.
        parts: Kind-specific ingredients (inner handle, N, lambda, map, affine pair).
        metadata: Recorded facts such as claimed critical values.
    """

    kind: FunctionKind
    config: EllipticConfig
    evaluator: Callable[[ComplexArray], ComplexArray]
    parts: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = [p for p in _REQUIRED_PARTS[self.kind] if p not in self.parts]
        if missing:
            raise ConfigurationError(
                f"{self.kind.value} handle is missing parts", parameter="parts", value=missing
            )
        if self.kind == FunctionKind.POWER_TRICK and int(self.parts["N"]) < 1:
            raise ConfigurationError("N must be positive", parameter="N", value=self.parts["N"])
        if self.kind == FunctionKind.SCALED and not 0.0 < float(self.parts["lambda"]) <= 1.0:
            raise ConfigurationError(
                "lambda must lie in (0, 1]", parameter="lambda", value=self.parts["lambda"]
            )

    @property
    def multiplicity(self) -> int:
        return self.config.M

    def __call__(self, z: npt.ArrayLike) -> ComplexArray:
        zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return self.evaluator(zz)

    def eval(self, z: complex) -> complex:
        return complex(self(np.array([z]))[0])

    def descriptor(self) -> str:
        if self.kind in (FunctionKind.POWER_TRICK, FunctionKind.SCALED, FunctionKind.AFFINE):
            inner = self.parts["inner"]
            extra = {
                FunctionKind.POWER_TRICK: lambda: f"N={self.parts['N']}",
                FunctionKind.SCALED: lambda: f"lambda={self.parts['lambda']}",
                FunctionKind.AFFINE: lambda: f"affine={self.parts['affine']}",
            }[self.kind]()
            return f"{self.kind.value}({extra})<-{inner.descriptor()}"
        return f"{self.kind.value}(M={self.config.M}, kappa={self.config.kappa})"


@dataclass(frozen=True, eq=False)
class PoleAtlas:
    """Poles with |a| <= radius, canonically sorted, deduplicated, all of multiplicity M."""

    locations: ComplexArray
    coefficients: ComplexArray
    M: int
    radius: float
    provenance: str
    sector_filter: tuple[float, float] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.locations.shape != self.coefficients.shape:
            raise ConfigurationError("locations and coefficients differ in length")
        if self.M < 1:
            raise ConfigurationError("M must be positive", parameter="M", value=self.M)

    @classmethod
    def from_arrays(
        cls,
        locations: npt.ArrayLike,
        coefficients: npt.ArrayLike,
        M: int,
        radius: float,
        provenance: str,
        sector_filter: tuple[float, float] | None = None,
        metadata: dict[str, Any] | None = None,
    ) -> "PoleAtlas":
        """Sort canonically and merge points closer than DEDUP_RELATIVE_DISTANCE * |a|."""
        locs = np.asarray(locations, dtype=np.complex128).ravel()
        coefs = np.asarray(coefficients, dtype=np.complex128).ravel()
        order = canonical_order(locs)
        locs, coefs = locs[order], coefs[order]
        keep = dedup_sorted(locs, DEDUP_RELATIVE_DISTANCE)
        dropped = int(np.sum(~keep))
        if dropped:
            logger.debug(f"Merged {dropped} duplicate poles in {provenance}")
        return cls(
            locations=locs[keep],
            coefficients=coefs[keep],
            M=M,
            radius=radius,
            provenance=provenance,
            sector_filter=sector_filter,
            metadata=dict(metadata or {}),
        )

    def __len__(self) -> int:
        return len(self.locations)

    @property
    def moduli(self) -> FloatArray:
        return np.asarray(np.abs(self.locations), dtype=np.float64)

    @property
    def records(self) -> list[PoleRecord]:
        return [
            PoleRecord(location=complex(a), multiplicity=self.M, coefficient=complex(b))
            for a, b in zip(self.locations, self.coefficients, strict=True)
        ]

    def within(self, radius: float) -> "PoleAtlas":
        mask = self.moduli <= radius
        return replace(
            self,
            locations=self.locations[mask],
            coefficients=self.coefficients[mask],
            radius=min(radius, self.radius),
            metadata=dict(self.metadata),
        )


def critical_points_xk(k: int, convention: str = "cosh") -> float:
    """x_k = cosh(k pi / 2) with x_{-k} = -x_k.

    convention="zero_at_origin" returns x_0 = 0, the even-symmetry critical point of F.
    """
    if k == 0 and convention == "zero_at_origin":
        return 0.0
    if convention not in ("cosh", "zero_at_origin"):
        raise ConfigurationError("unknown convention", parameter="convention", value=convention)
    value = math.cosh(abs(k) * math.pi / 2.0)
    return value if k >= 0 else -value


def log_sin(z: npt.ArrayLike) -> ComplexArray:
    """A logarithm of sin z that does not overflow for large |Im z|."""
    zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    out = np.empty_like(zz)
    y = zz.imag
    small = np.abs(y) < 20.0
    up = y >= 20.0
    down = y <= -20.0
    out[small] = np.log(np.sin(zz[small]))
    out[up] = cmath.log(0.5j) - 1j * zz[up] + np.log1p(-np.exp(2j * zz[up]))
    out[down] = -cmath.log(2j) + 1j * zz[down] + np.log1p(-np.exp(-2j * zz[down]))
    return out


def cot_stable(z: npt.ArrayLike) -> ComplexArray:
    zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    out = np.empty_like(zz)
    upper = zz.imag >= 0.0
    e_up = np.exp(2j * zz[upper])
    out[upper] = 1j * (1.0 + e_up) / (e_up - 1.0)
    e_down = np.exp(-2j * zz[~upper])
    out[~upper] = 1j * (e_down + 1.0) / (1.0 - e_down)
    return out


def _principal(angle: FloatArray) -> FloatArray:
    return np.asarray(math.pi - np.mod(math.pi - angle, 2.0 * math.pi), dtype=np.float64)


def arcsin_stable(z: npt.ArrayLike) -> ComplexArray:
    """Some branch of arcsin; for |z| >= 1e8 uses arcsin z ~ -i log(2iz)."""
    zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    out = np.empty_like(zz)
    big = np.abs(zz) >= ASYMPTOTIC_ARCSIN
    out[~big] = np.arcsin(zz[~big])
    out[big] = -1j * (np.log(zz[big]) + cmath.log(2j))
    return out


def arcsin_from_log(log_z: npt.ArrayLike) -> ComplexArray:
    """arcsin(exp(L)) without forming exp(L) when it is large."""
    ll = np.atleast_1d(np.asarray(log_z, dtype=np.complex128))
    out = np.empty_like(ll)
    big = ll.real >= math.log(ASYMPTOTIC_ARCSIN)
    out[~big] = np.arcsin(np.exp(ll[~big]))
    out[big] = -1j * (ll[big] + cmath.log(2j))
    return out


def _require_unit_kappa(config: EllipticConfig) -> None:
    if config.kappa != 1.0:
        raise ConfigurationError(
            "H(arcsin z) is single-valued only for kappa = 1", parameter="kappa", value=config.kappa
        )


def make_F_handle(config: EllipticConfig) -> FunctionHandle:
    """F = H o arcsin, single-valued because H is even and pi-periodic."""
    _require_unit_kappa(config)
    return FunctionHandle(
        kind=FunctionKind.F_ARCSIN,
        config=config,
        evaluator=lambda z: h_array(arcsin_stable(z), config),
        metadata={"critical_points": "x_k = cosh(k pi / 2), k >= 0, and x_0 = 0"},
    )


def eval_F(z: complex, config: EllipticConfig) -> complex:
    """F(z) = H(arcsin z).

    Raises:
        PoleOfF: z is within the exclusion radius of a pole
    """
    _require_unit_kappa(config)
    w = complex(arcsin_stable(np.array([z]))[0])
    if nearest_pole_distance(w, config) * max(abs(cmath.cos(w)), 1e-300) < EXCLUSION_RADIUS:
        raise PoleOfF(z)
    return complex(h_array(np.array([w]), config)[0])


def make_composed_handle(map_handle: ConformalMapHandle, config: EllipticConfig) -> FunctionHandle:
    """f = F o g, evaluated through log g so that huge |g| stays finite."""
    _require_unit_kappa(config)
    return FunctionHandle(
        kind=FunctionKind.COMPOSED_F,
        config=config,
        evaluator=lambda z: h_array(arcsin_from_log(map_handle.entire_log(z)), config),
        parts={"map": map_handle},
        metadata={"julia_set": "J(f) = C claimed, not verified"},
    )


def make_theorem2_handle(config: EllipticConfig) -> FunctionHandle:
    return FunctionHandle(
        kind=FunctionKind.THEOREM2_EXP,
        config=config,
        evaluator=lambda z: h_array(np.exp(z), config),
    )


def make_power_handle(inner: FunctionHandle, N: int) -> FunctionHandle:
    """f(z) = f0(z^N)."""
    return FunctionHandle(
        kind=FunctionKind.POWER_TRICK,
        config=inner.config,
        evaluator=lambda z: inner(z**N),
        parts={"inner": inner, "N": N},
    )


def make_scaled_handle(inner: FunctionHandle, lam: float) -> FunctionHandle:
    """f(z) = f0(lambda z)."""
    return FunctionHandle(
        kind=FunctionKind.SCALED,
        config=inner.config,
        evaluator=lambda z: inner(lam * z),
        parts={"inner": inner, "lambda": lam},
    )


@dataclass(frozen=True)
class FPoleLogs:
    """Poles of F in log space, one per class of H-poles modulo the symmetries of sin."""

    log_locations: ComplexArray
    coefficient_ratio: ComplexArray
    h_poles: ComplexArray
    h_coefficients: ComplexArray


def f_pole_logs(config: EllipticConfig, max_log_modulus: float) -> FPoleLogs:
    """All poles A of F with log|A| <= max_log_modulus, as log A and B / A = beta cot(alpha).

    Each A equals sin(alpha) for exactly one pole alpha of H in -pi/2 <= Re < pi/2,
    except on Re = -pi/2 where alpha and its reflection give the same A.
    """
    _require_unit_kappa(config)
    height = max(max_log_modulus, 0.0) + 1.0
    region = Rectangle(-math.pi / 2.0, math.pi / 2.0, -height, height)
    alphas, betas = pole_arrays_H(region, config)
    edge = np.abs(alphas.real + math.pi / 2.0) < 1e-9
    keep = ~(edge & (alphas.imag < 0.0))
    alphas, betas = alphas[keep], betas[keep]
    logs = log_sin(alphas)
    logs = logs.real + 1j * _principal(logs.imag)
    inside = logs.real <= max_log_modulus
    return FPoleLogs(
        log_locations=logs[inside],
        coefficient_ratio=betas[inside] * cot_stable(alphas[inside]),
        h_poles=alphas[inside],
        h_coefficients=betas[inside],
    )


def poles_of_F(radius: float, config: EllipticConfig) -> PoleAtlas:
    """Atlas of F = H o arcsin within |A| <= radius; reports C = min |B|/|A|."""
    if radius < 2.0:
        raise ConfigurationError("radius must be at least 2", parameter="radius", value=radius)
    logs = f_pole_logs(config, math.log(radius))
    locations = np.exp(logs.log_locations)
    coefficients = locations * logs.coefficient_ratio
    c_const = float(np.min(np.abs(logs.coefficient_ratio))) if len(locations) else math.nan
    logger.info(f"F atlas: {len(locations)} poles within {radius}, C = {c_const:.4g}")
    return PoleAtlas.from_arrays(
        locations,
        coefficients,
        M=config.M,
        radius=radius,
        provenance=f"F_arcsin(M={config.M})",
        metadata={"C": c_const},
    )


@dataclass(frozen=True)
class SeedLattice:
    """Points u_{m,n} with exp(u_{m,n}) = q_n = sin(p - i pi n), a pole of F."""

    m: npt.NDArray[np.int64]
    n: npt.NDArray[np.int64]
    u: ComplexArray
    q: ComplexArray
    w: complex
    pole: complex


def seed_lattice(config: EllipticConfig, m_range: range, n_range: range) -> SeedLattice:
    """u_{m,n} = n pi + 2 m pi i + i w + delta_n with w = p - pi/2 + i log 2.

    p is the pole of G of least modulus in the period cell (ties by argument) and
    delta_n = log(1 - exp(-2 n pi - 2 i p)) exactly.
    """
    pole = fundamental_poles(config)[0].location
    w = pole - math.pi / 2.0 + 1j * math.log(2.0)
    m = np.arange(m_range.start, m_range.stop, m_range.step or 1, dtype=np.int64)
    n = np.arange(n_range.start, n_range.stop, n_range.step or 1, dtype=np.int64)
    delta = np.log1p(-np.exp(-2.0 * n * math.pi - 2j * pole))
    u = n[None, :] * math.pi + 2j * math.pi * m[:, None] + 1j * w + delta[None, :]
    q = np.sin(pole - 1j * math.pi * n.astype(np.float64))
    return SeedLattice(m=m, n=n, u=u, q=q, w=w, pole=pole)


@dataclass(frozen=True)
class SeedPoles:
    """Preimages z = phi^{-1}(u_{m,n}) of the seeds lying in the comb within |u| <= bound."""

    z: ComplexArray
    u: ComplexArray
    q: ComplexArray
    failed: int

    def identity_residual(self, map_handle: ConformalMapHandle) -> FloatArray:
        """|g(z) - q_n| / |q_n| at every preimage."""
        if not len(self.z):
            return np.zeros(0, dtype=np.float64)
        return np.asarray(np.abs(map_handle.entire(self.z) - self.q) / np.abs(self.q))


def seed_poles(
    map_handle: ConformalMapHandle,
    config: EllipticConfig,
    bound: float,
    workers: int | None = None,
) -> SeedPoles:
    """Invert the seed lattice: each phi^{-1}(u_{m,n}) is a pole of f = F o g, g(z) = q_n."""
    n_max = int(bound / math.pi) + 2
    m_max = int(bound / (2.0 * math.pi)) + 2
    lattice = seed_lattice(config, range(-m_max, m_max + 1), range(n_max + 1))
    u = lattice.u.ravel()
    q = np.broadcast_to(lattice.q[None, :], lattice.u.shape).ravel()
    keep = np.abs(u) <= bound
    u, q = u[keep], q[keep]
    inside = np.array([point_in_comb(map_handle.spec, complex(v)) for v in u], dtype=bool)
    u, q = u[inside], q[inside]
    z = _invert_many(map_handle, u, workers)
    bad = np.isnan(z)
    return SeedPoles(z=z[~bad], u=u[~bad], q=q[~bad], failed=int(np.sum(bad)))


def _seed_cross_check(
    seeds: SeedPoles,
    locations: ComplexArray,
    radius: float,
    sector_filter: tuple[float, float] | None,
) -> ComplexArray:
    """Seed preimages inside |z| <= radius (and the sector) with no atlas location nearby."""
    z = seeds.z[np.abs(seeds.z) <= radius]
    if sector_filter is not None:
        angle = np.angle(z)
        z = z[(angle > sector_filter[0]) & (angle < sector_filter[1])]
    if not len(z) or not len(locations):
        return z
    tree = cKDTree(np.column_stack([locations.real, locations.imag]))
    distance, _ = tree.query(np.column_stack([z.real, z.imag]))
    return z[distance > 1e-6 * np.maximum(1.0, np.abs(z))]


def _branch_targets(
    logs: ComplexArray, ratios: ComplexArray, bound: float
) -> tuple[ComplexArray, ComplexArray]:
    """All w = log A + 2 pi i j with |w| <= bound, paired with B / A."""
    theta = logs.imag
    j_lo = np.ceil((-bound - theta) / (2.0 * math.pi)).astype(np.int64)
    j_hi = np.floor((bound - theta) / (2.0 * math.pi)).astype(np.int64)
    counts = np.maximum(j_hi - j_lo + 1, 0)
    owner = np.repeat(np.arange(len(logs)), counts)
    offsets = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
    j = j_lo[owner] + offsets
    w = logs[owner] + 2j * math.pi * j
    keep = np.abs(w) <= bound
    return w[keep], ratios[owner][keep]


def _invert_many(
    map_handle: ConformalMapHandle, targets: ComplexArray, workers: int | None
) -> ComplexArray:
    if not len(targets):
        return np.zeros(0, dtype=np.complex128)
    pieces = chunked_map(
        lambda chunk: map_handle.inverse(np.asarray(chunk), raise_on_failure=False),
        chunked(targets, _INVERSE_CHUNK),
        workers,
    )
    return np.concatenate(pieces)


def _vector_bisect(
    fun: Callable[[FloatArray], FloatArray], lo: FloatArray, hi: FloatArray, iterations: int = 80
) -> FloatArray:
    """Roots of fun on [lo, hi] given opposite signs at the ends (vectorized)."""
    f_lo = fun(lo)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        f_mid = fun(mid)
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def _real_axis_poles(
    map_handle: ConformalMapHandle, logs: FPoleLogs, radius: float
) -> tuple[ComplexArray, ComplexArray]:
    """Real solutions of g(x) = A for real poles A of F, on both sides of every tooth tip."""
    is_real = np.abs(np.sin(logs.log_locations.imag)) < 1e-12
    if not np.any(is_real):
        return np.zeros(0, dtype=np.complex128), np.zeros(0, dtype=np.complex128)
    log_abs = logs.log_locations.real[is_real]
    signs = np.where(np.cos(logs.log_locations.imag[is_real]) > 0.0, 1, -1)
    ratios = logs.coefficient_ratio[is_real]
    product = map_handle.product
    table = product.table_for_bound(radius)
    below = table.positions <= radius
    n_max = int(np.max(table.upper_heights[below])) + 1 if np.any(below) else 1

    lo_list: list[float] = []
    hi_list: list[float] = []
    target_list: list[float] = []
    ratio_list: list[complex] = []
    for crossing in map_handle.critical_points(n_max):
        if crossing.left_zero > radius:
            continue
        sign = 1 if crossing.n % 2 == 0 else -1
        hits = np.flatnonzero((signs == sign) & (log_abs < crossing.log_value))
        sides = [(crossing.t, crossing.right_zero)]
        if crossing.t > 0.0:
            sides.append((max(crossing.left_zero, 0.0), crossing.t))
        for a, b in sides:
            for i in hits:
                lo_list.append(a)
                hi_list.append(b)
                target_list.append(float(log_abs[i]))
                ratio_list.append(complex(ratios[i]))
    if not lo_list:
        return np.zeros(0, dtype=np.complex128), np.zeros(0, dtype=np.complex128)
    lo = np.asarray(lo_list)
    hi = np.asarray(hi_list)
    targets = np.asarray(target_list)
    span = hi - lo
    lo_in = lo + 1e-12 * np.maximum(span, 1e-300)
    hi_in = hi - 1e-12 * span

    def excess(x: FloatArray) -> FloatArray:
        with np.errstate(divide="ignore"):
            return np.asarray(product.log_g(x.astype(np.complex128)).real - targets)

    x = _vector_bisect(excess, lo_in, hi_in)
    keep = x <= radius
    x = x[keep]
    slope = product.dlog_g(x.astype(np.complex128)).real
    b = np.asarray(ratio_list)[keep] / slope
    locations = np.concatenate([x, -x]).astype(np.complex128)
    coefficients = np.concatenate([b, -b])
    return locations, coefficients


def _sector_prefilter(
    w: ComplexArray, alpha: float, sector: tuple[float, float] | None
) -> npt.NDArray[np.bool_]:
    if sector is None:
        return np.ones(len(w), dtype=bool)
    center = 0.5 * (sector[0] + sector[1])
    if abs(center + math.pi / 2.0) > 1e-12:
        return np.ones(len(w), dtype=bool)
    half_width = 0.5 * (sector[1] - sector[0])
    return (np.abs(w) < 10.0) | (np.abs(np.angle(w)) < 1.3 * alpha * half_width)


def compose_f_poles(
    map_handle: ConformalMapHandle,
    config: EllipticConfig,
    radius: float,
    sector_filter: tuple[float, float] | None = None,
    workers: int | None = None,
) -> PoleAtlas:
    """Poles of f = F o g with |a| <= radius.

    Lower half-plane poles are phi^{-1}(log A + 2 pi i j) over every branch in the
    comb; upper ones come from conj(A) by reflection; real ones solve g(x) = A on
    the monotone pieces between zeros and tooth tips. b = (B/A) / phi'(a).
    Every preimage of the seed lattice inside the disk must reappear in the atlas.

    Raises:
        RootPolishFailed: an inverse-map Newton iteration does not converge
        CompletenessError: a seed preimage is missing from the atlas
    """
    theta = np.linspace(-math.pi + 1e-6, -1e-6, 1024)
    rim = map_handle.phi(radius * np.exp(1j * theta))
    bound = 1.05 * float(np.max(np.abs(rim))) + 1.0
    logs = f_pole_logs(config, bound)
    alpha = map_handle.spec.alpha
    f_atlas_c = float(np.min(np.abs(logs.coefficient_ratio))) if len(logs.h_poles) else math.nan

    lower_only = sector_filter is not None and sector_filter[1] <= 0.0
    sides = [(logs.log_locations, False)]
    if not lower_only:
        conj_logs = logs.log_locations.real - 1j * logs.log_locations.imag
        conj_logs = conj_logs.real + 1j * _principal(conj_logs.imag)
        sides.append((conj_logs, True))

    locs: list[ComplexArray] = []
    coefs: list[ComplexArray] = []
    failures = 0
    sample: complex | None = None
    for side_logs, upper in sides:
        w, ratio = _branch_targets(side_logs, logs.coefficient_ratio, bound)
        inside = np.array([point_in_comb(map_handle.spec, complex(v)) for v in w], dtype=bool)
        inside &= _sector_prefilter(w, alpha, sector_filter)
        w, ratio = w[inside], ratio[inside]
        z = _invert_many(map_handle, w, workers)
        bad = np.isnan(z)
        if np.any(bad):
            failures += int(np.sum(bad))
            sample = complex(w[bad][0])
        z, ratio = z[~bad], ratio[~bad]
        close = np.abs(z) <= radius
        z, ratio = z[close], ratio[close]
        slope = map_handle.product.dlog_g(z) if len(z) else np.zeros(0, dtype=np.complex128)
        if upper:
            locs.append(np.conj(z))
            coefs.append(ratio / np.conj(slope))
        else:
            locs.append(z)
            coefs.append(ratio / slope)
    if failures:
        raise RootPolishFailed("Pole preimages did not converge", failures, sample)

    if not lower_only:
        x, b = _real_axis_poles(map_handle, logs, radius)
        locs.append(x)
        coefs.append(b)

    locations = np.concatenate(locs)
    coefficients = np.concatenate(coefs)
    if sector_filter is not None:
        angle = np.angle(locations)
        mask = (angle > sector_filter[0]) & (angle < sector_filter[1])
        locations, coefficients = locations[mask], coefficients[mask]

    seeds = seed_poles(map_handle, config, bound, workers)
    missing = _seed_cross_check(seeds, locations, radius, sector_filter)
    if len(missing):
        raise CompletenessError(len(missing), complex(missing[0]))

    metadata: dict[str, Any] = {
        "alpha": alpha,
        "C": f_atlas_c,
        "w_bound": bound,
        "normalization_shift": map_handle.normalization_shift,
        "map_accuracy": map_handle.accuracy,
        "seed_count": len(seeds.z),
    }
    metadata.update(delta_bound_report(locations, coefficients, alpha, f_atlas_c))
    logger.info(f"f = F o g atlas: {len(locations)} poles within {radius}")
    return PoleAtlas.from_arrays(
        locations,
        coefficients,
        M=config.M,
        radius=radius,
        provenance=f"composed_f(alpha={alpha}, M={config.M}, N={map_handle.spec.truncation_N})",
        sector_filter=sector_filter,
        metadata=metadata,
    )


def delta_bound_report(
    locations: ComplexArray, coefficients: ComplexArray, alpha: float, c_const: float
) -> dict[str, Any]:
    """Ratios |b| alpha |a|^{alpha-1} / C in the sector Delta (should tend to >= 1)."""
    angle = np.angle(locations)
    in_delta = (angle > DELTA_SECTOR[0]) & (angle < DELTA_SECTOR[1]) & (np.abs(locations) > 0)
    if not np.any(in_delta) or not math.isfinite(c_const) or c_const <= 0.0:
        return {"delta_count": int(np.sum(in_delta))}
    mod = np.abs(locations[in_delta])
    ratio = np.abs(coefficients[in_delta]) * alpha * mod ** (alpha - 1.0) / c_const
    outer = mod >= np.median(mod)
    return {
        "delta_count": int(np.sum(in_delta)),
        "delta_ratio_min_outer": float(np.min(ratio[outer])),
        "delta_fraction_below": float(np.mean(ratio < 1.0)),
    }


def _theorem2_atlas(radius: float, config: EllipticConfig, max_real: float | None) -> PoleAtlas:
    reach = radius if max_real is None else min(radius, max_real)
    big = math.exp(reach)
    locs, coefs = pole_arrays_H(Rectangle(-big, big, -big, big), config)
    mod = np.abs(locs)
    keep = (mod > 0.0) & (np.abs(np.log(mod)) <= radius)
    if max_real is not None:
        keep &= np.log(np.where(mod > 0.0, mod, 1.0)) <= max_real
    p, beta = locs[keep], coefs[keep]
    gaps = np.abs(np.abs(p) - 1.0)
    if len(p) and float(np.min(gaps)) < MODULUS_ONE_MARGIN:
        worst = int(np.argmin(gaps))
        raise ModulusOnePole(complex(p[worst]), float(gaps[worst]))

    u = np.log(np.abs(p))
    theta = np.angle(p)
    k_lo = np.ceil((-radius - theta) / (2.0 * math.pi)).astype(np.int64)
    k_hi = np.floor((radius - theta) / (2.0 * math.pi)).astype(np.int64)
    counts = np.maximum(k_hi - k_lo + 1, 0)
    owner = np.repeat(np.arange(len(p)), counts)
    offsets = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
    k = k_lo[owner] + offsets
    a = u[owner] + 1j * (theta[owner] + 2.0 * math.pi * k)
    b = beta[owner] / p[owner]
    inside = np.abs(a) <= radius
    a, b, owner, k = a[inside], b[inside], owner[inside], k[inside]

    delta = float(np.min(np.abs(u))) if len(u) else math.nan
    if len(a):
        envelope = (1.0 + 2.0 * math.pi**2 / delta**2) * (u[owner] ** 2 + k.astype(float) ** 2)
        bound_ratio = float(np.max(np.abs(a) ** 2 / envelope))
    else:
        bound_ratio = math.nan
    return PoleAtlas.from_arrays(
        a,
        b,
        M=config.M,
        radius=radius,
        provenance=f"theorem2_exp(M={config.M}, kappa={config.kappa})",
        metadata={
            "kappa": config.kappa,
            "max_real": max_real,
            "delta": delta,
            "lattice_bound_max_ratio": bound_ratio,
            "h_pole_count": int(len(p)),
        },
    )


def theorem2_poles(
    radius: float, config: EllipticConfig, perturb: bool = False, max_real: float | None = None
) -> PoleAtlas:
    """Poles log p + 2 pi i k of f = H o exp with |a| <= radius, b = beta / p.

    With perturb=True a pole too close to the unit circle shrinks kappa by 1%
    (up to five times) instead of failing. With max_real set, only poles with
    Re a <= max_real are enumerated; this needs the poles of H in |p| <= e^max_real
    rather than e^radius, and is recorded in the atlas metadata.

    Raises:
        ModulusOnePole: some pole p of H has ||p| - 1| < 1e-3
        RegionTooLarge: the H-pole enumeration exceeds the cap
    """
    cfg = config
    attempts = 6 if perturb else 1
    for attempt in range(attempts):
        try:
            return _theorem2_atlas(radius, cfg, max_real)
        except ModulusOnePole as e:
            if attempt == attempts - 1:
                raise
            logger.warning(f"{e}; retrying with kappa = {cfg.kappa * 0.99:.6g}")
            cfg = replace(cfg, kappa=cfg.kappa * 0.99)
    raise AssertionError("unreachable")


def power_trick(atlas0: PoleAtlas, N: int) -> PoleAtlas:
    """Atlas of f0(z^N): every pole A gives N roots z0 with b = B / (N z0^{N-1}).

    Raises:
        PoleAtOrigin: atlas0 has a pole at 0
    """
    if N < 1:
        raise ConfigurationError("N must be positive", parameter="N", value=N)
    if N == 1:
        return atlas0
    if len(atlas0) and float(np.min(atlas0.moduli)) == 0.0:
        raise PoleAtOrigin("power trick needs f0 without a pole at 0")
    mod = atlas0.moduli ** (1.0 / N)
    arg = np.angle(atlas0.locations)
    branches = np.arange(N)
    roots = mod[:, None] * np.exp(1j * (arg[:, None] + 2.0 * math.pi * branches[None, :]) / N)
    coefs = atlas0.coefficients[:, None] / (N * roots ** (N - 1))
    return PoleAtlas.from_arrays(
        roots.ravel(),
        coefs.ravel(),
        M=atlas0.M,
        radius=atlas0.radius ** (1.0 / N),
        provenance=f"power_trick(N={N})<-{atlas0.provenance}",
        metadata={**atlas0.metadata, "N": N},
    )


def power_of_function(atlas0: PoleAtlas, N: int) -> PoleAtlas:
    """Atlas of f0^N: same poles and coefficients, multiplicity M N."""
    if N < 1:
        raise ConfigurationError("N must be positive", parameter="N", value=N)
    return replace(
        atlas0,
        M=atlas0.M * N,
        provenance=f"power_of_function(N={N})<-{atlas0.provenance}",
        metadata={**atlas0.metadata, "N": N},
    )


def scaled_family(atlas: PoleAtlas, lam: float) -> PoleAtlas:
    """Atlas of f(lambda z): a / lambda and b / lambda."""
    if not 0.0 < lam <= 1.0:
        raise ConfigurationError("lambda must lie in (0, 1]", parameter="lambda", value=lam)
    if lam == 1.0:
        return atlas
    return replace(
        atlas,
        locations=atlas.locations / lam,
        coefficients=atlas.coefficients / lam,
        radius=atlas.radius / lam,
        provenance=f"scaled(lambda={lam})<-{atlas.provenance}",
        metadata={**atlas.metadata, "lambda": lam},
    )


def affine_rescale(
    config: EllipticConfig, atlas: PoleAtlas, inner: FunctionHandle | None = None
) -> FunctionHandle:
    """(a2 - a1) f + a1 for the two poles of least modulus, sending 0 -> a1 and 1 -> a2.

    The pole set is unchanged; coefficients become (a2 - a1)^{1/M} b. The rescaled
    atlas is stored in parts["atlas"].
    """
    if len(atlas) < 2:
        raise ConfigurationError("affine rescale needs two poles", parameter="atlas", value=len(atlas))
    a1 = complex(atlas.locations[0])
    a2 = complex(atlas.locations[1])
    scale = a2 - a1
    f = inner if inner is not None else make_F_handle(config)
    critical_values: list[Any] = [a1, a2, "inf"]
    all_poles = config.M >= 2
    if not all_poles:
        critical_values.append(scale * complex(config.critical_a) + a1)
    rescaled = replace(
        atlas,
        coefficients=atlas.coefficients * scale ** (1.0 / atlas.M),
        provenance=f"affine({scale}, {a1})<-{atlas.provenance}",
        metadata={**atlas.metadata},
    )
    return FunctionHandle(
        kind=FunctionKind.AFFINE,
        config=config,
        evaluator=lambda z: scale * f(z) + a1,
        parts={"inner": f, "affine": (scale, a1), "atlas": rescaled},
        metadata={
            "critical_values": critical_values,
            "all_critical_values_are_poles": all_poles,
            "fatou_criterion": "prefixed-point-free; J = C claimed, not verified",
        },
    )


def restrict_to_sector(
    atlas: PoleAtlas,
    sector: tuple[float, float] = DELTA_SECTOR,
    annulus: tuple[float, float] | None = None,
) -> PoleAtlas:
    """Poles with sector[0] < arg a < sector[1] and, optionally, annulus[0] <= |a| <= annulus[1]."""
    angle = np.angle(atlas.locations)
    mask = (angle > sector[0]) & (angle < sector[1])
    radius = atlas.radius
    if annulus is not None:
        mask &= (atlas.moduli >= annulus[0]) & (atlas.moduli <= annulus[1])
        radius = min(radius, annulus[1])
    return replace(
        atlas,
        locations=atlas.locations[mask],
        coefficients=atlas.coefficients[mask],
        radius=radius,
        sector_filter=sector,
        metadata=dict(atlas.metadata),
    )


def grid_pole_search(
    handle: FunctionHandle,
    radius: float,
    spacing: float,
    threshold: float | None = None,
    max_real: float | None = None,
) -> ComplexArray:
    """Brute-force poles in |z| <= radius (and Re z <= max_real): local maxima of |f|
    on a grid, polished on 1/f.

    Newton for u = 1/f ~ ((z - a)/b)^M uses z <- z - M u / u'.
    """
    right = radius if max_real is None else min(radius, max_real)
    xs = np.arange(-radius, right + 0.5 * spacing, spacing)
    ys = np.arange(-radius, radius + 0.5 * spacing, spacing)
    gx, gy = np.meshgrid(xs, ys)
    grid = gx + 1j * gy
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        values = np.abs(handle(grid.ravel())).reshape(grid.shape)
    values = np.nan_to_num(values, nan=np.inf, posinf=np.inf)
    floor = threshold if threshold is not None else 100.0 * float(np.median(values[np.isfinite(values)]))
    padded = np.pad(values, 1, constant_values=-np.inf)
    peak = values > floor
    rows, cols = values.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            peak &= values >= padded[1 + dy : 1 + dy + rows, 1 + dx : 1 + dx + cols]
    z = grid[peak]
    z = z[np.abs(z) <= radius + spacing]
    m = handle.multiplicity
    converged = np.zeros(len(z), dtype=bool)
    for _ in range(40):
        h = 1e-6 * np.maximum(1.0, np.abs(z))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            u = 1.0 / handle(z)
            du = (1.0 / handle(z + h) - 1.0 / handle(z - h)) / (2.0 * h)
            step = m * u / du
        step = np.where(np.isfinite(step), step, 0.0)
        z = z - step
        converged = np.abs(step) < 1e-11 * np.maximum(1.0, np.abs(z))
        if np.all(converged):
            break
    keep = converged & (np.abs(z) <= radius)
    if max_real is not None:
        keep &= z.real <= max_real
    z = z[keep]
    order = canonical_order(z)
    z = z[order]
    return z[dedup_sorted(z, 1e-7)]


def laurent_coefficient(
    handle: FunctionHandle, pole: complex, M: int, radius: float = 1e-3, nodes: int = 16
) -> complex:
    """b^M from the mean of (z - a)^M f(z) over a small circle about a."""
    theta = 2.0 * math.pi * np.arange(nodes) / nodes
    offsets = radius * np.exp(1j * theta)
    values = handle(pole + offsets) * offsets**M
    return complex(np.mean(values))


def coefficient_errors(handle: FunctionHandle, atlas: PoleAtlas, indices: list[int]) -> FloatArray:
    """Relative errors |fit - b^M| / |b^M| at the chosen atlas records."""
    out = []
    for i in indices:
        a = complex(atlas.locations[i])
        target = complex(atlas.coefficients[i]) ** atlas.M
        fitted = laurent_coefficient(handle, a, atlas.M)
        out.append(abs(fitted - target) / abs(target))
    return np.asarray(out)


def check_completeness(
    handle: FunctionHandle, atlas: PoleAtlas, radius: float = 2.0, spacing: float = 0.01
) -> int:
    """Compare the atlas with a brute-force grid search inside |z| <= radius.

    A strip-limited atlas (metadata "max_real") is compared on Re z <= max_real only.
    Returns the number of grid poles, all of which are in the atlas.

    Raises:
        CompletenessError: the grid finds a pole that the atlas lacks
    """
    max_real = atlas.metadata.get("max_real")
    found = grid_pole_search(handle, min(radius, atlas.radius), spacing, max_real=max_real)
    if not len(found):
        return 0
    if not len(atlas):
        raise CompletenessError(len(found), complex(found[0]))
    distance = np.min(np.abs(found[:, None] - atlas.locations[None, :]), axis=1)
    missing = distance > 1e-6 * np.maximum(1.0, np.abs(found))
    if np.any(missing):
        raise CompletenessError(int(np.sum(missing)), complex(found[missing][0]))
    logger.info(f"Completeness: {len(found)} grid poles within {radius} all in the atlas")
    return int(len(found))


@dataclass(frozen=True, eq=False)
class Construction:
    """A function chosen from a RunConfig, with everything needed to enumerate its poles."""

    route: FunctionKind
    handle: FunctionHandle
    config: EllipticConfig
    rho: float
    N: int = 1
    lam: float = 1.0
    spec: CombSpec | None = None
    map_handle: ConformalMapHandle | None = None

    @property
    def base_kind(self) -> FunctionKind:
        return FunctionKind.COMPOSED_F if self.route == FunctionKind.POWER_TRICK else self.route

    def atlas(
        self,
        radius: float,
        sector_filter: tuple[float, float] | None = None,
        workers: int | None = None,
        max_real: float | None = None,
    ) -> PoleAtlas:
        """Pole atlas of the constructed function within |z| <= radius.

        max_real cuts an H o exp atlas to Re a <= max_real (see theorem2_poles).
        """
        if max_real is not None and (
            self.base_kind != FunctionKind.THEOREM2_EXP or self.N != 1 or self.lam != 1.0
        ):
            raise ConfigurationError(
                "max_real applies only to the unscaled H o exp family",
                parameter="max_real",
                value=max_real,
            )
        inner_radius = (self.lam * radius) ** self.N
        if self.base_kind == FunctionKind.F_ARCSIN:
            base = poles_of_F(max(inner_radius, 2.0), self.config).within(inner_radius)
        elif self.base_kind == FunctionKind.THEOREM2_EXP:
            base = theorem2_poles(inner_radius, self.config, perturb=True, max_real=max_real)
        else:
            assert self.map_handle is not None
            inner_sector = sector_filter if self.N == 1 else None
            base = compose_f_poles(
                self.map_handle, self.config, inner_radius, inner_sector, workers
            )
        atlas = power_trick(base, self.N) if self.N > 1 else base
        atlas = scaled_family(atlas, self.lam)
        if sector_filter is not None:
            atlas = restrict_to_sector(atlas, sector_filter)
        return atlas

    def handle_for(self, atlas: PoleAtlas) -> FunctionHandle:
        """The handle whose poles the atlas lists; H o exp may have moved kappa."""
        kappa = atlas.metadata.get("kappa")
        if self.route != FunctionKind.THEOREM2_EXP or kappa in (None, self.config.kappa):
            return self.handle
        return make_theorem2_handle(replace(self.config, kappa=float(kappa)))

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "kind": self.route.value,
            "descriptor": self.handle.descriptor(),
            "M": self.config.M,
            "kappa": self.config.kappa,
            "rho": self.rho,
            "N": self.N,
            "rho0": self.rho / self.N,
            "lambda": self.lam,
            "comb": self.spec.to_dict() if self.spec is not None else None,
        }
        if self.map_handle is not None:
            data["map"] = {
                "alpha": self.map_handle.spec.alpha,
                "truncation_N": self.map_handle.spec.truncation_N,
                "normalization_shift": self.map_handle.normalization_shift,
                "accuracy": self.map_handle.accuracy,
                "tooth_residual": self.map_handle.tooth_residual,
                "warschawski_oscillation": self.map_handle.warschawski.oscillation,
            }
        return data


def construct(run: RunConfig, map_options: MapOptions | None = None) -> Construction:
    """Pick and build the function for a run.

    rho = 0 gives F; 0 < rho < 2 gives F o g with g of order rho / 2; rho >= 2 applies
    the power trick with N = floor(rho) to the rho / N construction; theorem2 selects
    H o exp. A lambda below 1 rescales the result.
    """
    config = EllipticConfig(M=run.M, tolerance=run.tolerance)
    spec: CombSpec | None = None
    map_handle: ConformalMapHandle | None = None
    route = FunctionKind(run.route)
    N = 1
    rho = math.inf if route == FunctionKind.THEOREM2_EXP else run.rho
    if route == FunctionKind.F_ARCSIN:
        handle = make_F_handle(config)
    elif route == FunctionKind.THEOREM2_EXP:
        handle = make_theorem2_handle(config)
    else:
        alpha = run.comb_alpha
        spec = build_comb_modified_exp(alpha, run.c, run.q, truncation_N=run.truncation_N)
        if run.halve_teeth:
            spec = halve_teeth(spec)
        opts = map_options or MapOptions(accuracy_target=run.map_accuracy)
        map_handle = build_conformal_map(spec, opts)
        handle = make_composed_handle(map_handle, config)
        if route == FunctionKind.POWER_TRICK:
            N = run.power_N
            handle = make_power_handle(handle, N)
    lam = run.lambda_
    if lam < 1.0:
        handle = make_scaled_handle(handle, lam)
    logger.info(f"Constructed {handle.descriptor()}")
    return Construction(
        route=route,
        handle=handle,
        config=config,
        rho=rho,
        N=N,
        lam=lam,
        spec=spec,
        map_handle=map_handle,
    )
