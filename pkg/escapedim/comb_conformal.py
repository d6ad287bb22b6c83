"""
Comb domains and the MacLane-Vinberg entire function.

A comb is the plane minus the horizontal teeth {x + i n pi : x <= L_n}. The map
phi from the lower half-plane onto a real-symmetric comb is handled through
g = exp(phi), a real entire function of genus zero whose zeros lie on the real
axis, one between each pair of consecutive teeth:

    g(z) = C (iz)^m0 prod_j (1 - z^2 / s_j^2)^m_j

The critical value of g between two zeros is the tooth tip (-1)^n e^{L_n}, so the
zeros belonging to the first truncation_N teeth are fitted by least squares to the
prescribed tooth lengths. Zeros further out follow the asymptotic tooth law; they
are summed explicitly up to a multiple of |z| and the rest enters through a power
series remainder. Principal logarithms of the factors give the branch of phi that
is continuous on the lower half-plane and real on the negative imaginary axis.
"""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.integrate import quad, trapezoid
from scipy.optimize import brentq, least_squares
from scipy.spatial import cKDTree

from .config import (
    DEFAULT_TRUNCATION_N,
    EXPLICIT_ZERO_FACTOR,
    REFERENCE_ARG_MARGIN,
    REFERENCE_POINTS,
    REFERENCE_RADII,
    MapOptions,
)
from .errors import (
    AccuracyNotMet,
    ConfigurationError,
    EvaluationRangeExceeded,
    HypothesisFailed,
    InjectivityCheckFailed,
    OutOfDomain,
    RootPolishFailed,
)
from .logging_config import get_logger

logger = get_logger(__name__)

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

TAIL_COUNT_CAP = 1 << 21
AXIS_TAIL_COUNT = 1 << 15
_MATRIX_BUDGET = 2_000_000
_NEWTON_TOLERANCE = 1e-10
_CONTINUATION_ROUNDS = 5


class ToothLaw(str, Enum):
    """How tooth lengths continue beyond the explicit table."""

    SECTOR = "sector"
    SECTOR_BOUNDARY = "sector_boundary"
    MODIFIED_EXP = "modified_exp"
    UNIFORM = "uniform"
    ABSENT = "absent"


@dataclass(frozen=True)
class ModifiedExpParams:
    """Parameters of E*(z) = exp(alpha z) / (z^2 + c^2)^q."""

    c: float
    q: int


def cosh_critical_point(n: int) -> float:
    """x_n = cosh(n pi / 2), the critical points of sin on the imaginary direction."""
    return math.cosh(abs(n) * math.pi / 2.0)


def _log_cosh(x: float) -> float:
    x = abs(x)
    return x + math.log1p(math.exp(-2.0 * x)) - math.log(2.0)


@lru_cache(maxsize=65536)
def _cosh_index(bound: float) -> int:
    """max{n >= 0 : log cosh(n pi / 2) <= bound}."""
    if bound < 0.0:
        return -1
    arccosh = bound + math.log1p(math.sqrt(-math.expm1(-2.0 * bound)))
    j = int(math.floor(2.0 * arccosh / math.pi))
    while _log_cosh((j + 1) * math.pi / 2.0) <= bound:
        j += 1
    while j > 0 and _log_cosh(j * math.pi / 2.0) > bound:
        j -= 1
    return j


def _log_cosh_array(x: FloatArray) -> FloatArray:
    x = np.abs(x)
    return np.asarray(x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0), dtype=np.float64)


def _cosh_index_array(bound: FloatArray) -> FloatArray:
    """Vectorized _cosh_index for bound >= 0, returned as float indices."""
    b = np.maximum(bound, 0.0)
    arccosh = b + np.log1p(np.sqrt(-np.expm1(-2.0 * b)))
    j = np.floor(2.0 * arccosh / math.pi)
    j += _log_cosh_array((j + 1.0) * math.pi / 2.0) <= b
    j -= (j > 0) & (_log_cosh_array(j * math.pi / 2.0) > b)
    return j


def _strip_log_abscissa(alpha: float, q: int, c: float, heights: FloatArray) -> FloatArray:
    """u with Im E(u + i pi/2) = h pi for E(w) = e^{alpha w} / (w^2 + c^2)^q."""
    h = np.asarray(heights, dtype=np.float64)
    amplitude = math.pi / math.sin(alpha * math.pi / 2.0)
    u = np.log(amplitude * h) / alpha
    if q == 0:
        return np.asarray(u, dtype=np.float64)
    target = np.log(h * math.pi)
    for _ in range(60):
        zeta = u + 0.5j * math.pi
        log_e = alpha * zeta - q * np.log(zeta * zeta + c * c)
        value = log_e.real + np.log(np.sin(log_e.imag))
        slope_c = alpha - 2.0 * q * zeta / (zeta * zeta + c * c)
        slope = slope_c.real + slope_c.imag / np.tan(log_e.imag)
        step = np.clip((value - target) / slope, -5.0, 5.0)
        u = u - step
        if np.max(np.abs(step)) < 1e-14 * float(np.max(np.abs(u) + 1.0)):
            break
    return np.asarray(u, dtype=np.float64)


def _log_x(provider: Callable[[int], float], n: int) -> float:
    value = provider(n)
    return math.log(value) if value > 0.0 else -math.inf


def _provider_index(provider: Callable[[int], float], bound: float, limit: int = 10**6) -> int:
    j = 0
    while j < limit and _log_x(provider, j + 1) <= bound:
        j += 1
    return j


def sector_bound(alpha: float, k: int) -> float:
    """Abscissa of the sector boundary at height pi |k|."""
    return math.pi * abs(k) / math.tan(alpha * math.pi / 2.0)


def _strip_boundary_point(alpha: float, c: float, q: int, t: float) -> complex:
    zeta = complex(t, math.pi / 2.0)
    return complex(np.exp(alpha * zeta) / (zeta * zeta + c * c) ** q)


@lru_cache(maxsize=65536)
def modified_boundary_abscissa(alpha: float, c: float, q: int, k: int) -> float:
    """Leftmost point of W* = E*(S) at height pi |k| (0 at k = 0).

    Follows the upper boundary curve t -> E*(t + i pi / 2) until its imaginary
    part reaches pi |k|.
    """
    k = abs(k)
    if k == 0:
        return 0.0
    target = math.pi * k
    t_prev, t = -40.0, -40.0
    while _strip_boundary_point(alpha, c, q, t).imag < target:
        t_prev, t = t, t + 0.5
        if t > 1e5:
            raise ConfigurationError("Boundary of W* never reaches the tooth height", value=k)
    if t == t_prev:
        return _strip_boundary_point(alpha, c, q, t).real
    root = brentq(
        lambda s: _strip_boundary_point(alpha, c, q, s).imag - target, t_prev, t, xtol=1e-14
    )
    return _strip_boundary_point(alpha, c, q, root).real


def check_modified_injectivity(alpha: float, c: float, q: int) -> None:
    """Half-plane test for log E* on a grid of the strip |Im z| <= pi / 2.

    Re(alpha - 2 q z / (z^2 + c^2)) > 0 makes log E* injective on the convex strip,
    and an imaginary range narrower than 2 pi carries that over to E* itself.
    """
    if c <= math.pi / 2.0:
        raise InjectivityCheckFailed("c must exceed pi/2", {"c": c})
    t = np.linspace(-50.0, 200.0, 2001)
    y = np.linspace(-math.pi / 2.0, math.pi / 2.0, 41)
    tt, yy = np.meshgrid(t, y)
    z = tt + 1j * yy
    derivative = alpha - 2.0 * q * z / (z * z + c * c)
    worst = float(np.min(derivative.real))
    if worst <= 0.0:
        raise InjectivityCheckFailed(
            "Derivative of log E* leaves the right half-plane",
            {"alpha": alpha, "c": c, "q": q, "min_real_part": worst},
        )
    arg_range = alpha * yy - q * np.angle(z * z + c * c)
    width = float(np.max(arg_range) - np.min(arg_range))
    if width >= 2.0 * math.pi:
        raise InjectivityCheckFailed(
            "Imaginary range of log E* is too wide", {"alpha": alpha, "c": c, "q": q, "width": width}
        )


@dataclass(frozen=True)
class CombSpec:
    """Comb with teeth at heights n pi, symmetric in n.

    Attributes:
        alpha: Order of g; the comb contains the sector of half-opening alpha pi / 2.
        teeth: log|c_n| for n = 0..truncation_N (-inf for an absent tooth).
        truncation_N: Number of explicit teeth on each side.
        uniform_core_N: Teeth with |k| <= uniform_core_N forced to length 0.
        modified_exp: E* parameters for the modified law.
        tail_law: Continuation of tooth lengths beyond truncation_N.
        tooth_scale: Factor applied to every tooth length.
    """

    alpha: float
    teeth: tuple[float, ...]
    truncation_N: int
    uniform_core_N: int | None = None
    modified_exp: ModifiedExpParams | None = None
    tail_law: ToothLaw = ToothLaw.SECTOR
    tooth_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in (0, 1]", parameter="alpha", value=self.alpha)
        if self.truncation_N < 1:
            raise ConfigurationError(
                "truncation_N must be positive", parameter="truncation_N", value=self.truncation_N
            )
        if len(self.teeth) != self.truncation_N + 1:
            raise ConfigurationError(
                "teeth must list n = 0..truncation_N", parameter="teeth", value=len(self.teeth)
            )
        if any(math.isnan(v) or v == math.inf for v in self.teeth):
            raise ConfigurationError("tooth lengths must be finite or -inf", parameter="teeth")
        if all(v == -math.inf for v in self.teeth) and self.tail_law == ToothLaw.ABSENT:
            raise ConfigurationError("comb has no teeth", parameter="teeth")
        if self.uniform_core_N is not None and not 0 <= self.uniform_core_N <= self.truncation_N:
            raise ConfigurationError(
                "uniform_core_N must lie in [0, truncation_N]",
                parameter="uniform_core_N",
                value=self.uniform_core_N,
            )
        if self.tail_law == ToothLaw.MODIFIED_EXP and self.modified_exp is None:
            raise ConfigurationError("modified law needs c and q", parameter="modified_exp")

    def law_tooth(self, k: int) -> float:
        """Tooth length given by the continuation law (before core and scale)."""
        k = abs(k)
        if self.tail_law == ToothLaw.SECTOR:
            j = _cosh_index(sector_bound(self.alpha, k))
            return _log_cosh(j * math.pi / 2.0)
        if self.tail_law == ToothLaw.SECTOR_BOUNDARY:
            return sector_bound(self.alpha, k)
        if self.tail_law == ToothLaw.MODIFIED_EXP:
            params = self.modified_exp
            assert params is not None
            bound = modified_boundary_abscissa(self.alpha, params.c, params.q, k)
            return _log_cosh(_cosh_index(bound) * math.pi / 2.0)
        if self.tail_law == ToothLaw.UNIFORM:
            return 0.0
        return -math.inf

    def tooth_length(self, n: int) -> float:
        k = abs(n)
        if k <= self.truncation_N:
            return self.teeth[k]
        if self.uniform_core_N is not None and k <= self.uniform_core_N:
            return 0.0
        return self.tooth_scale * self.law_tooth(k)

    def critical_value(self, n: int) -> float:
        """c_n = (-1)^n e^{L_n} (0 for an absent tooth)."""
        length = self.tooth_length(n)
        if length == -math.inf:
            return 0.0
        return (-1.0) ** abs(n) * math.exp(length)

    def tooth_lengths(self, n_max: int) -> FloatArray:
        """Lengths for n = 0..n_max."""
        return _tooth_table(self, n_max)

    def extended(self, new_N: int) -> "CombSpec":
        """Same comb with the explicit table grown to new_N teeth."""
        if new_N <= self.truncation_N:
            return self
        extra = tuple(self.tooth_length(k) for k in range(self.truncation_N + 1, new_N + 1))
        return replace(self, teeth=self.teeth + extra, truncation_N=new_N)

    def to_dict(self) -> dict[str, Any]:
        n = self.truncation_N
        return {
            "alpha": self.alpha,
            "teeth": [
                {"n": k, "log_len": _json_length(self.tooth_length(k))} for k in range(-n, n + 1)
            ],
            "uniform_core_N": self.uniform_core_N,
            "modified_exp": (
                {"c": self.modified_exp.c, "q": self.modified_exp.q} if self.modified_exp else None
            ),
            "truncation_N": n,
            "tail_law": self.tail_law.value,
            "tooth_scale": self.tooth_scale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CombSpec":
        n = int(data["truncation_N"])
        by_index = {int(t["n"]): t["log_len"] for t in data["teeth"]}
        teeth = tuple(
            -math.inf if by_index.get(k) is None else float(by_index[k]) for k in range(n + 1)
        )
        modified = data.get("modified_exp")
        return cls(
            alpha=float(data["alpha"]),
            teeth=teeth,
            truncation_N=n,
            uniform_core_N=data.get("uniform_core_N"),
            modified_exp=ModifiedExpParams(float(modified["c"]), int(modified["q"]))
            if modified
            else None,
            tail_law=ToothLaw(data.get("tail_law", ToothLaw.SECTOR_BOUNDARY.value)),
            tooth_scale=float(data.get("tooth_scale", 1.0)),
        )


def _json_length(value: float) -> float | None:
    return None if value == -math.inf else value


_SCALAR_LAW_LIMIT = 64


def _modified_abscissa_array(alpha: float, c: float, q: int, ks: FloatArray) -> FloatArray:
    out = np.empty(len(ks))
    small = ks < _SCALAR_LAW_LIMIT
    for i in np.flatnonzero(small):
        out[i] = modified_boundary_abscissa(alpha, c, q, int(ks[i]))
    if np.any(~small):
        u = _strip_log_abscissa(alpha, q, c, ks[~small])
        zeta = u + 0.5j * math.pi
        out[~small] = np.exp(alpha * zeta - q * np.log(zeta * zeta + c * c)).real
    return out


def _law_teeth(spec: CombSpec, ks: FloatArray) -> FloatArray:
    if spec.tail_law == ToothLaw.SECTOR:
        bound = math.pi * ks / math.tan(spec.alpha * math.pi / 2.0)
        return _log_cosh_array(_cosh_index_array(bound) * math.pi / 2.0)
    if spec.tail_law == ToothLaw.SECTOR_BOUNDARY:
        return np.asarray(math.pi * ks / math.tan(spec.alpha * math.pi / 2.0), dtype=np.float64)
    if spec.tail_law == ToothLaw.MODIFIED_EXP:
        params = spec.modified_exp
        assert params is not None
        bound = _modified_abscissa_array(spec.alpha, params.c, params.q, ks)
        return _log_cosh_array(_cosh_index_array(bound) * math.pi / 2.0)
    if spec.tail_law == ToothLaw.UNIFORM:
        return np.zeros(len(ks))
    return np.full(len(ks), -math.inf)


@lru_cache(maxsize=64)
def _tooth_table(spec: CombSpec, n_max: int) -> FloatArray:
    head = np.array(spec.teeth[: n_max + 1], dtype=np.float64)
    if n_max <= spec.truncation_N:
        return head
    ks = np.arange(spec.truncation_N + 1, n_max + 1, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        tail = spec.tooth_scale * _law_teeth(spec, ks)
    if spec.uniform_core_N is not None:
        tail[ks <= spec.uniform_core_N] = 0.0
    return np.concatenate([head, tail])


def _finish_teeth(raw: Sequence[float], uniform_core_N: int | None) -> tuple[float, ...]:
    teeth = list(raw)
    if uniform_core_N is not None:
        for k in range(min(uniform_core_N, len(teeth) - 1) + 1):
            teeth[k] = 0.0
    return tuple(teeth)


def build_comb_from_sector(
    alpha: float,
    xk_provider: Callable[[int], float] | None = None,
    truncation_N: int = DEFAULT_TRUNCATION_N,
    uniform_core_N: int | None = None,
) -> CombSpec:
    """Comb with tooth_length(k) = log x_{j(k)}, j(k) = max{n : log x_n <= pi|k| cot(alpha pi/2)}.

    With the default provider x_n = cosh(n pi / 2) the continuation beyond
    truncation_N uses the same rule; a custom provider is continued by the sector
    boundary itself.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("alpha must lie in (0, 1)", parameter="alpha", value=alpha)
    if xk_provider is None or xk_provider is cosh_critical_point:
        raw = [
            _log_cosh(_cosh_index(sector_bound(alpha, k)) * math.pi / 2.0)
            for k in range(truncation_N + 1)
        ]
        law = ToothLaw.SECTOR
    else:
        raw = [
            _log_x(xk_provider, _provider_index(xk_provider, sector_bound(alpha, k)))
            for k in range(truncation_N + 1)
        ]
        law = ToothLaw.SECTOR_BOUNDARY
    spec = CombSpec(
        alpha=alpha,
        teeth=_finish_teeth(raw, uniform_core_N),
        truncation_N=truncation_N,
        uniform_core_N=uniform_core_N,
        tail_law=law,
    )
    logger.debug(f"Sector comb alpha={alpha}: first teeth {spec.teeth[:5]}")
    return spec


def build_comb_modified_exp(
    alpha: float,
    c: float,
    q: int,
    xk_provider: Callable[[int], float] | None = None,
    truncation_N: int = DEFAULT_TRUNCATION_N,
    uniform_core_N: int | None = None,
) -> CombSpec:
    """Comb for E*(z) = e^{alpha z} / (z^2 + c^2)^q; q = 0 gives the sector comb.

    Raises:
        InjectivityCheckFailed: E* fails the derivative half-plane test
    """
    if q < 0 or c <= 0.0:
        raise ConfigurationError("need c > 0 and q >= 0", parameter="q", value=(c, q))
    if q == 0:
        return build_comb_from_sector(alpha, xk_provider, truncation_N, uniform_core_N)
    check_modified_injectivity(alpha, c, q)
    provider = xk_provider or cosh_critical_point
    raw = [
        _log_x(provider, _provider_index(provider, modified_boundary_abscissa(alpha, c, q, k)))
        for k in range(truncation_N + 1)
    ]
    return CombSpec(
        alpha=alpha,
        teeth=_finish_teeth(raw, uniform_core_N),
        truncation_N=truncation_N,
        uniform_core_N=uniform_core_N,
        modified_exp=ModifiedExpParams(c=c, q=q),
        tail_law=ToothLaw.MODIFIED_EXP,
    )


def build_uniform_comb(truncation_N: int = DEFAULT_TRUNCATION_N) -> CombSpec:
    """All teeth of length 0; the resulting g is a cosine."""
    return CombSpec(
        alpha=1.0,
        teeth=(0.0,) * (truncation_N + 1),
        truncation_N=truncation_N,
        tail_law=ToothLaw.UNIFORM,
    )


def halve_teeth(spec: CombSpec) -> CombSpec:
    """Every tooth length multiplied by 1/2 (a perturbed comb)."""
    return replace(
        spec,
        teeth=tuple(0.5 * v for v in spec.teeth),
        tooth_scale=0.5 * spec.tooth_scale,
    )


def point_in_comb(spec: CombSpec, w: complex, tol: float = 1e-12) -> bool:
    """True unless w lies on a tooth."""
    n = round(w.imag / math.pi)
    if abs(w.imag - n * math.pi) > tol:
        return True
    return bool(w.real > spec.tooth_length(n))


THETA_RADIUS_CAP = 1e6


def psi_profile(spec: CombSpec, r: float, lengths_table: FloatArray | None = None) -> float:
    """Angular measure of the arc of {|w| = r} in the comb through the point r."""
    if r <= spec.tooth_length(0):
        return 0.0
    n_max = int(math.floor(r / math.pi))
    angles = [math.pi] if -r <= spec.tooth_length(0) else []
    if n_max >= 1:
        n = np.arange(1, n_max + 1, dtype=np.float64)
        if lengths_table is not None and len(lengths_table) > n_max:
            lengths = lengths_table[1 : n_max + 1]
        else:
            lengths = spec.tooth_lengths(n_max)[1:]
        ratio = np.minimum(n * math.pi / r, 1.0)
        crossing = np.sqrt(np.maximum(r * r - (n * math.pi) ** 2, 0.0))
        base = np.arcsin(ratio)
        right = crossing <= lengths
        left = ~right & (-crossing <= lengths)
        candidates = np.concatenate([base[right], math.pi - base[left]])
        if candidates.size:
            angles.append(float(np.min(candidates)))
    return 2.0 * min(angles) if angles else 2.0 * math.pi


def theta_profile(spec: CombSpec, x: float) -> float:
    """Width of the strip preimage at abscissa x: psi(e^{alpha x}) / alpha."""
    if x < 0.0:
        raise ConfigurationError("theta_profile needs x >= 0", parameter="x", value=x)
    return psi_profile(spec, math.exp(spec.alpha * x)) / spec.alpha


@dataclass(frozen=True)
class TailZeroLaw:
    """Positions of the zeros of g beyond the explicit teeth.

    The zero between teeth n and n + 1 sits at "height" h = n + 1/2 and solves
    Im E(log s + i pi/2) = h pi for the model E(w) = e^{alpha w} / (w^2 + c^2)^q.
    """

    alpha: float
    q: int
    c: float
    first_height: float
    first_multiplicity: int
    next_height: float
    scale: float = 1.0

    def model_positions(self, heights: FloatArray) -> FloatArray:
        u = _strip_log_abscissa(self.alpha, self.q, self.c, heights)
        return np.asarray(self.scale * np.exp(u), dtype=np.float64)

    def heights(self, count: int) -> FloatArray:
        regular = self.next_height + np.arange(max(count - 1, 0), dtype=np.float64)
        return np.concatenate([[self.first_height], regular])

    def multiplicities(self, count: int) -> IntArray:
        out = np.ones(count, dtype=np.int64)
        out[0] = self.first_multiplicity
        return out

    def count_below(self, bound: float) -> int:
        """Number of tail zeros needed so that every zero <= bound is included."""
        h_max = math.sin(self.alpha * math.pi / 2.0) / math.pi * (bound / self.scale) ** self.alpha
        return max(2, math.ceil(h_max - self.next_height) + 3)

    def rescaled(self, kappa: float) -> "TailZeroLaw":
        return replace(self, scale=self.scale / kappa)


@dataclass(frozen=True)
class ZeroTable:
    """Explicit positive zeros (sorted) with multiplicities, height intervals and remainders."""

    positions: FloatArray
    multiplicities: IntArray
    lower_heights: FloatArray
    upper_heights: FloatArray
    remainders: tuple[float, float, float]
    next_height: float


@dataclass(frozen=True, eq=False)
class VinbergProduct:
    """g(z) = C (iz)^m0 prod (1 - z^2/s_j^2)^{m_j} with core zeros and a tail law."""

    log_c: float
    central_multiplicity: int
    core_zeros: FloatArray
    core_multiplicities: IntArray
    core_lower: FloatArray
    core_upper: FloatArray
    tail: TailZeroLaw
    _tables: dict[int, ZeroTable] = field(default_factory=dict, repr=False)

    def rescaled(self, kappa: float) -> "VinbergProduct":
        """Product for z -> g(kappa z)."""
        return VinbergProduct(
            log_c=self.log_c + self.central_multiplicity * math.log(kappa),
            central_multiplicity=self.central_multiplicity,
            core_zeros=self.core_zeros / kappa,
            core_multiplicities=self.core_multiplicities,
            core_lower=self.core_lower,
            core_upper=self.core_upper,
            tail=self.tail.rescaled(kappa),
        )

    def table(self, tail_count: int) -> ZeroTable:
        count = 1 << max(1, math.ceil(math.log2(max(tail_count, 2))))
        if count > TAIL_COUNT_CAP:
            raise EvaluationRangeExceeded(float(count), float(TAIL_COUNT_CAP))
        cached = self._tables.get(count)
        if cached is not None:
            return cached
        heights = self.tail.heights(count + 1)
        positions = self.tail.model_positions(heights)
        mults = self.tail.multiplicities(count + 1)
        tail_lower = np.concatenate([[heights[0] - mults[0] / 2.0], heights[1:] - 0.5])
        tail_upper = np.concatenate([[heights[0] + mults[0] / 2.0], heights[1:] + 0.5])
        # the last generated zero only anchors the remainder integral
        h_next, s_next = float(heights[-1]), float(positions[-1])
        rem = []
        for p in (1, 2, 3):
            e = 2.0 * p / self.tail.alpha
            rem.append(s_next ** (-2 * p) * h_next**e * (h_next - 0.5) ** (1.0 - e) / (e - 1.0))
        table = ZeroTable(
            positions=np.concatenate([self.core_zeros, positions[:-1]]),
            multiplicities=np.concatenate([self.core_multiplicities, mults[:-1]]),
            lower_heights=np.concatenate([self.core_lower, tail_lower[:-1]]),
            upper_heights=np.concatenate([self.core_upper, tail_upper[:-1]]),
            remainders=(rem[0], rem[1], rem[2]),
            next_height=h_next,
        )
        self._tables[count] = table
        return table

    def table_for_bound(self, bound: float) -> ZeroTable:
        return self.table(self.tail.count_below(bound))

    def _grouped(
        self,
        z: npt.ArrayLike,
        kernel: Callable[[ComplexArray, ZeroTable], ComplexArray],
        factor: float = EXPLICIT_ZERO_FACTOR,
    ) -> ComplexArray:
        zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        out = np.empty_like(zz)
        order = np.argsort(np.abs(zz), kind="stable")
        for start in range(0, len(order), 256):
            idx = order[start : start + 256]
            part = zz[idx]
            bound = factor * max(float(np.max(np.abs(part))), 1.0)
            out[idx] = kernel(part, self.table_for_bound(bound))
        return out

    def _log_kernel(self, z: ComplexArray, table: ZeroTable) -> ComplexArray:
        out = np.full(z.shape, self.log_c, dtype=np.complex128)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.central_multiplicity:
                out += self.central_multiplicity * np.log(1j * z)
            s = table.positions
            m = table.multiplicities
            width = max(1, _MATRIX_BUDGET // max(len(z), 1))
            for start in range(0, len(s), width):
                ss = s[start : start + width]
                mm = m[start : start + width]
                ratio = z[:, None] / ss[None, :]
                out += (mm[None, :] * (np.log1p(-ratio) + np.log1p(ratio))).sum(axis=1)
        r2, r4, r6 = table.remainders
        z2 = z * z
        out -= z2 * r2 + z2 * z2 * r4 / 2.0 + z2 * z2 * z2 * r6 / 3.0
        return out

    def _dlog_kernel(self, z: ComplexArray, table: ZeroTable) -> ComplexArray:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (
                self.central_multiplicity / z
                if self.central_multiplicity
                else np.zeros(z.shape, dtype=np.complex128)
            )
            s = table.positions
            m = table.multiplicities
            width = max(1, _MATRIX_BUDGET // max(len(z), 1))
            for start in range(0, len(s), width):
                ss = s[start : start + width]
                mm = m[start : start + width]
                out = out + (
                    mm[None, :] * 2.0 * z[:, None] / (z[:, None] ** 2 - ss[None, :] ** 2)
                ).sum(axis=1)
        r2, r4, r6 = table.remainders
        return np.asarray(out - 2.0 * (z * r2 + z**3 * r4 + z**5 * r6), dtype=np.complex128)

    def log_g(self, z: npt.ArrayLike) -> ComplexArray:
        """A logarithm of g; equals phi on the lower half-plane."""
        return self._grouped(z, self._log_kernel)

    def dlog_g(self, z: npt.ArrayLike) -> ComplexArray:
        """g'/g, which is phi' on the lower half-plane."""
        return self._grouped(z, self._dlog_kernel)

    def phi_axis(self, r: float) -> float:
        """phi(-ir), real, for any r > 0; the far tail is integrated when r is huge."""
        needed = self.tail.count_below(EXPLICIT_ZERO_FACTOR * r)
        if needed <= AXIS_TAIL_COUNT:
            return float(self.log_g(np.array([-1j * r]))[0].real)
        table = self.table(AXIS_TAIL_COUNT)
        s = table.positions
        explicit = self.log_c + float(np.sum(table.multiplicities * np.log1p((r / s) ** 2)))
        if self.central_multiplicity:
            explicit += self.central_multiplicity * math.log(r)

        def integrand(h: float) -> float:
            pos = float(self.tail.model_positions(np.array([h]))[0])
            return math.log1p((r / pos) ** 2)

        tail, _ = quad(integrand, table.next_height - 0.5, math.inf, limit=200)
        return explicit + float(tail)

    def log_abs_real(self, x: float) -> float:
        return float(self.log_g(np.array([complex(x, 0.0)]))[0].real)

    def dlog_real(self, x: float) -> float:
        return float(self.dlog_g(np.array([complex(x, 0.0)]))[0].real)


@dataclass(frozen=True)
class ToothCrossing:
    """Critical point t of g on the positive axis for tooth n, between two zeros."""

    n: int
    left_zero: float
    t: float
    right_zero: float
    log_value: float


@dataclass(frozen=True)
class WarschawskiReport:
    """Normalization of h(w) = log(i phi^{-1}(e^{alpha w})) against w."""

    lambda_estimate: float
    residual_lambda: float
    oscillation: float
    probe_range: tuple[float, float]
    theta_integral: float
    theta_tail_increment: float
    theta_constant: float


def _present_teeth(spec: CombSpec) -> list[int]:
    return [n for n in range(spec.truncation_N + 1) if spec.teeth[n] > -math.inf]


def _tail_law_for(spec: CombSpec, present: list[int]) -> TailZeroLaw:
    if spec.tail_law == ToothLaw.ABSENT:
        raise ConfigurationError("Combs without a tooth law cannot be mapped", parameter="tail_law")
    alpha, q, c = spec.alpha, 0, 1.0
    if spec.tail_law == ToothLaw.MODIFIED_EXP and spec.modified_exp is not None:
        q, c = spec.modified_exp.q, spec.modified_exp.c
    n_last = present[-1] if present else -1
    big_n = spec.truncation_N
    if not present:
        return TailZeroLaw(alpha, q, c, big_n + 0.5, 1, big_n + 1.5)
    return TailZeroLaw(
        alpha=alpha,
        q=q,
        c=c,
        first_height=(n_last + big_n + 1) / 2.0,
        first_multiplicity=big_n + 1 - n_last,
        next_height=big_n + 1.5,
    )


def _real_logabs_and_slope(
    x: float,
    log_c: float,
    m0: int,
    s: FloatArray,
    m: FloatArray,
    rem: tuple[float, float, float],
) -> tuple[float, float]:
    x2 = x * x
    ratio = x2 / (s * s)
    value = log_c + float(np.sum(m * np.log(np.abs(1.0 - ratio))))
    slope = float(np.sum(m * 2.0 * x / (x2 - s * s)))
    if m0:
        value += m0 * math.log(x)
        slope += m0 / x
    value -= x2 * rem[0] + x2 * x2 * rem[1] / 2.0 + x2**3 * rem[2] / 3.0
    slope -= 2.0 * (x * rem[0] + x**3 * rem[1] + x**5 * rem[2])
    return value, slope


def _critical_point(
    lo: float, hi: float, m0: int, s: FloatArray, m: FloatArray, rem: tuple[float, float, float]
) -> float:
    def slope(x: float) -> float:
        return _real_logabs_and_slope(x, 0.0, m0, s, m, rem)[1]

    a = lo * (1.0 + 1e-13) if lo > 0.0 else hi * 1e-12
    b = hi * (1.0 - 1e-13)
    return float(brentq(slope, a, b, xtol=1e-15 * hi, rtol=1e-15, maxiter=300))


def solve_vinberg_product(spec: CombSpec, tooth_tolerance: float) -> tuple[VinbergProduct, float]:
    """Fit the core zeros of g to the explicit teeth.

    Unknowns are log C and softmax-style gaps, which keep 0 < s_1 < ... < s_K below
    the first tail zero. Residuals are log|g(t_k)| - L_k at the critical points;
    by the envelope theorem their Jacobian needs no derivative of t_k.

    Raises:
        AccuracyNotMet: the largest tooth residual exceeds tooth_tolerance
    """
    present = _present_teeth(spec)
    if not present:
        raise ConfigurationError("all explicit teeth are absent", parameter="teeth")
    m0 = 2 * present[0] if present[0] > 0 else 0
    tail = _tail_law_for(spec, present)
    lower = np.array(present[:-1], dtype=np.float64)
    upper = np.array(present[1:], dtype=np.float64)
    core_m = (upper - lower).astype(np.int64)
    k_core = len(core_m)
    targets = np.array([spec.teeth[n] for n in present])

    s_tail0 = float(tail.model_positions(np.array([tail.first_height]))[0])
    probe = VinbergProduct(
        0.0, m0, np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0), tail
    )
    tail_table = probe.table_for_bound(EXPLICIT_ZERO_FACTOR * s_tail0)
    tail_s = tail_table.positions
    tail_m = tail_table.multiplicities.astype(np.float64)
    rem = tail_table.remainders

    init = tail.model_positions((lower + upper) / 2.0) if k_core else np.zeros(0)
    gaps = np.diff(np.concatenate([[0.0], init, [s_tail0]]))
    v0 = np.log(gaps[:-1]) - math.log(gaps[-1])

    def positions(v: FloatArray) -> FloatArray:
        e = np.exp(np.concatenate([v, [0.0]]))
        return s_tail0 * np.cumsum(e)[:-1] / np.sum(e)

    def criticals(s_core: FloatArray) -> FloatArray:
        s_all = np.concatenate([s_core, tail_s])
        m_all = np.concatenate([core_m.astype(float), tail_m])
        bounds = np.concatenate([[0.0], s_core, [s_tail0]])
        t = np.zeros(k_core + 1)
        for i in range(k_core + 1):
            if i == 0 and m0 == 0:
                continue
            t[i] = _critical_point(bounds[i], bounds[i + 1], m0, s_all, m_all, rem)
        return t

    cache: dict[bytes, FloatArray] = {}

    def state(x: FloatArray) -> tuple[FloatArray, FloatArray]:
        key = x[1:].tobytes()
        s_core = positions(x[1:])
        if key not in cache:
            cache.clear()
            cache[key] = criticals(s_core)
        return s_core, cache[key]

    def residuals(x: FloatArray) -> FloatArray:
        s_core, t = state(x)
        s_all = np.concatenate([s_core, tail_s])
        m_all = np.concatenate([core_m.astype(float), tail_m])
        values = [
            x[0]
            if (i == 0 and m0 == 0)
            else _real_logabs_and_slope(t[i], x[0], m0, s_all, m_all, rem)[0]
            for i in range(k_core + 1)
        ]
        return np.asarray(values) - targets

    def jacobian(x: FloatArray) -> FloatArray:
        s_core, t = state(x)
        jac = np.zeros((k_core + 1, k_core + 1))
        jac[:, 0] = 1.0
        if k_core == 0:
            return jac
        t2 = (t * t)[:, None]
        d_res_ds = core_m[None, :] * 2.0 * t2 / (s_core[None, :] * (s_core[None, :] ** 2 - t2))
        e = np.exp(np.concatenate([x[1:], [0.0]]))
        total = float(np.sum(e))
        lower_tri = np.tril(np.ones((k_core, k_core)))
        ds_dv = (e[None, :k_core] / total) * (s_tail0 * lower_tri - s_core[:, None])
        jac[:, 1:] = d_res_ds @ ds_dv
        return jac

    x0 = np.concatenate([[0.0], v0])
    x0[0] = -residuals(x0)[0]
    result = least_squares(
        residuals, x0, jac=jacobian, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000
    )
    final = residuals(result.x)
    worst = float(np.max(np.abs(final)))
    logger.debug(f"Core solve N={spec.truncation_N}: nfev={result.nfev}, max residual {worst:.2e}")
    if worst > tooth_tolerance:
        raise AccuracyNotMet(
            "Critical values of g miss the tooth lengths", worst, tooth_tolerance, spec.truncation_N
        )
    product = VinbergProduct(
        log_c=float(result.x[0]),
        central_multiplicity=m0,
        core_zeros=positions(result.x[1:]),
        core_multiplicities=core_m,
        core_lower=lower,
        core_upper=upper,
        tail=tail,
    )
    return product, worst


def _probe_lambdas(product: VinbergProduct, alpha: float, ws: FloatArray) -> FloatArray:
    out = []
    for w in ws:
        target = math.exp(alpha * w)

        def excess(u: float, target: float = target) -> float:
            return product.phi_axis(math.exp(u)) - target

        lo, hi = w - 5.0, w + 5.0
        while excess(lo) > 0.0:
            lo -= 5.0
        while excess(hi) < 0.0:
            hi += 5.0
        out.append(brentq(excess, lo, hi, xtol=1e-13, rtol=1e-15) - w)
    return np.asarray(out)


def theta_diagnostics(
    spec: CombSpec, probe_range: tuple[float, float]
) -> tuple[float, float, float]:
    """(integral of theta - pi, its part over the upper half, sup |theta - pi| alpha e^{alpha x}).

    Abscissas whose circle radius e^{alpha x} exceeds THETA_RADIUS_CAP are dropped.
    """
    x_hi = min(probe_range[1], math.log(THETA_RADIUS_CAP) / spec.alpha)
    x_lo = min(probe_range[0], 0.5 * x_hi)
    x = np.linspace(x_lo, x_hi, 201)
    table = spec.tooth_lengths(int(math.exp(spec.alpha * x_hi) / math.pi) + 1)
    excess = np.array(
        [psi_profile(spec, math.exp(spec.alpha * v), table) / spec.alpha - math.pi for v in x]
    )
    half = len(x) // 2
    integral = float(trapezoid(excess, x))
    increment = float(trapezoid(excess[half:], x[half:]))
    k_const = float(np.max(np.abs(excess) * spec.alpha * np.exp(spec.alpha * x)))
    return integral, increment, k_const


def check_warschawski_hypothesis(
    spec: CombSpec, options: MapOptions
) -> tuple[float, float, float]:
    """theta_diagnostics, raising when the upper-half increment exceeds the threshold.

    Raises:
        HypothesisFailed: the theta integral keeps growing over the probe range
    """
    integral, increment, k_const = theta_diagnostics(spec, options.probe_range)
    if abs(increment) > options.divergence_threshold:
        raise HypothesisFailed(
            "Strip width deviation is not integrable on the probe range",
            {"increment": increment, "threshold": options.divergence_threshold},
        )
    return integral, increment, k_const


def warschawski_normalize(
    spec: CombSpec, product: VinbergProduct, options: MapOptions
) -> tuple[VinbergProduct, WarschawskiReport]:
    """Rescale z so that h(w) - w -> 0 and re-measure the shift on the rescaled map.

    Raises:
        HypothesisFailed: the theta integral keeps growing over the probe range
    """
    integral, increment, k_const = check_warschawski_hypothesis(spec, options)
    ws = np.linspace(options.probe_range[0], options.probe_range[1], options.probe_points)
    upper = slice(len(ws) // 2, None)
    raw = _probe_lambdas(product, spec.alpha, ws)
    lam = float(np.mean(raw[upper]))
    normalized = product.rescaled(math.exp(lam))
    second = _probe_lambdas(normalized, spec.alpha, ws)
    report = WarschawskiReport(
        lambda_estimate=lam,
        residual_lambda=float(np.mean(second[upper])),
        oscillation=float(np.max(second) - np.min(second)),
        probe_range=options.probe_range,
        theta_integral=integral,
        theta_tail_increment=increment,
        theta_constant=k_const,
    )
    logger.debug(f"Warschawski shift {lam:.3e}, oscillation {report.oscillation:.3e}")
    return normalized, report


def reference_grid() -> ComplexArray:
    """Points on |z| in REFERENCE_RADII in the lower half-plane, away from the axis."""
    per_circle = REFERENCE_POINTS // len(REFERENCE_RADII)
    args = np.linspace(-math.pi + REFERENCE_ARG_MARGIN, -REFERENCE_ARG_MARGIN, per_circle)
    return np.concatenate([r * np.exp(1j * args) for r in REFERENCE_RADII])


@dataclass(frozen=True, eq=False)
class ConformalMapHandle:
    """Solved conformal map phi from the lower half-plane onto the comb.

    Attributes:
        spec: The comb actually solved (after truncation doubling).
        product: Normalized product representation of g = exp(phi).
        normalization_shift: log of the applied rescaling (the Warschawski shift).
        accuracy: Largest change on the reference grid at the last doubling.
        tooth_residual: Largest |log|g(t_k)| - L_k| over explicit teeth.
        warschawski: Normalization report.
    """

    spec: CombSpec
    product: VinbergProduct
    normalization_shift: float
    accuracy: float
    tooth_residual: float
    warschawski: WarschawskiReport

    def phi(self, z: npt.ArrayLike) -> ComplexArray:
        zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        if np.any(zz.imag >= 0.0):
            raise OutOfDomain(complex(zz[np.argmax(zz.imag >= 0.0)]))
        return self.product.log_g(zz)

    def phi_prime(self, z: npt.ArrayLike) -> ComplexArray:
        zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        if np.any(zz.imag >= 0.0):
            raise OutOfDomain(complex(zz[np.argmax(zz.imag >= 0.0)]))
        return self.product.dlog_g(zz)

    def eval(self, z: complex) -> complex:
        """phi(z) for Im z < 0."""
        return complex(self.phi(np.array([z]))[0])

    def entire(self, z: npt.ArrayLike) -> ComplexArray:
        """g on the whole plane by reflection; the two one-sided values are averaged near R."""
        zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        with np.errstate(over="ignore", invalid="ignore"):
            lower = np.exp(self.product.log_g(np.where(zz.imag <= 0.0, zz, np.conj(zz))))
        values = np.where(zz.imag <= 0.0, lower, np.conj(lower))
        seam = np.abs(zz.imag) <= 1e-9 * (1.0 + np.abs(zz))
        if np.any(seam):
            with np.errstate(over="ignore", invalid="ignore"):
                other = np.conj(np.exp(self.product.log_g(np.conj(zz[seam]))))
            values[seam] = 0.5 * (values[seam] + other)
        return np.asarray(values, dtype=np.complex128)

    def log_abs_entire(self, z: npt.ArrayLike) -> FloatArray:
        return np.asarray(self.product.log_g(z).real, dtype=np.float64)

    def entire_log(self, z: npt.ArrayLike) -> ComplexArray:
        """Some logarithm of g(z), valid on the whole plane."""
        return self.product.log_g(z)

    def entire_derivative(self, z: npt.ArrayLike) -> ComplexArray:
        zz = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        return np.asarray(self.entire(zz) * self.product.dlog_g(zz), dtype=np.complex128)

    def reflection_seam(self, x: npt.ArrayLike) -> float:
        """Largest gap between the two one-sided evaluations at real points."""
        xx = np.atleast_1d(np.asarray(x, dtype=np.complex128))
        with np.errstate(over="ignore", invalid="ignore"):
            below = np.exp(self.product.log_g(xx))
            above = np.conj(np.exp(self.product.log_g(np.conj(xx))))
        return float(np.max(np.abs(below - above)))

    def inverse(self, w: npt.ArrayLike, raise_on_failure: bool = True) -> ComplexArray:
        return inverse_map(self, w, raise_on_failure=raise_on_failure)

    def critical_points(self, n_max: int) -> list[ToothCrossing]:
        return critical_points_of_g(self, n_max)


def _evaluate_change(a: VinbergProduct, b: VinbergProduct) -> float:
    grid = reference_grid()
    return float(np.max(np.abs(a.log_g(grid) - b.log_g(grid))))


def _solve_normalized(
    spec: CombSpec, options: MapOptions
) -> tuple[VinbergProduct, float, WarschawskiReport]:
    raw, residual = solve_vinberg_product(spec, options.tooth_tolerance)
    normalized, report = warschawski_normalize(spec, raw, options)
    return normalized, residual, report


@lru_cache(maxsize=16)
def build_conformal_map(spec: CombSpec, options: MapOptions | None = None) -> ConformalMapHandle:
    """Solve phi for a comb, doubling truncation_N until the reference grid settles.

    Raises:
        AccuracyNotMet: the change stays above options.accuracy_target
        HypothesisFailed: the Warschawski hypothesis fails
    """
    opts = options or MapOptions()
    check_warschawski_hypothesis(spec, opts)
    current = spec
    product, residual, report = _solve_normalized(current, opts)
    change = math.inf
    for doubling in range(opts.max_doublings):
        finer = current.extended(2 * current.truncation_N)
        fine_product, fine_residual, fine_report = _solve_normalized(finer, opts)
        change = _evaluate_change(product, fine_product)
        logger.info(
            f"Comb map N={current.truncation_N} -> {finer.truncation_N}: change {change:.3e}"
        )
        current, product, residual, report = finer, fine_product, fine_residual, fine_report
        if change <= opts.accuracy_target:
            break
        if doubling == opts.max_doublings - 1:
            raise AccuracyNotMet(
                "Truncation doubling did not settle",
                change,
                opts.accuracy_target,
                finer.truncation_N,
            )
    return ConformalMapHandle(
        spec=current,
        product=product,
        normalization_shift=report.lambda_estimate,
        accuracy=change,
        tooth_residual=residual,
        warschawski=report,
    )


def map_halfplane_to_comb(spec: CombSpec, z: complex, options: MapOptions | None = None) -> complex:
    """phi(z) for the comb, Im z < 0.

    Raises:
        OutOfDomain: Im z >= 0
        AccuracyNotMet: the map failed its self-tests
    """
    if z.imag >= 0.0:
        raise OutOfDomain(z)
    return build_conformal_map(spec, options).eval(z)


def vinberg_entire(spec: CombSpec, z: complex, options: MapOptions | None = None) -> complex:
    """g = exp(phi) extended to the plane by g(conj z) = conj g(z)."""
    return complex(build_conformal_map(spec, options).entire(np.array([z]))[0])


def warschawski_shift(
    spec: CombSpec, probe_range: tuple[float, float], options: MapOptions | None = None
) -> WarschawskiReport:
    """Estimated shift lambda and the oscillation of h(w) - w over probe_range.

    Raises:
        HypothesisFailed: the theta integral diverges numerically
    """
    opts = replace(options or MapOptions(), probe_range=probe_range)
    check_warschawski_hypothesis(spec, opts)
    raw, _ = solve_vinberg_product(spec, opts.tooth_tolerance)
    _, report = warschawski_normalize(spec, raw, opts)
    return report


def _zero_layout(product: VinbergProduct, height: float) -> ZeroTable:
    bound = 2.0 * float(product.tail.model_positions(np.array([max(height, 1.0) + 2.0]))[0])
    return product.table_for_bound(bound)


def critical_points_of_g(handle: ConformalMapHandle, n_max: int) -> list[ToothCrossing]:
    """Critical points t_n > 0 (t_0 = 0 when tooth 0 exists) for present teeth n <= n_max."""
    product = handle.product
    table = _zero_layout(product, n_max + 1.0)
    s, upper, lower = table.positions, table.upper_heights, table.lower_heights
    out = []
    for n in range(n_max + 1):
        length = handle.spec.tooth_length(n)
        if length == -math.inf:
            continue
        if n == 0 and product.central_multiplicity == 0:
            out.append(ToothCrossing(0, -float(s[0]), 0.0, float(s[0]), product.log_c))
            continue
        left_idx = np.flatnonzero(np.isclose(upper, n))
        right_idx = np.flatnonzero(np.isclose(lower, n))
        left = float(s[left_idx[0]]) if left_idx.size else 0.0
        right = float(s[right_idx[0]])
        a = left * (1 + 1e-13) if left else right * 1e-12
        t = float(
            brentq(product.dlog_real, a, right * (1 - 1e-13), xtol=1e-15 * right, rtol=1e-15)
        )
        out.append(ToothCrossing(n, left, t, right, product.log_abs_real(t)))
    return out


def _newton_lower(
    product: VinbergProduct, w: ComplexArray, z0: ComplexArray, max_iter: int = 80
) -> tuple[ComplexArray, npt.NDArray[np.bool_]]:
    z = z0.copy()
    with np.errstate(invalid="ignore", over="ignore"):
        f = product.log_g(z) - w if len(z) else np.zeros(0, dtype=np.complex128)
    tol = _NEWTON_TOLERANCE * np.maximum(1.0, np.abs(w))
    for _ in range(max_iter):
        active = ~(np.abs(f) <= tol)
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        za, fa = z[idx], f[idx]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            step = fa / product.dlog_g(za)
        mu = np.ones(len(idx))
        pending = np.isfinite(step)
        moved = False
        for _ in range(40):
            if not np.any(pending):
                break
            p = np.flatnonzero(pending)
            cand = za[p] - mu[p] * step[p]
            fc = np.full(len(p), np.inf + 0j)
            inside = cand.imag < 0.0
            if np.any(inside):
                with np.errstate(invalid="ignore", over="ignore"):
                    fc[inside] = product.log_g(cand[inside]) - w[idx[p[inside]]]
            better = np.abs(fc) < np.abs(fa[p])
            accepted = p[better]
            za[accepted] = cand[better]
            fa[accepted] = fc[better]
            pending[accepted] = False
            moved = moved or bool(accepted.size)
            mu[p[~better]] *= 0.5
        z[idx], f[idx] = za, fa
        if not moved:
            break
    return z, np.abs(f) <= tol


def _sector_guess(alpha: float, w: ComplexArray) -> ComplexArray:
    theta = np.minimum(np.angle(w) / alpha, 0.49 * math.pi)
    return np.abs(w) ** (1.0 / alpha) * np.exp(1j * (theta - math.pi / 2.0))


def _channel_guess(product: VinbergProduct, w: ComplexArray) -> ComplexArray:
    table = _zero_layout(product, float(np.max(w.imag)) / math.pi + 2.0)
    heights = w.imag / math.pi
    idx = np.searchsorted(table.upper_heights, heights, side="left")
    idx = np.clip(idx, 0, len(table.positions) - 1)
    s = table.positions[idx]
    m = table.multiplicities[idx]
    lo = table.lower_heights[idx]
    tau = np.clip((heights - lo) / m, 1e-3, 1 - 1e-3)
    eps = 1e-7 * s
    local = np.array([product.log_abs_real(float(v)) for v in s + eps]) - m * np.log(eps)
    radius = np.exp((w.real - local) / m)
    return s + np.minimum(radius, 0.5 * s) * np.exp(1j * (tau - 1.0) * math.pi)


def inverse_map(
    handle: ConformalMapHandle, w: npt.ArrayLike, raise_on_failure: bool = True
) -> ComplexArray:
    """phi^{-1}(w) in the lower half-plane by damped Newton.

    Points with Im w < 0 use phi(-conj z) = conj phi(z); real targets are solved on
    the negative imaginary axis. Targets on a tooth come back as nan.

    Raises:
        RootPolishFailed: Newton fails from both initial guesses
    """
    ww = np.atleast_1d(np.asarray(w, dtype=np.complex128))
    out = np.full(ww.shape, np.nan + 0j)
    product = handle.product

    flip = ww.imag < 0.0
    work = np.where(flip, np.conj(ww), ww)
    off_axis = work.imag > 0.0
    on_tooth = np.array([not point_in_comb(handle.spec, complex(v)) for v in work])
    solve = off_axis & ~on_tooth

    if np.any(solve):
        targets = work[solve]
        z, ok = _newton_lower(product, targets, _sector_guess(handle.spec.alpha, targets))
        if not np.all(ok):
            retry = np.flatnonzero(~ok)
            z2, ok2 = _newton_lower(product, targets[retry], _channel_guess(product, targets[retry]))
            z[retry[ok2]] = z2[ok2]
            ok[retry[ok2]] = True
        for _ in range(_CONTINUATION_ROUNDS):
            if np.all(ok) or not np.any(ok):
                break
            retry = np.flatnonzero(~ok)
            done = np.flatnonzero(ok)
            tree = cKDTree(np.column_stack([targets[done].real, targets[done].imag]))
            _, pos = tree.query(np.column_stack([targets[retry].real, targets[retry].imag]))
            nearest = done[pos]
            guess = z[nearest] + (targets[retry] - targets[nearest]) / product.dlog_g(z[nearest])
            guess = np.where(guess.imag < 0.0, guess, guess.real - 1e-3j * np.abs(guess))
            z3, ok3 = _newton_lower(product, targets[retry], guess)
            if not np.any(ok3):
                break
            z[retry[ok3]] = z3[ok3]
            ok[retry[ok3]] = True
        z[~ok] = np.nan
        out[solve] = z
        if raise_on_failure and not np.all(ok):
            raise RootPolishFailed(
                "Inverse map did not converge", int(np.sum(~ok)), complex(targets[~ok][0])
            )

    for i in np.flatnonzero(~off_axis & ~on_tooth):
        target = float(work[i].real)

        def excess(u: float, target: float = target) -> float:
            return product.phi_axis(math.exp(u)) - target

        lo, hi = -30.0, max(1.0, math.log(max(target, 1.0)) / handle.spec.alpha + 2.0)
        while excess(hi) < 0.0:
            hi += 5.0
        while excess(lo) > 0.0 and lo > -700.0:
            lo -= 30.0
        out[i] = -1j * math.exp(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15))

    out[flip] = -np.conj(out[flip])
    return out


def winding_number(handle: ConformalMapHandle, corners: tuple[complex, complex], nodes: int = 400) -> int:
    """Winding of phi(boundary) about phi(center) for the rectangle with given opposite corners."""
    a, b = corners
    x0, x1 = sorted((a.real, b.real))
    y0, y1 = sorted((a.imag, b.imag))
    if y1 >= 0.0:
        raise OutOfDomain(complex(x1, y1))
    t = np.linspace(0.0, 1.0, nodes, endpoint=False)
    path = np.concatenate(
        [
            x0 + (x1 - x0) * t + 1j * y0,
            x1 + 1j * (y0 + (y1 - y0) * t),
            x1 - (x1 - x0) * t + 1j * y1,
            x0 + 1j * (y1 - (y1 - y0) * t),
        ]
    )
    center = handle.eval(complex((x0 + x1) / 2.0, (y0 + y1) / 2.0))
    values = handle.phi(path) - center
    ratios = values / np.roll(values, 1)
    return round(float(np.sum(np.angle(ratios))) / (2.0 * math.pi))


def cauchy_riemann_residual(handle: ConformalMapHandle, points: npt.ArrayLike, h: float = 1e-5) -> float:
    """max |phi_x + i phi_y| by central differences, relative to |phi'|."""
    z = np.atleast_1d(np.asarray(points, dtype=np.complex128))
    step = h * np.maximum(1.0, np.abs(z))
    phi_x = (handle.phi(z + step) - handle.phi(z - step)) / (2.0 * step)
    phi_y = (handle.phi(z + 1j * step) - handle.phi(z - 1j * step)) / (2.0 * step)
    scale = np.maximum(np.abs(handle.phi_prime(z)), 1e-300)
    return float(np.max(np.abs(phi_x + 1j * phi_y) / scale))


def max_modulus_log(handle: ConformalMapHandle, r: float, nodes: int = 512) -> float:
    """log M(r, g) from samples on the circle |z| = r."""
    theta = 2.0 * math.pi * (np.arange(nodes) + 0.5) / nodes
    return float(np.max(handle.log_abs_entire(r * np.exp(1j * theta))))
