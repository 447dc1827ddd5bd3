"""Per-link flow-density laws, delays, tolls and the perceived-cost integral.

Two families are supported. ``exponential`` is f = C(1 - exp(-alpha x)) and
has closed forms for everything. ``rational`` is f = C alpha x / (1 + alpha x);
it deliberately goes through the generic numeric routes (root-finding for the
inverse, finite differences for the delay derivative) so those stay exercised.

Delays at or above capacity are reported as :data:`SENTINEL`, the largest
finite double, never as ``inf``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import CapacityExceeded, NegativeDensity, ValidationError

SENTINEL = sys.float_info.max
FAMILIES = ("exponential", "rational")

# below this u = f/C the exponential T' closed form loses digits; use the series
_SERIES_CUTOFF = 1e-3
_SERIES_TERMS = 10


@dataclass(frozen=True)
class LinkParams:
    capacity: float
    alpha: float = 1.0
    family: str = "exponential"

    def __post_init__(self):
        if not (math.isfinite(self.capacity) and self.capacity > 0):
            raise ValidationError(f"capacity must be positive and finite, got {self.capacity}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"alpha must be positive and finite, got {self.alpha}")
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown flow-density family {self.family!r}; expected one of {FAMILIES}")

    # raw law, no argument checking
    def mu(self, x: float) -> float:
        if self.family == "exponential":
            return -self.capacity * math.expm1(-self.alpha * x)
        ax = self.alpha * x
        return self.capacity * ax / (1.0 + ax)

    def mu_prime(self, x: float) -> float:
        if self.family == "exponential":
            return self.alpha * self.capacity * math.exp(-self.alpha * x)
        return self.capacity * self.alpha / (1.0 + self.alpha * x) ** 2

    def mu_inverse(self, f: float) -> float:
        if f == 0.0:
            return 0.0
        if self.family == "exponential":
            return -math.log1p(-f / self.capacity) / self.alpha
        return _numeric_inverse(self.mu, f, 1.0 / self.alpha)


def _numeric_inverse(mu: Callable[[float], float], f: float, scale: float) -> float:
    hi = scale
    while mu(hi) <= f:
        hi *= 2.0
        if hi > 1e300:
            raise CapacityExceeded(f"flow {f} not attained by the flow-density law")
    return brentq(lambda x: mu(x) - f, 0.0, hi, xtol=1e-300, rtol=4 * sys.float_info.epsilon, maxiter=500)


def check_flow_density_law(params: LinkParams, samples: int = 64) -> bool:
    """Sampled check: mu(0) = 0, strictly increasing, strictly concave, finite mu'(0)."""
    if params.mu(0.0) != 0.0 or not math.isfinite(params.mu_prime(0.0)):
        return False
    xs = np.linspace(0.0, 10.0 / params.alpha, samples)
    ys = np.array([params.mu(x) for x in xs])
    slopes = np.diff(ys) / np.diff(xs)
    return bool(np.all(slopes > 0) and np.all(np.diff(slopes) < 0))


def flow_of_density(params: LinkParams, x: float) -> float:
    if x < 0:
        raise NegativeDensity(f"density must be nonnegative, got {x}")
    return params.mu(x)


def density_of_flow(params: LinkParams, f: float) -> float:
    if f < 0:
        raise ValidationError(f"flow must be nonnegative, got {f}")
    if f >= params.capacity:
        raise CapacityExceeded(f"flow {f} reaches capacity {params.capacity}")
    return params.mu_inverse(f)


def delay(params: LinkParams, f: float) -> float:
    """Travel delay: mu^-1(f)/f inside capacity, 1/mu'(0) at zero flow."""
    if f >= params.capacity:
        return SENTINEL
    if f <= 0.0:
        return 1.0 / params.mu_prime(0.0)
    return params.mu_inverse(f) / f


def _exp_delay_derivative(C: float, alpha: float, f: float) -> float:
    u = f / C
    if u < _SERIES_CUTOFF:
        s = sum(k * u ** (k - 1) / (k + 1) for k in range(1, _SERIES_TERMS))
        return s / (alpha * C * C)
    return (u / (1.0 - u) + math.log1p(-u)) / (alpha * f * f)


def delay_derivative(params: LinkParams, f: float) -> float:
    if f < 0:
        raise ValidationError(f"flow must be nonnegative, got {f}")
    if f >= params.capacity:
        raise CapacityExceeded(f"flow {f} reaches capacity {params.capacity}")
    if params.family == "exponential":
        return _exp_delay_derivative(params.capacity, params.alpha, f)
    h = 1e-6 * max(1.0, f)
    if f + 2 * h >= params.capacity:
        return (3 * delay(params, f) - 4 * delay(params, f - h) + delay(params, f - 2 * h)) / (2 * h)
    if f < h:
        return (-3 * delay(params, f) + 4 * delay(params, f + h) - delay(params, f + 2 * h)) / (2 * h)
    return (delay(params, f + h) - delay(params, f - h)) / (2 * h)


def marginal_latency(params: LinkParams, f: float) -> float:
    """d/df of f*T(f) = mu^-1(f), computed as 1/mu'(mu^-1(f))."""
    if f >= params.capacity:
        raise CapacityExceeded(f"flow {f} reaches capacity {params.capacity}")
    return 1.0 / params.mu_prime(params.mu_inverse(f))


@dataclass(frozen=True)
class TollPolicy:
    """Link toll rule.

    ``none`` charges nothing, ``marginal`` charges f*T'(f), ``fixed`` charges
    a frozen per-link constant, ``custom`` interpolates a per-link
    nondecreasing piecewise-linear table ``(flows, tolls)``.
    """

    kind: str = "none"
    constants: tuple | None = None
    tables: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("none", "marginal", "fixed", "custom"):
            raise ValidationError(f"unknown toll policy {self.kind!r}")
        if self.kind == "fixed":
            if self.constants is None:
                raise ValidationError("fixed policy requires per-link constants")
            object.__setattr__(self, "constants", tuple(float(c) for c in self.constants))
            if any(not (math.isfinite(c) and c >= 0) for c in self.constants):
                raise ValidationError(f"fixed tolls must be finite and nonnegative: {self.constants}")
        if self.kind == "custom":
            if self.tables is None:
                raise ValidationError("custom policy requires per-link toll tables")
            tables = []
            for flows, tolls in self.tables:
                flows = tuple(float(v) for v in flows)
                tolls = tuple(float(v) for v in tolls)
                if len(flows) != len(tolls) or len(flows) < 1:
                    raise ValidationError("toll table needs matching, nonempty flows and tolls")
                if any(b <= a for a, b in zip(flows, flows[1:])):
                    raise ValidationError(f"toll table flows must be strictly increasing: {flows}")
                if any(b < a for a, b in zip(tolls, tolls[1:])) or min(tolls) < 0:
                    raise ValidationError(f"toll table values must be nonnegative and nondecreasing: {tolls}")
                tables.append((flows, tolls))
            object.__setattr__(self, "tables", tuple(tables))

    @classmethod
    def none(cls) -> "TollPolicy":
        return cls("none")

    @classmethod
    def marginal(cls) -> "TollPolicy":
        return cls("marginal")

    @classmethod
    def fixed(cls, constants: Sequence[float]) -> "TollPolicy":
        return cls("fixed", constants=tuple(constants))

    @classmethod
    def custom(cls, tables) -> "TollPolicy":
        return cls("custom", tables=tuple(tables))

    def check_size(self, n_links: int) -> None:
        per_link = self.constants if self.kind == "fixed" else self.tables
        if per_link is not None and len(per_link) != n_links:
            raise ValidationError(f"{self.kind} policy has {len(per_link)} entries for {n_links} links")

    def values(self, links: "LinkArray", f: np.ndarray) -> np.ndarray:
        """Vector of link tolls at flows f (entries at or above capacity are 0)."""
        if self.kind == "none":
            return np.zeros_like(f)
        if self.kind == "marginal":
            return f * links.delay_derivative(f, clip=True)
        if self.kind == "fixed":
            return np.asarray(self.constants, dtype=float)
        return np.array([np.interp(fe, fl, tl) for fe, (fl, tl) in zip(f, self.tables)])


def toll(policy: TollPolicy, params: LinkParams, f: float, link: int | None = None) -> float:
    if f < 0:
        raise ValidationError(f"flow must be nonnegative, got {f}")
    if f >= params.capacity:
        raise CapacityExceeded(f"flow {f} reaches capacity {params.capacity}")
    if policy.kind == "none":
        return 0.0
    if policy.kind == "marginal":
        return f * delay_derivative(params, f)
    if link is None:
        raise ValidationError(f"{policy.kind} policy needs the link index")
    if policy.kind == "fixed":
        return policy.constants[link]
    flows, tolls = policy.tables[link]
    return float(np.interp(f, flows, tolls))


def sampled_toll_monotone(
    policy: TollPolicy, params: LinkParams, link: int | None = None, samples: int = 200, upto: float = 0.99
) -> bool:
    fs = np.linspace(0.0, upto * params.capacity, samples)
    ws = np.array([toll(policy, params, f, link) for f in fs])
    return bool(np.all(ws >= 0) and np.all(np.diff(ws) >= -1e-12))


def adaptive_simpson(fn: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 60, min_depth: int = 3) -> float:
    """Adaptive Simpson quadrature with Richardson correction, absolute tolerance ``tol``."""
    if a == b:
        return 0.0
    fa, fb, fm = fn(a), fn(b), fn(0.5 * (a + b))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    pieces = []
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        fl, fr = fn(0.5 * (lo + mid)), fn(0.5 * (mid + hi))
        left = (mid - lo) / 6.0 * (flo + 4.0 * fl + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * fr + fhi)
        diff = left + right - est
        if depth >= max_depth or (depth >= min_depth and abs(diff) <= 15.0 * eps):
            pieces.append(left + right + diff / 15.0)
        else:
            stack.append((mid, hi, fmid, fr, fhi, right, 0.5 * eps, depth + 1))
            stack.append((lo, mid, flo, fl, fmid, left, 0.5 * eps, depth + 1))
    return math.fsum(pieces)


def perceived_cost_integral(params: LinkParams, policy: TollPolicy, f: float,
                            link: int | None = None, tol: float = 1e-10) -> float:
    """Integral of T(s) + w(s) over [0, f] for the active toll policy."""
    if f < 0:
        raise ValidationError(f"flow must be nonnegative, got {f}")
    if f >= params.capacity:
        raise CapacityExceeded(f"flow {f} reaches capacity {params.capacity}")
    return adaptive_simpson(lambda s: delay(params, s) + toll(policy, params, s, link), 0.0, f, tol)


class LinkArray:
    """Vectorized view over a sequence of :class:`LinkParams`.

    Closed forms are used when every link is exponential; otherwise each
    link falls back to the scalar routines.
    """

    def __init__(self, params: Sequence[LinkParams]):
        self.params = tuple(params)
        self.capacity = np.array([p.capacity for p in self.params])
        self.alpha = np.array([p.alpha for p in self.params])
        self.vectorized = all(p.family == "exponential" for p in self.params)

    def __len__(self) -> int:
        return len(self.params)

    def flow(self, x: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return -self.capacity * np.expm1(-self.alpha * x)
        return np.array([p.mu(v) for p, v in zip(self.params, x)])

    def density(self, f: np.ndarray) -> np.ndarray:
        return np.array([density_of_flow(p, v) for p, v in zip(self.params, f)])

    def inverse_sum_terms(self, f: np.ndarray) -> np.ndarray:
        """mu^-1(f) per link, i.e. f*T(f); +inf at or above capacity."""
        if self.vectorized:
            with np.errstate(divide="ignore", invalid="ignore"):
                u = f / self.capacity
                out = -np.log1p(-u) / self.alpha
            return np.where(u < 1.0, out, np.inf)
        return np.array([p.mu_inverse(v) if v < p.capacity else np.inf for p, v in zip(self.params, f)])

    def delay(self, f: np.ndarray) -> np.ndarray:
        if not self.vectorized:
            return np.array([delay(p, v) for p, v in zip(self.params, f)])
        C, a = self.capacity, self.alpha
        u = f / C
        if np.all(f > 0.0) and np.all(u < 1.0):
            return -np.log1p(-u) / (a * f)
        pos = f > 0.0
        us = np.where(pos & (u < 1.0), u, 0.5)
        out = np.where(pos, -np.log1p(-us) / (a * np.where(pos, f, 1.0)), 1.0 / (a * C))
        return np.where(u >= 1.0, SENTINEL, out)

    def delay_derivative(self, f: np.ndarray, clip: bool = False) -> np.ndarray:
        """T'(f) per link. With ``clip`` links at/over capacity give 0 instead of raising."""
        over = f >= self.capacity
        any_over = over.any()
        if any_over and not clip:
            raise CapacityExceeded(f"flows {f} reach capacity {self.capacity}")
        if not self.vectorized:
            return np.array([0.0 if o else delay_derivative(p, v) for p, v, o in zip(self.params, f, over)])
        C, a = self.capacity, self.alpha
        u = np.where(over, 0.5, f / C) if any_over else f / C
        small = u < _SERIES_CUTOFF
        if small.any():
            us = np.where(small, u, 0.0)
            # Horner form of sum_{k>=1} k u^(k-1) / (k+1)
            series = np.zeros_like(us)
            for k in range(_SERIES_TERMS - 1, 0, -1):
                series = series * us + k / (k + 1)
            fs = np.where(small, 1.0, f)
            us_closed = np.where(small, 0.5, u)
            closed = (us_closed / (1.0 - us_closed) + np.log1p(-us_closed)) / (a * fs * fs)
            out = np.where(small, series / (a * C * C), closed)
        else:
            out = (u / (1.0 - u) + np.log1p(-u)) / (a * f * f)
        return np.where(over, 0.0, out) if any_over else out

    def marginal_latency(self, f: np.ndarray) -> np.ndarray:
        """d/df mu^-1(f) = 1/mu'(mu^-1(f))."""
        if self.vectorized:
            return 1.0 / (self.alpha * (self.capacity - f))
        return np.array([marginal_latency(p, v) for p, v in zip(self.params, f)])
