"""Positive stable frailty survival for exponential lag times.

Lag times ``Y_1..Y_M`` of one subject share a frailty ``Z`` whose Laplace
transform is ``exp(-s**alpha)``.  Integrating ``Z`` out gives the joint
survival ``exp(-(sum_j rate_j * y_j) ** alpha)``.  When lags are truncated at
a maximum lag the joint law is restricted to the box ``[0, L_1] x ... x
[0, L_M]`` and renormalised by its mass.

The scalar API (``joint_survival``, ``neg_partial_density`` ...) follows the
formulas directly.  The ``*_array`` kernels are the broadcasting versions used
by the likelihood engine.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

ALPHA_MIN = 1e-6

QUADRATURE_METHODS = ("adaptive-simpson", "fixed-gauss-legendre")


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance.

    ``estimate`` holds the best available value and ``error`` the achieved
    error estimate.
    """

    def __init__(self, message, estimate, error):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class LagDistribution:
    """Exponential lag with per-year ``rate``, optionally truncated."""

    rate: float
    truncation: float | None = None

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"lag rate must be positive and finite, got {self.rate!r}")
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError(f"truncation must be positive, got {self.truncation!r}")

    @property
    def upper(self) -> float:
        return math.inf if self.truncation is None else float(self.truncation)

    def cumulative_hazard(self, t):
        return self.rate * t


@dataclass(frozen=True)
class FrailtySurvival:
    """Joint survival of ``len(rates)`` lags tied by a positive stable frailty."""

    rates: tuple[LagDistribution, ...]
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(self.rates))
        if not self.rates:
            raise ValueError("at least one lag distribution is required")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha!r}")

    @classmethod
    def exponential(cls, rates: Sequence[float], alpha: float = 1.0,
                    truncation: float | None = None) -> "FrailtySurvival":
        return cls(tuple(LagDistribution(float(r), truncation) for r in rates), alpha)

    @property
    def dim(self) -> int:
        return len(self.rates)

    @property
    def rate_values(self) -> np.ndarray:
        return np.array([d.rate for d in self.rates])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.rates])

    @property
    def truncated(self) -> bool:
        return any(d.truncation is not None for d in self.rates)


@dataclass(frozen=True)
class QuadratureSpec:
    method: str = "adaptive-simpson"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_depth: int = 40
    node_count: int = 32

    def __post_init__(self):
        if self.method not in QUADRATURE_METHODS:
            raise ValueError(f"unknown quadrature method {self.method!r}")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.node_count < 8:
            raise ValueError("node_count must be at least 8")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


def _check_alpha(alpha):
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")


def stable_laplace(s, alpha):
    """Laplace transform ``E exp(-s Z) = exp(-s**alpha)`` of the positive stable law."""
    _check_alpha(alpha)
    if s < 0:
        raise ValueError(f"s must be non-negative, got {s!r}")
    return math.exp(-(s ** alpha))


def _coords(fs: FrailtySurvival, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (fs.dim,):
        raise ValueError(f"expected {fs.dim} coordinates, got shape {y.shape}")
    if np.any(y < 0):
        raise ValueError("lag coordinates must be non-negative")
    return y


def _total_hazard(fs: FrailtySurvival, y: np.ndarray) -> float:
    return math.fsum(d.cumulative_hazard(v) for d, v in zip(fs.rates, y))


def joint_survival(fs: FrailtySurvival, y) -> float:
    """``P(Y_1 > y_1, ..., Y_M > y_M | M)`` without truncation."""
    y = _coords(fs, y)
    return stable_laplace(_total_hazard(fs, y), fs.alpha)


def neg_partial_density(fs: FrailtySurvival, y, observed_index: int) -> float:
    """``-dS/dy_k``: lag ``k`` observed at ``y_k``, the others survive past ``y_j``.

    ``observed_index`` is zero based.
    """
    y = _coords(fs, y)
    if not 0 <= observed_index < fs.dim:
        raise IndexError(f"observed_index {observed_index} out of range")
    total = _total_hazard(fs, y)
    a = fs.alpha
    rate = fs.rates[observed_index].rate
    if total == 0.0:
        if a < 1.0:
            raise ValueError("density is singular at the origin when alpha < 1")
        return rate
    return math.exp(math.log(a) + math.log(rate) + (a - 1.0) * math.log(total) - total ** a)


def full_density(fs: FrailtySurvival, y) -> float:
    """Joint density of all ``M <= 2`` lags, ``(-1)**M d^M S / dy_1 ... dy_M``.

    For two lags with ``T = r1*y1 + r2*y2`` it equals
    ``r1*r2*alpha*T**(alpha-2) * (alpha*T**alpha + 1 - alpha) * exp(-T**alpha)``.
    """
    if fs.dim == 1:
        return neg_partial_density(fs, y, 0)
    if fs.dim > 2:
        raise NotImplementedError("closed-form densities are provided for at most two lags")
    y = _coords(fs, y)
    total = _total_hazard(fs, y)
    a = fs.alpha
    r1, r2 = fs.rates[0].rate, fs.rates[1].rate
    if total == 0.0:
        if a < 1.0:
            raise ValueError("density is singular at the origin when alpha < 1")
        return r1 * r2
    ta = total ** a
    return r1 * r2 * a * math.exp((a - 2.0) * math.log(total) - ta) * (a * ta + 1.0 - a)


def lag_cdf(dist: LagDistribution, t: float) -> float:
    """CDF of one exponential lag, renormalised on ``[0, truncation]`` if truncated."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if dist.truncation is None:
        return -math.expm1(-dist.rate * t)
    t = min(t, dist.truncation)
    return math.expm1(-dist.rate * t) / math.expm1(-dist.rate * dist.truncation)


def box_probability(fs: FrailtySurvival, lower, upper) -> float:
    """``P(lower < Y <= upper)`` for the (truncation-renormalised) joint law.

    Bounds are clipped to the lag support; ``upper`` may contain ``inf``.
    Inclusion-exclusion over the ``2**M`` corners of the box.
    """
    lower = np.maximum(np.asarray(lower, dtype=float), 0.0)
    upper = np.asarray(upper, dtype=float)
    support = fs.upper
    lo = np.minimum(lower, support)
    hi = np.minimum(upper, support)
    if np.any(hi <= lo):
        return 0.0
    raw = _raw_box(fs, lo, hi)
    if not fs.truncated:
        return raw
    return raw / _raw_box(fs, np.zeros(fs.dim), support)


def _raw_box(fs, lo, hi) -> float:
    terms = []
    for corner in itertools.product((0, 1), repeat=fs.dim):
        point = np.where(np.array(corner) == 1, hi, lo)
        sign = (-1) ** sum(corner)
        if np.any(np.isinf(point)):
            continue
        terms.append(sign * stable_laplace(_total_hazard(fs, point), fs.alpha))
    return max(math.fsum(terms), 0.0)


def truncated_survival(fs: FrailtySurvival, y) -> float:
    """``P(Y > y)`` under truncation renormalisation (equals ``joint_survival`` if untruncated)."""
    return box_probability(fs, y, fs.upper)


def median_lag(fs: FrailtySurvival, index: int = 0) -> float:
    """Median of the marginal law of lag ``index`` under the configured model.

    Untruncated lags have the closed form ``log(2)**(1/alpha) / rate``; truncated
    lags are solved by root finding on the renormalised marginal survival.
    """
    rate = fs.rates[index].rate
    if not fs.truncated:
        return math.log(2.0) ** (1.0 / fs.alpha) / rate

    def excess(t):
        lower = np.zeros(fs.dim)
        lower[index] = t
        return box_probability(fs, lower, fs.upper) - 0.5

    return brentq(excess, 0.0, float(fs.upper[index]), xtol=1e-12, rtol=1e-10)


# ---------------------------------------------------------------------------
# quadrature


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t)


def integrate_1d(f: Callable[[float], float], a: float, b: float,
                 spec: QuadratureSpec | None = None) -> float:
    """Integrate ``f`` over ``[a, b]``.

    Adaptive Simpson runs on the substitution ``x = a + (b - a)(3t^2 - 2t^3)``
    whose Jacobian vanishes at both ends, so ``f`` is never evaluated at an
    endpoint and integrable endpoint singularities are tamed.
    """
    spec = spec or QuadratureSpec()
    if b < a:
        raise ValueError("integration requires a <= b")
    if b == a:
        return 0.0
    width = b - a
    if spec.method == "fixed-gauss-legendre":
        u, w = _gl_unit(spec.node_count)
        x = a + width * u
        return float(width * np.dot(w, [f(v) for v in x]))

    def h(t):
        phi, dphi = _smoothstep(t)
        if dphi == 0.0:
            return 0.0
        return f(a + width * phi) * width * dphi

    return _adaptive_simpson(h, 0.0, 1.0, spec)


def _adaptive_simpson(h, a, b, spec):
    fa, fm, fb = h(a), h(0.5 * (a + b)), h(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tol = max(spec.abs_tol, spec.rel_tol * abs(whole))
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = []
    err_total = 0.0
    failed = False
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = h(lm), h(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - est
        if depth >= 3 and abs(delta) <= 15.0 * eps:
            total.append(left + right + delta / 15.0)
            err_total += abs(delta) / 15.0
            continue
        if depth >= spec.max_depth:
            total.append(left + right + delta / 15.0)
            err_total += abs(delta) / 15.0
            failed = True
            continue
        stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
        stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
    result = math.fsum(total)
    if failed:
        target = max(spec.abs_tol, spec.rel_tol * abs(result))
        if err_total > target:
            raise QuadratureError(
                f"max_depth {spec.max_depth} exceeded: estimate {result!r}, "
                f"error {err_total:.3g} > {target:.3g}", result, err_total)
    return result


@functools.lru_cache(maxsize=None)
def _gl_unit(n: int):
    """Gauss-Legendre nodes and weights on (0, 1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    w = 0.5 * w
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


def gauss_legendre_rows(f, lo, hi, n_nodes: int = 32):
    """Row-wise integrals ``int_{lo_i}^{hi_i} f`` with a squared-node map.

    ``f`` receives an ``(n, n_nodes)`` array of abscissae.  The map
    ``x = lo + (hi - lo) u**2`` clusters nodes near ``lo``, where the
    likelihood integrands can carry an ``x**(alpha - 1)`` singularity.
    Rows with ``hi <= lo`` contribute zero and are evaluated at a dummy point.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = np.maximum(hi - lo, 0.0)
    u, w = _gl_unit(n_nodes)
    live = width > 0
    safe_lo = np.where(live, lo, 1.0)
    safe_w = np.where(live, width, 1.0)
    x = safe_lo[:, None] + safe_w[:, None] * (u * u)[None, :]
    vals = f(x)
    jac = (2.0 * u * w)[None, :] * safe_w[:, None]
    out = np.sum(vals * jac, axis=1)
    return np.where(live, out, 0.0)


# ---------------------------------------------------------------------------
# broadcasting kernels for one- and two-lag laws


def clip_alpha(alpha):
    return min(max(alpha, ALPHA_MIN), 1.0)


def survival2_array(r1, y1, r2, y2, alpha):
    """``exp(-(r1*y1 + r2*y2)**alpha)`` with infinite coordinates mapped to 0."""
    total = np.asarray(r1 * y1 + r2 * y2, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(-np.power(total, alpha))
    return np.where(np.isinf(total), 0.0, out)


def neg_partial2_array(rk, total, alpha):
    """``alpha * r_k * T**(alpha-1) * exp(-T**alpha)``; zero for infinite ``T``."""
    total = np.asarray(total, dtype=float)
    finite = np.isfinite(total)
    t = np.where(finite, total, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        val = alpha * rk * np.exp((alpha - 1.0) * np.log(t) - np.power(t, alpha))
    return np.where(finite, val, 0.0)


def density2_array(r1, r2, total, alpha):
    """Joint two-lag density as a function of ``T = r1*y1 + r2*y2``."""
    total = np.asarray(total, dtype=float)
    finite = np.isfinite(total)
    t = np.where(finite, total, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        ta = np.power(t, alpha)
        val = r1 * r2 * alpha * np.exp((alpha - 2.0) * np.log(t) - ta) * (alpha * ta + 1.0 - alpha)
    return np.where(finite, val, 0.0)


def box_mass2_array(r1, r2, alpha, upper):
    """Mass of ``[0, upper]^2`` under the untruncated two-lag law (1 if ``upper`` is inf)."""
    if math.isinf(upper):
        return np.ones_like(np.asarray(r1 * r2, dtype=float))
    a1 = np.asarray(r1 * upper, dtype=float)
    a2 = np.asarray(r2 * upper, dtype=float)
    # [1 - S(L,0)] - [S(0,L) - S(L,L)] with the larger coordinate peeled, so
    # neither bracket is a difference of two numbers close to 1
    lo, hi = np.minimum(a1, a2), np.maximum(a1, a2)
    return -np.expm1(-lo ** alpha) + np.exp(-hi ** alpha) * np.expm1(-_power_gap(hi, lo, alpha))


def _power_gap(base, step, alpha):
    """``(base + step)**alpha - base**alpha`` without cancellation."""
    base = np.asarray(base, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        gap = base ** alpha * np.expm1(alpha * np.log1p(step / base))
        # subnormal base: step/base overflows, but then nothing cancels
        direct = (base + step) ** alpha - base ** alpha
    return np.where((base > 0) & np.isfinite(gap), gap, direct)


def survival_drop(rate, a, b, alpha, offset=0.0):
    """``S(a, y2) - S(b, y2)`` for ``a <= b``, with ``offset = r2 * y2``; accurate near 1."""
    A = np.asarray(rate * a + offset, dtype=float)
    step = np.asarray(rate * (b - a), dtype=float)
    return -np.exp(-A ** alpha) * np.expm1(-_power_gap(A, step, alpha))


def expo_mass(rate, upper):
    """``P(Y <= upper)`` for an untruncated exponential lag."""
    if math.isinf(upper):
        return np.ones_like(np.asarray(rate, dtype=float))
    return -np.expm1(-rate * upper)
