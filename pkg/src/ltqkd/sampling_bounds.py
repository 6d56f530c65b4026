"""Random-sampling bounds on an unobserved sample partition.

A population of tagged emissions splits into an observed part ``K2`` (kept
by the sampler with probability ``1 - p`` per element) and an unobserved
part ``K1``.  ``g_lower`` and ``g_upper`` bound ``K1`` from the observed
``K2`` via the inverse multiplicative Chernoff bound, whose inversion is
an explicit Lambert-W expression on the two real branches.

All functions accept scalars or numpy arrays (broadcast together) and are
pure, so they are safe to call from concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = ["lambert_w", "g_lower", "g_upper", "SamplingBound"]

_INV_E = math.exp(-1.0)

_FLOAT_EPS = float(np.finfo(float).eps)

# Below this distance from the branch point the series expansion is already
# exact to double precision and Halley's denominator degenerates.
_SERIES_CUTOFF = 1e-8


def _one_plus_e_x(x):
    """1 + e*x with the product error compensated (Dekker splitting).

    Near the branch point x = -1/e the naive expression cancels to noise;
    the compensated form keeps the distance accurate to its own ulp.
    """
    safe = np.abs(x) < 1e300
    xs = np.where(safe, x, 0.0)
    split = 134217729.0  # 2**27 + 1
    e_hi = split * math.e - (split * math.e - math.e)
    e_lo = math.e - e_hi
    x_big = split * xs
    x_hi = x_big - (x_big - xs)
    x_lo = xs - x_hi
    prod = math.e * xs
    err = ((e_hi * x_hi - prod) + e_hi * x_lo + e_lo * x_hi) + e_lo * x_lo
    # residual of rounding e itself to a double
    e_tail = 1.4456468917292502e-16
    d = (1.0 + prod) + (err + e_tail * xs)
    return np.where(safe, d, 1.0 + math.e * x)


def _branch_series(p):
    """Expansion of W about the branch point, p = +/- sqrt(2(1 + e*x))."""
    return -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (
        -43.0 / 540.0 + p * (769.0 / 17280.0 + p * (-221.0 / 8505.0))))))


def _tail_series(p):
    """(W + 1) about the branch point; avoids the -1 cancellation."""
    return p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (
        -43.0 / 540.0 + p * (769.0 / 17280.0 + p * (-221.0 / 8505.0))))))


def _halley(w, x, iterations=40):
    for _ in range(iterations):
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        den = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        den = np.where(den == 0.0, 1.0, den)
        step = f / den
        w = w - step
        if np.all(np.abs(step) <= 4.0 * _FLOAT_EPS * np.maximum(np.abs(w), 1e-6)):
            break
    return w


def _log_newton(w, ln_x, iterations=60):
    # solves w + ln(w) = ln(x), stable for arbitrarily large x
    for _ in range(iterations):
        step = (w + np.log(w) - ln_x) / (1.0 + 1.0 / w)
        w = w - step
        if np.all(np.abs(step) <= 4.0 * _FLOAT_EPS * np.abs(w)):
            break
    return w


def _w0(x, d):
    """Principal branch on x >= -1/e; d = 1 + e*x supplied by the caller."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    # the series is only kept for x <= -0.2; clamp to dodge overflow elsewhere
    p = np.sqrt(np.minimum(np.maximum(2.0 * d, 0.0), 4.0))
    w = _branch_series(p)
    mid = (x > -0.2) & (x <= 3.0)
    if np.any(mid):
        xm = np.where(mid, x, 0.0)
        w = np.where(mid, _halley(np.log1p(np.maximum(xm, -0.2)), xm), w)
    big = x > 3.0
    if np.any(big):
        ln_x = np.log(np.where(big, x, 4.0))
        seed = np.maximum(ln_x - np.log(ln_x), 1.0)
        w = np.where(big, _log_newton(seed, ln_x), w)
    inner = (d >= _SERIES_CUTOFF) & ~mid & ~big
    if np.any(inner):
        w = np.where(inner, _halley(np.where(inner, w, -0.5), np.where(inner, x, -0.25)), w)
    return w


def _wm1(x, d):
    """Lower branch on -1/e <= x < 0; d = 1 + e*x supplied by the caller."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    p = -np.sqrt(np.maximum(2.0 * d, 0.0))
    w = _branch_series(p)
    mid = x > -0.25
    if np.any(mid):
        xm = np.where(mid, x, -0.1)
        lx = np.log(-xm)
        seed = lx - np.log(-lx)
        w = np.where(mid, _halley(seed, xm), w)
    inner = (d >= _SERIES_CUTOFF) & ~mid
    if np.any(inner):
        w = np.where(inner, _halley(np.where(inner, w, -2.0), np.where(inner, x, -0.3)), w)
    return w


def lambert_w(branch: int, x):
    """Evaluate the Lambert W function on a real branch.

    Args:
        branch: 0 for the principal branch (x >= -1/e), -1 for the lower
            branch (-1/e <= x < 0).
        x: scalar or array argument.

    Returns:
        w with w * exp(w) = x, as a float (scalar input) or ndarray.

    Raises:
        DomainError: if branch is not 0/-1 or x lies outside the branch domain.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("lambert_w argument must be finite")
    d = _one_plus_e_x(arr)
    # exact -1/e representations can round d slightly negative
    d = np.where((d < 0.0) & (d > -1e-15), 0.0, d)
    if branch == 0:
        if np.any(d < 0.0):
            raise DomainError("principal branch requires x >= -1/e")
        w = _w0(arr, d)
    elif branch == -1:
        if np.any(d < 0.0) or np.any(arr >= 0.0):
            raise DomainError("branch -1 requires -1/e <= x < 0")
        w = _wm1(arr, d)
    else:
        raise DomainError(f"no real branch {branch}; use 0 or -1")
    return float(w) if np.isscalar(x) or arr.ndim == 0 else w


@dataclass(frozen=True)
class SamplingBound:
    """One evaluated bound with its inputs echoed for diagnostics."""

    value: float
    kind: str  # "lower" or "upper"
    k2: float
    p: float
    eps: float


def _validate(k2, p, eps):
    k2 = np.asarray(k2, dtype=float)
    p = np.asarray(p, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(~np.isfinite(k2)) or np.any(k2 < 0.0):
        raise DomainError("k2 must be a finite non-negative count")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("p must lie strictly inside (0, 1)")
    if np.any(eps <= 0.0) or np.any(eps > 1.0):
        raise DomainError("eps must lie in (0, 1]; eps = 1 gives the zero-deviation limit")
    return k2, p, eps


def _branch_tails(k2, eps):
    """Return (s, t) = (1 + W0(x), -1 - W_-1(x)) at x = -exp((ln eps - k2)/k2).

    Both tails are computed from d = 1 + e*x = -expm1(ln(eps)/k2), which
    stays accurate for large k2 where x crowds the branch point.
    """
    with np.errstate(divide="ignore"):
        ratio = np.where(k2 > 0.0, np.log(eps) / np.where(k2 > 0.0, k2, 1.0), -np.inf)
    d = -np.expm1(ratio)
    x = -np.exp(ratio) * _INV_E
    q = np.sqrt(2.0 * d)
    near = d < _SERIES_CUTOFF
    s = np.where(near, _tail_series(q), 1.0 + _w0(x, d))
    t = np.where(near, -_tail_series(-q), -1.0 - _wm1(np.where(x < 0.0, x, -0.5 * _INV_E), d))
    return s, t


def g_lower(k2, p, eps):
    """Lower bound on the unobserved partition K1, failing with probability <= eps.

    k2 is the observed count (real-valued expectations are accepted), p the
    per-element probability of landing in the unobserved partition.  The
    result is clamped at 0, and g_lower(0, p, eps) = 0.
    """
    k2, p, eps = _validate(k2, p, eps)
    s, _ = _branch_tails(k2, eps)
    value = np.where(k2 > 0.0, k2 * np.maximum(p - s, 0.0) / (1.0 - p), 0.0)
    return float(value) if value.ndim == 0 else value


def g_upper(k2, p, eps):
    """Upper bound on the unobserved partition K1, failing with probability <= eps.

    Strictly increasing in k2; the k2 = 0 case reduces to -ln(eps)/(1-p).
    """
    k2, p, eps = _validate(k2, p, eps)
    _, t = _branch_tails(k2, eps)
    value = np.where(k2 > 0.0, k2 * (t + p) / (1.0 - p), -np.log(eps) / (1.0 - p))
    return float(value) if value.ndim == 0 else value
