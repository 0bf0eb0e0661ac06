"""Scalar summaries of fitted curves: peak, near-peak interval, integral.

Curves are any callables that accept a numpy array of times (fitted
``SmoothedCurve`` objects qualify). The peak is located by a 2001-point scan
plus golden-section refinement, the near-peak interval holds everything
around the peak at or above (1 - fraction) of the peak value with endpoints
bisected to 1e-6, and the integral uses composite Simpson on 2001 points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import NearPeakUndefined

__all__ = ["CurveSummary", "peak", "near_peak_interval", "integral_measure", "summarize"]

_SCAN_POINTS = 2001
_T_TOL = 1e-6
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CurveSummary:
    """Peak location/value, near-peak age interval, and area under the curve."""

    peak_age: float
    peak_value: float
    near_peak: tuple[float, float]
    integral: float


def _golden_max(f, a: float, b: float) -> float:
    """Golden-section maximizer on [a, b]; plateaus resolve to the left."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = float(f(np.asarray(c))), float(f(np.asarray(d)))
    while b - a > _T_TOL:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = float(f(np.asarray(c)))
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = float(f(np.asarray(d)))
    return a


def peak(curve, domain) -> tuple[float, float]:
    """Global maximum of the curve on the domain: (age, value).

    A 2001-point scan brackets the maximizer, golden-section refines it to
    1e-6 in t. Ties go to the smaller t.
    """
    a, b = float(domain[0]), float(domain[1])
    grid = np.linspace(a, b, _SCAN_POINTS)
    vals = np.asarray(curve(grid), dtype=float)
    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, _SCAN_POINTS - 1)]
    t_ref = _golden_max(curve, lo, hi)
    v_ref = float(curve(np.asarray(t_ref)))
    t_scan, v_scan = float(grid[i]), float(vals[i])
    if v_ref > v_scan or (v_ref == v_scan and t_ref < t_scan):
        return t_ref, v_ref
    return t_scan, v_scan


def _bisect_crossing(curve, inside: float, outside: float, threshold: float) -> float:
    """Boundary of {f >= threshold} between an inside and an outside point."""
    while abs(outside - inside) > _T_TOL:
        mid = 0.5 * (inside + outside)
        if float(curve(np.asarray(mid))) >= threshold:
            inside = mid
        else:
            outside = mid
    return 0.5 * (inside + outside)


def near_peak_interval(curve, domain, fraction: float = 0.10) -> tuple[float, float]:
    """Maximal interval around the peak where f stays within ``fraction`` of it.

    Requires a strictly positive peak value; the relative threshold
    (1 - fraction) * peak is meaningless otherwise.

    Raises
    ------
    NearPeakUndefined
        If the peak value is not positive.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    a, b = float(domain[0]), float(domain[1])
    t_star, v_star = peak(curve, domain)
    if v_star <= 0:
        raise NearPeakUndefined(
            f"peak value {v_star:g} is not positive; near-peak interval is undefined")
    threshold = (1.0 - fraction) * v_star
    grid = np.linspace(a, b, _SCAN_POINTS)
    vals = np.asarray(curve(grid), dtype=float)
    below = vals < threshold

    left = a
    idx_left = np.nonzero(below & (grid < t_star))[0]
    if idx_left.size:
        j = idx_left[-1]
        left = _bisect_crossing(curve, inside=min(grid[j + 1], t_star), outside=grid[j],
                                threshold=threshold)
    right = b
    idx_right = np.nonzero(below & (grid > t_star))[0]
    if idx_right.size:
        j = idx_right[0]
        right = _bisect_crossing(curve, inside=max(grid[j - 1], t_star), outside=grid[j],
                                 threshold=threshold)
    return left, right


def integral_measure(curve, domain) -> float:
    """Area under the curve by composite Simpson on 2001 points."""
    a, b = float(domain[0]), float(domain[1])
    grid = np.linspace(a, b, _SCAN_POINTS)
    return float(simpson(np.asarray(curve(grid), dtype=float), x=grid))


def summarize(curve, domain, fraction: float = 0.10) -> CurveSummary:
    """All three summaries in one pass; near-peak requires a positive peak."""
    t_star, v_star = peak(curve, domain)
    interval = near_peak_interval(curve, domain, fraction)
    return CurveSummary(
        peak_age=t_star,
        peak_value=v_star,
        near_peak=interval,
        integral=integral_measure(curve, domain),
    )
