"""Crop-side relationships: target moisture band, degree-days, crop
coefficient, water-stress factor, and seasonal yield.

Everything here is a pure function of scalars or daily series; the soil
physics lives in :mod:`irrizone.soil`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TargetZone",
    "CropParams",
    "target_bounds",
    "gdd",
    "cumulative_gdd",
    "kc",
    "stress_factor",
    "seasonal_yield",
    "spring_wheat",
]


@dataclass(frozen=True)
class TargetZone:
    """Soil-moisture band the scheduler tries to stay inside.

    ``upper`` is the field capacity; ``lower`` sits a fraction ``mad`` of the
    plant-available water (field capacity minus wilting point) below it.
    """

    lower: float
    upper: float
    theta_fc: float
    theta_pwp: float
    mad: float

    def violation(self, theta: float) -> tuple[float, float]:
        """Return (below-lower, above-upper) violation magnitudes, >= 0."""
        return max(self.lower - theta, 0.0), max(theta - self.upper, 0.0)


@dataclass(frozen=True)
class CropParams:
    """Yield-model and crop-coefficient parameters for one crop."""

    y_m: float  # maximum potential yield (Mg/ha)
    k_y: float  # yield response factor (-)
    t_base: float  # base temperature for degree-day accumulation (degC)
    kc_poly: tuple[float, float, float, float, float]  # ascending powers of GDD

    def __post_init__(self):
        if self.y_m <= 0 or self.k_y <= 0:
            raise ValueError("y_m and k_y must be positive")


def spring_wheat() -> CropParams:
    """Soft spring wheat, coefficients calibrated for a prairie site."""
    return CropParams(
        y_m=8.8,
        k_y=1.15,
        t_base=5.0,
        kc_poly=(-0.0207, 0.00266, 4.7e-8, -2.0e-9, 2.70e-13),
    )


def target_bounds(theta_fc: float, theta_pwp: float, mad: float) -> TargetZone:
    """Build the target zone from field capacity, wilting point and MAD.

    The upper bound is field capacity; the lower bound is
    ``theta_fc - mad * (theta_fc - theta_pwp)``.
    """
    if not theta_pwp < theta_fc:
        raise ValueError(f"need theta_pwp < theta_fc, got {theta_pwp} >= {theta_fc}")
    if not 0.0 < mad <= 1.0:
        raise ValueError(f"mad must be in (0, 1], got {mad}")
    lower = theta_fc - mad * (theta_fc - theta_pwp)
    return TargetZone(lower=lower, upper=theta_fc, theta_fc=theta_fc,
                      theta_pwp=theta_pwp, mad=mad)


def gdd(t_avg, t_base: float):
    """Daily growing degree-days, clamped at zero below the base temperature."""
    return np.maximum(np.asarray(t_avg, dtype=float) - t_base, 0.0)[()]


def cumulative_gdd(t_avg, t_base: float) -> np.ndarray:
    """Cumulative degree-days over a daily temperature series."""
    return np.cumsum(gdd(t_avg, t_base))


def kc(g, crop: CropParams):
    """Crop coefficient as a quartic in cumulative degree-days, clamped at 0.

    The raw polynomial is slightly negative near emergence (constant term
    -0.0207), so the value is floored at zero.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("cumulative GDD must be nonnegative")
    c0, c1, c2, c3, c4 = crop.kc_poly
    raw = c0 + c1 * g + c2 * g**2 + c3 * g**3 + c4 * g**4
    return np.maximum(raw, 0.0)[()]


def stress_factor(theta_v, tz: TargetZone, theta_v1: float):
    """Trapezoidal water-stress factor in [0, 1].

    Zero at or below the wilting point, ramping to 1 at the band's lower
    bound, 1 across the band, and ramping back to 0 at the near-saturation
    moisture ``theta_v1`` (anaerobic point). Vectorized over ``theta_v``.
    """
    lo, hi, pwp = tz.lower, tz.upper, tz.theta_pwp
    if not (pwp <= lo <= hi < theta_v1):
        raise ValueError(
            f"breakpoints must satisfy pwp <= lower <= upper < theta_v1: "
            f"{pwp}, {lo}, {hi}, {theta_v1}")
    theta = np.asarray(theta_v, dtype=float)
    out = np.ones_like(theta)
    if lo > pwp:
        rising = (theta - pwp) / (lo - pwp)
    else:
        rising = np.where(theta >= lo, 1.0, 0.0)
    falling = (theta_v1 - theta) / (theta_v1 - hi)
    out = np.where(theta < lo, rising, out)
    out = np.where(theta > hi, falling, out)
    return np.clip(out, 0.0, 1.0)[()]


def seasonal_yield(daily_theta_rz, daily_kc_et0, crop: CropParams,
                   tz: TargetZone, theta_v1: float) -> tuple[float, float, float]:
    """Predicted yield from daily root-zone moisture and crop water demand.

    Maximum-demand evapotranspiration is the sum of daily ``kc * et0``;
    actual crop evapotranspiration scales each day by the stress factor.
    Yield follows the linear water-production function
    ``y_m * (1 - k_y + k_y * et_c / et_m)``, clamped at zero.

    Returns ``(yield_mg_ha, et_c, et_m)`` with the ET terms in the units of
    ``daily_kc_et0``.
    """
    theta = np.asarray(daily_theta_rz, dtype=float)
    demand = np.asarray(daily_kc_et0, dtype=float)
    if theta.shape != demand.shape:
        raise ValueError("moisture and demand series must align")
    et_m = float(np.sum(demand))
    if et_m <= 0.0:
        raise ValueError("seasonal maximum evapotranspiration is zero")
    et_c = float(np.sum(stress_factor(theta, tz, theta_v1) * demand))
    y_a = crop.y_m * (1.0 - crop.k_y + crop.k_y * et_c / et_m)
    return max(y_a, 0.0), et_c, et_m
