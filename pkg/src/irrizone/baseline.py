"""Triggered irrigation scheduling, the comparison benchmark.

Irrigate only on days when the morning root-zone moisture has dropped
below the target band's lower bound; the applied depth refills to the
upper bound, less the rain expected over the next four days.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agronomy import TargetZone

__all__ = ["TriggerConfig", "triggered_rate"]


@dataclass(frozen=True)
class TriggerConfig:
    tz: TargetZone
    lookahead_days: int = 4

    def __post_init__(self):
        if self.lookahead_days < 0:
            raise ValueError("lookahead must be nonnegative")


def triggered_rate(theta_rz: float, z_r: float, rain_forecast: np.ndarray,
                   cfg: TriggerConfig) -> float:
    """Depth to apply today (mm), zero when the moisture sits in the band.

    ``rain_forecast`` holds the next ``lookahead_days`` days of rain (mm);
    the refill deficit ``(upper - theta_rz) * z_r`` is reduced by that
    cumulative rain and clamped at zero.
    """
    if theta_rz >= cfg.tz.lower:
        return 0.0
    rain = np.asarray(rain_forecast, dtype=float)[:cfg.lookahead_days]
    deficit_mm = (cfg.tz.upper - theta_rz) * z_r * 1000.0
    return float(max(deficit_mm - rain.sum(), 0.0))
