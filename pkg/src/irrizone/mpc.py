"""Per-zone rate optimization with the daily on/off pattern fixed.

With the binary decision sequence supplied (by the decision policy via the
synchronization step), the remaining problem is a smooth nonlinear program
in the daily rates: minimize quadratic target-band violations plus water
and fixed operating costs, subject to the LSTM surrogate dynamics and the
per-day rate box. It is solved by single shooting: rates are the only
variables, the trajectory is a recursive surrogate rollout, and the exact
objective gradient comes from reverse-mode differentiation through the
rollout. Band slacks are eliminated analytically (at the optimum they
equal the positive parts of the violations), and L-BFGS-B handles the box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .agronomy import TargetZone
from .surrogate import (SurrogateModel, rollout_batch, rollout_caches,
                        rollout_water_gradient)

__all__ = [
    "MpcParams",
    "Forecast",
    "IrrigationPlan",
    "stage_cost",
    "trajectory_cost",
    "solve_rates",
    "evaluate_joint_cost",
]


class NonFiniteObjective(RuntimeError):
    """The rate objective evaluated to a non-finite value."""


@dataclass(frozen=True)
class MpcParams:
    """Costs, bounds and horizon of the rate program for one zone."""

    tz: TargetZone
    horizon: int = 14
    q_upper: float = 2.2e7   # per-unit cost of exceeding the band (squared)
    q_lower: float = 2.0e7   # per-unit cost of dropping below the band (squared)
    r_water: float = 9000.0  # cost per unit of applied water
    r_event: float = 1000.0  # fixed cost per irrigation day
    u_min: float = 4.0       # mm/day when an event happens
    u_max: float = 52.0

    def __post_init__(self):
        if min(self.q_upper, self.q_lower, self.r_water, self.r_event) < 0:
            raise ValueError("costs must be nonnegative")
        if not 0 < self.u_min <= self.u_max:
            raise ValueError("need 0 < u_min <= u_max")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")


@dataclass(frozen=True)
class Forecast:
    """Per-day weather and crop inputs over the planning horizon."""

    rain: np.ndarray
    et0: np.ndarray
    kc: np.ndarray
    z_r: np.ndarray

    def __post_init__(self):
        for name in ("rain", "et0", "kc", "z_r"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        n = self.rain.size
        if any(getattr(self, f).size != n for f in ("et0", "kc", "z_r")):
            raise ValueError("forecast series must align")
        if np.any(self.rain < 0) or np.any(self.et0 < 0):
            raise ValueError("rain and et0 must be nonnegative")

    def __len__(self):
        return self.rain.size

    def surrogate_forcing(self, rates: np.ndarray) -> np.ndarray:
        """(N, 4) per-day ``[water, kc, et0, z_r]`` with irrigation added
        to the rain channel."""
        return np.column_stack([rates + self.rain, self.kc, self.et0, self.z_r])


@dataclass
class IrrigationPlan:
    """Solved schedule for one zone over one planning horizon."""

    decisions: np.ndarray       # binary, day d .. d+N-1
    rates: np.ndarray           # mm/day
    slack_lower: np.ndarray     # band violations of the predicted path
    slack_upper: np.ndarray
    predicted: np.ndarray       # surrogate moisture, day d+1 .. d+N
    cost_zone: float
    cost_event: float
    cost_water: float
    cost_total: float
    cost_of_guess: float
    iterations: int
    grad_norm: float
    params: MpcParams = field(repr=False, default=None)

    def to_json(self, path, dates=None) -> None:
        payload = {
            "dates": list(dates) if dates is not None else
                     list(range(len(self.decisions))),
            "decisions": [int(c) for c in self.decisions],
            "rates_mm": [float(u) for u in self.rates],
            "predicted_moisture": [float(y) for y in self.predicted],
            "cost": {
                "zone_violation": self.cost_zone,
                "fixed_events": self.cost_event,
                "water": self.cost_water,
                "total": self.cost_total,
            },
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def stage_cost(y_next: float, c_k: int, u_k: float, p: MpcParams):
    """One day's cost and the band slacks it implies.

    Slack optimality makes the slacks the positive parts of the violations;
    the cost is ``q_upper*eps_hi^2 + q_lower*eps_lo^2 + r_event*c + r_water*u``.
    """
    eps_lo = max(p.tz.lower - y_next, 0.0)
    eps_hi = max(y_next - p.tz.upper, 0.0)
    cost = (p.q_upper * eps_hi ** 2 + p.q_lower * eps_lo ** 2
            + p.r_event * c_k + p.r_water * u_k)
    return cost, eps_lo, eps_hi


def trajectory_cost(y_pred, c, u, p: MpcParams):
    """Total cost and slack arrays over a predicted trajectory."""
    y_pred = np.asarray(y_pred, float)
    eps_lo = np.maximum(p.tz.lower - y_pred, 0.0)
    eps_hi = np.maximum(y_pred - p.tz.upper, 0.0)
    zone = float(p.q_upper * (eps_hi ** 2).sum() + p.q_lower * (eps_lo ** 2).sum())
    event = float(p.r_event * np.sum(c))
    water = float(p.r_water * np.sum(u))
    return zone + event + water, zone, event, water, eps_lo, eps_hi


def _plan_from_rates(model, history, y0, c, forecast, p, rates,
                     cost_of_guess, iterations, grad_norm) -> IrrigationPlan:
    preds, _ = rollout_caches(model, history, y0, forecast.surrogate_forcing(rates))
    total, zone, event, water, eps_lo, eps_hi = trajectory_cost(preds, c, rates, p)
    return IrrigationPlan(
        decisions=np.asarray(c, dtype=int).copy(), rates=rates.copy(),
        slack_lower=eps_lo, slack_upper=eps_hi, predicted=preds,
        cost_zone=zone, cost_event=event, cost_water=water, cost_total=total,
        cost_of_guess=cost_of_guess, iterations=iterations,
        grad_norm=grad_norm, params=p)


def solve_rates(model: SurrogateModel, history: np.ndarray, y0: float,
                c, forecast: Forecast, p: MpcParams,
                u_guess=None, extra_starts: bool = True) -> IrrigationPlan:
    """Optimize the daily rates for a fixed binary decision sequence.

    ``history`` and ``y0`` seed the surrogate window (see
    :func:`irrizone.surrogate.rollout`). ``u_guess`` must respect the
    decision pattern (zero on off-days, within the rate box on on-days);
    it is projected onto that pattern if it does not. The returned plan's
    cost never exceeds the guess's cost: the guess is one of the
    optimizer's starting points and the best evaluated point wins.
    """
    c = np.asarray(c, dtype=int)
    n = len(forecast)
    if c.size != n or p.horizon != n:
        raise ValueError("decision sequence, forecast and horizon must align")
    active = np.flatnonzero(c)

    if u_guess is None:
        u_guess = np.where(c > 0, p.u_min, 0.0)
    u_guess = np.asarray(u_guess, dtype=float).copy()
    u_guess[c == 0] = 0.0
    u_guess[active] = np.clip(u_guess[active], p.u_min, p.u_max)

    def objective(v):
        rates = np.zeros(n)
        rates[active] = v
        forcing = forecast.surrogate_forcing(rates)
        preds, step_windows = rollout_caches(model, history, y0, forcing)
        eps_lo = np.maximum(p.tz.lower - preds, 0.0)
        eps_hi = np.maximum(preds - p.tz.upper, 0.0)
        j = (p.q_upper * (eps_hi ** 2).sum() + p.q_lower * (eps_lo ** 2).sum()
             + p.r_event * c.sum() + p.r_water * rates.sum())
        if not np.isfinite(j):
            raise NonFiniteObjective(f"objective non-finite at rates {rates}")
        dj_dy = 2.0 * p.q_upper * eps_hi - 2.0 * p.q_lower * eps_lo
        g_water = rollout_water_gradient(model, step_windows, dj_dy)
        return j, g_water[active] + p.r_water

    if active.size == 0:
        return _plan_from_rates(model, history, y0, c, forecast, p,
                                np.zeros(n), cost_of_guess=np.nan,
                                iterations=0, grad_norm=0.0)

    guess_cost = objective(u_guess[active])[0]
    starts = [u_guess[active]]
    if extra_starts:
        # coarse, batched presolve over uniform rate levels: a cheap scan
        # that keeps the local optimizer out of boundary basins
        levels = p.u_min + (p.u_max - p.u_min) * np.linspace(0.0, 1.0, 9)
        cand = np.zeros((levels.size, n))
        cand[:, active] = levels[:, None]
        forcing = np.stack([forecast.surrogate_forcing(r) for r in cand])
        preds = rollout_batch(model, history, y0, forcing)
        eps_lo = np.maximum(p.tz.lower - preds, 0.0)
        eps_hi = np.maximum(preds - p.tz.upper, 0.0)
        costs = (p.q_upper * (eps_hi ** 2).sum(axis=1)
                 + p.q_lower * (eps_lo ** 2).sum(axis=1)
                 + p.r_event * c.sum() + p.r_water * cand.sum(axis=1))
        for idx in np.argsort(costs)[:2]:
            starts.append(cand[idx, active])
    best_v, best_cost, iters, gnorm = u_guess[active], guess_cost, 0, np.inf
    seen = set()
    for v0 in starts:
        key = tuple(np.round(v0, 9))
        if key in seen:
            continue
        seen.add(key)
        res = minimize(objective, v0, jac=True, method="L-BFGS-B",
                       bounds=[(p.u_min, p.u_max)] * active.size,
                       options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-6})
        if res.fun < best_cost:
            best_v, best_cost = res.x, float(res.fun)
            iters, gnorm = int(res.nit), float(np.max(np.abs(res.jac)))
    rates = np.zeros(n)
    rates[active] = np.clip(best_v, p.u_min, p.u_max)
    return _plan_from_rates(model, history, y0, c, forecast, p, rates,
                            cost_of_guess=guess_cost, iterations=iters,
                            grad_norm=gnorm)


def evaluate_joint_cost(plans) -> float:
    """Field-wide cost of per-zone plans sharing one decision sequence.

    Zone-violation and water costs add across zones; the fixed operating
    cost is counted once per irrigation day for the whole field.
    """
    if not plans:
        raise ValueError("need at least one plan")
    c0 = plans[0].decisions
    for plan in plans[1:]:
        if not np.array_equal(plan.decisions, c0):
            raise ValueError("plans do not share one decision sequence")
    r_event = plans[0].params.r_event
    total = float(r_event * c0.sum())
    for plan in plans:
        total += plan.cost_zone + plan.cost_water
    return total
