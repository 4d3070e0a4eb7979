"""Season-long closed-loop evaluation.

The runner drives one growing season day by day: each zone's ground-truth
soil column is read, the scheduler of choice (synchronized policy+MPC, or
the triggered benchmark) prescribes today's rates, the first day of the
plan is applied to the truth columns under the true weather, and the loop
repeats (receding horizon). Accounting covers water, pivot rotations,
band-violation costs (quadratic and linear flavors) and end-of-season
predicted yield, plus plan audits (guess-improvement and on/off-rate
coupling).

Weather enters as daily records; a seeded synthetic generator with dry
and wet presets stands in for field data. Forecasts over the planning
horizon carry zero-mean Gaussian noise whose standard deviation grows
with lead time.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from . import agronomy
from .baseline import TriggerConfig, triggered_rate
from .mpc import Forecast
from .presets import (ZoneSetup, default_zones, desk_lstm_config,
                      desk_ppo_hyper, forcing_ranges, mpc_params,
                      truth_column, zone_target, anaerobic_point)
from .ppo import ZoneEnv, train_agent
from .soil import DailyForcing, SoilColumnState
from .surrogate import generate_training_data, train
from .sync import ZoneModel, ZoneObservation, schedule_all

__all__ = [
    "WeatherRecord",
    "ParseError",
    "GapError",
    "load_weather",
    "save_weather",
    "synthetic_weather",
    "perturb_forecast",
    "SeasonConfig",
    "SeasonReport",
    "init_states",
    "run_season",
    "train_zone_models",
    "compare",
    "format_comparison",
]

WEATHER_HEADER = ("date", "rain_mm", "et0_mm", "tavg_c")


class ParseError(ValueError):
    """Malformed weather row; carries the offending line number."""


class GapError(ValueError):
    """Weather dates are not contiguous daily."""


@dataclass(frozen=True)
class WeatherRecord:
    date: dt.date
    rain_mm: float
    et0_mm: float
    tavg_c: float


def load_weather(path) -> list[WeatherRecord]:
    """Read a daily weather CSV (``date,rain_mm,et0_mm,tavg_c``)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != WEATHER_HEADER:
            raise ParseError(f"expected header {','.join(WEATHER_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = WeatherRecord(
                    date=dt.date.fromisoformat(row["date"]),
                    rain_mm=float(row["rain_mm"]),
                    et0_mm=float(row["et0_mm"]),
                    tavg_c=float(row["tavg_c"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if rec.rain_mm < 0 or rec.et0_mm < 0:
                raise ParseError(f"line {lineno}: negative rain or et0")
            records.append(rec)
    if not records:
        raise ParseError("weather file holds no records")
    for prev, cur in zip(records, records[1:]):
        if (cur.date - prev.date).days != 1:
            raise GapError(f"missing day between {prev.date} and {cur.date}")
    return records


def save_weather(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEATHER_HEADER)
        for r in records:
            writer.writerow([r.date.isoformat(), repr(float(r.rain_mm)),
                             repr(float(r.et0_mm)), repr(float(r.tavg_c))])


def synthetic_weather(days: int, seed: int, preset: str = "dry",
                      start: dt.date = dt.date(2015, 5, 5),
                      total_rain_mm: float | None = None) -> list[WeatherRecord]:
    """Seeded stand-in season.

    ``dry`` mirrors a low-rain prairie season, ``wet`` a rainy one; when
    ``total_rain_mm`` is given the rain series is rescaled to sum to it
    exactly (e.g. 141.7 for the dry reference season, 230.9 for the wet
    one).
    """
    presets = {"dry": (0.10, 3.0), "wet": (0.22, 5.0)}
    if preset not in presets:
        raise ValueError(f"unknown preset {preset!r}")
    p_rain, rain_scale = presets[preset]
    rng = np.random.default_rng(np.random.SeedSequence(["weather", seed]))
    t = np.arange(days)
    season_pos = np.sin(np.pi * np.clip((t + 10) / (days + 20), 0, 1))
    et0 = 2.0 + 5.5 * season_pos + rng.normal(0.0, 0.8, days)
    tavg = 9.0 + 12.0 * season_pos + rng.normal(0.0, 2.0, days)
    rain = np.where(rng.random(days) < p_rain,
                    rng.exponential(rain_scale, days), 0.0)
    if total_rain_mm is not None:
        if rain.sum() <= 0:
            rain[days // 2] = 1.0
        rain *= total_rain_mm / rain.sum()
    return [WeatherRecord(start + dt.timedelta(days=int(d)),
                          float(round(rain[d], 4)),
                          float(round(max(et0[d], 0.1), 4)),
                          float(round(tavg[d], 4)))
            for d in range(days)]


def perturb_forecast(records, rng: np.random.Generator,
                     sigma1_rain: float = 1.0, sigma1_et0: float = 0.5):
    """Noisy (rain, et0) forecast arrays over the given horizon records.

    Lead time k = 1.. carries standard deviation ``sigma1 * (1 + (k-1)/7)``;
    both series clamp at zero.
    """
    n = len(records)
    scale = 1.0 + np.arange(n) / 7.0
    rain = np.array([r.rain_mm for r in records])
    et0 = np.array([r.et0_mm for r in records])
    rain = np.maximum(rain + rng.normal(0.0, 1.0, n) * sigma1_rain * scale, 0.0)
    et0 = np.maximum(et0 + rng.normal(0.0, 1.0, n) * sigma1_et0 * scale, 0.0)
    return rain, et0


# ---------------------------------------------------------------------------
# season configuration and report
# ---------------------------------------------------------------------------

@dataclass
class SeasonConfig:
    """One evaluation scenario: weather, zones, depletion level, seeds."""

    weather: list
    mad: float = 0.65
    zones: tuple = field(default_factory=default_zones)
    crop: agronomy.CropParams = field(default_factory=agronomy.spring_wheat)
    horizon: int = 14
    z_r_shallow: float = 0.5
    z_r_deep: float = 1.0
    z_r_switch_day: int | None = None  # default: 16 July, else 60 % of season
    sigma1_rain: float = 1.0
    sigma1_et0: float = 0.5
    r_water: float = 9000.0
    r_event: float = 1000.0
    noise_std: float = 5e-4
    initial_theta_rz: tuple | None = None  # per zone; default mid-band
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mad <= 1.0:
            raise ValueError("mad must be in (0, 1]")
        if not self.weather:
            raise ValueError("weather must cover the season")

    @property
    def days(self) -> int:
        return len(self.weather)

    def switch_day(self) -> int:
        if self.z_r_switch_day is not None:
            return self.z_r_switch_day
        first = self.weather[0].date
        target = dt.date(first.year, 7, 16)
        offset = (target - first).days
        if 0 < offset < self.days:
            return offset
        return int(0.6 * self.days)

    def z_r_series(self) -> np.ndarray:
        z = np.full(self.days, self.z_r_shallow)
        z[self.switch_day():] = self.z_r_deep
        return z

    def kc_series(self) -> np.ndarray:
        tavg = np.array([w.tavg_c for w in self.weather])
        g = agronomy.cumulative_gdd(tavg, self.crop.t_base)
        return np.asarray(agronomy.kc(g, self.crop))


@dataclass
class ZoneTrace:
    """Per-day series for one zone over the season."""

    name: str
    theta_rz: list = field(default_factory=list)      # end-of-day
    applied_mm: list = field(default_factory=list)
    decision: list = field(default_factory=list)
    guess_cost: list = field(default_factory=list)    # proposed method only
    plan_cost: list = field(default_factory=list)


@dataclass
class SeasonReport:
    """Totals, costs and yield of one season run, with daily traces."""

    method: str
    mad: float
    days: int
    water_mm: dict
    total_water_mm: float
    rotations: int
    rotations_per_zone: dict
    cost_upper: float          # quadratic upper-band violations
    cost_lower: float          # quadratic lower-band violations
    cost_upper_linear: float   # per-unit absolute violations
    cost_lower_linear: float
    cost_water: float
    cost_events: float
    overall_cost: float
    predicted_yield: dict
    mean_yield: float
    improvement_violations: int
    coupling_violations: int
    traces: dict = field(default_factory=dict, repr=False)

    def to_json(self, path) -> None:
        payload = {k: v for k, v in self.__dict__.items() if k != "traces"}
        payload["traces"] = {
            name: {f: list(map(float, getattr(tr, f)))
                   for f in ("theta_rz", "applied_mm", "decision")}
            for name, tr in self.traces.items()}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    def traces_to_csv(self, path, weather=None) -> None:
        """Plot-ready daily series (one row per zone-day)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["day", "date", "zone", "theta_rz", "applied_mm",
                             "decision", "rain_mm", "et0_mm"])
            for name, tr in self.traces.items():
                for d in range(len(tr.theta_rz)):
                    w = weather[d] if weather else None
                    writer.writerow([
                        d, w.date.isoformat() if w else "", name,
                        repr(float(tr.theta_rz[d])),
                        repr(float(tr.applied_mm[d])), int(tr.decision[d]),
                        repr(float(w.rain_mm)) if w else "",
                        repr(float(w.et0_mm)) if w else ""])


def init_states(cfg: SeasonConfig) -> list[SoilColumnState]:
    """Hydrostatic per-zone initial states matching the configured (or
    default mid-band) root-zone moisture at the starting rooting depth."""
    states = []
    z0 = cfg.z_r_shallow
    for i, setup in enumerate(cfg.zones):
        tz = zone_target(setup, cfg.mad)
        theta0 = (cfg.initial_theta_rz[i] if cfg.initial_theta_rz is not None
                  else 0.5 * (tz.lower + tz.upper))
        col = truth_column(setup, cfg.mad, noise_std=cfg.noise_std)
        states.append(col.state_for_root_zone(theta0, z0))
    return states


def train_zone_models(cfg: SeasonConfig, data_episodes: int = 220,
                      data_days: int = 60, ppo_episodes: int = 5000,
                      seed: int = 0, lstm_config=None, ppo_hyper=None,
                      progress=None):
    """Train a surrogate and a decision policy for every zone of a config.

    Returns ``(models, reward_curves)`` ready for :func:`run_season`'s
    proposed method. Deterministic for fixed seeds.
    """
    models, curves = [], {}
    for i, setup in enumerate(cfg.zones):
        col = truth_column(setup, cfg.mad, noise_std=cfg.noise_std)
        ranges = forcing_ranges(setup)
        if progress:
            progress(f"[{setup.name}] generating {data_episodes} episodes")
        samples = generate_training_data(col, ranges, episodes=data_episodes,
                                         seed=seed * 1000 + i, days=data_days)
        lstm_cfg = lstm_config or desk_lstm_config(seed=seed * 100 + i)
        if progress:
            progress(f"[{setup.name}] training surrogate on {len(samples)} windows")
        surrogate = train(samples, lstm_cfg)
        costs = mpc_params(setup, cfg.mad, horizon=cfg.horizon,
                           r_water=cfg.r_water, r_event=cfg.r_event)
        env = ZoneEnv(col, costs, ranges)
        hyper = ppo_hyper or desk_ppo_hyper(episodes=ppo_episodes)
        if progress:
            progress(f"[{setup.name}] training agent for {hyper.episodes} episodes")
        policy, curve = train_agent(env, hyper, seed=seed * 10 + i)
        curves[setup.name] = curve
        models.append(ZoneModel(setup.name, col, surrogate, policy, costs))
    return models, curves


def _pad_records(records, start: int, n: int):
    out = list(records[start:start + n])
    while len(out) < n:
        out.append(out[-1] if out else records[-1])
    return out


def run_season(cfg: SeasonConfig, method: str,
               zone_models: list | None = None,
               parallel: bool = True) -> SeasonReport:
    """Run one season under ``method`` ("proposed" or "triggered").

    The proposed method needs trained ``zone_models``; both methods drive
    the same ground-truth columns with the same seeded process noise, so
    runs with equal seeds are directly comparable. Only day one of each
    plan is applied (receding horizon, daily re-planning).
    """
    if method not in ("proposed", "triggered"):
        raise ValueError(f"unknown method {method!r}")
    if method == "proposed" and not zone_models:
        raise ValueError("the proposed method requires trained zone models")

    nz = len(cfg.zones)
    columns = [truth_column(s, cfg.mad, noise_std=cfg.noise_std)
               for s in cfg.zones]
    if method == "proposed":
        for model, col in zip(zone_models, columns):
            model.column = col  # share the truth dynamics configuration
    states = init_states(cfg)
    targets = [zone_target(s, cfg.mad) for s in cfg.zones]
    mpcs = [mpc_params(s, cfg.mad, horizon=cfg.horizon, r_water=cfg.r_water,
                       r_event=cfg.r_event) for s in cfg.zones]
    trigger_cfgs = [TriggerConfig(tz) for tz in targets]

    z_r = cfg.z_r_series()
    kc = cfg.kc_series()
    rain_true = np.array([w.rain_mm for w in cfg.weather])
    et0_true = np.array([w.et0_mm for w in cfg.weather])
    seq = np.random.SeedSequence
    noise_rngs = [np.random.default_rng(seq([cfg.seed, 10 + i]))
                  for i in range(nz)]

    seq_len = (zone_models[0].surrogate.seq_len if method == "proposed" else 5)
    histories = [None] * nz
    traces = {s.name: ZoneTrace(s.name) for s in cfg.zones}
    improvement_bad = 0
    coupling_bad = 0

    for d in range(cfg.days):
        y_today = [columns[i].root_zone(states[i], z_r[d]) for i in range(nz)]
        if d == 0:
            for i in range(nz):
                boot = np.array([y_today[i], 0.0, kc[0], et0_true[0], z_r[0]])
                histories[i] = np.tile(boot, (seq_len, 1))

        applied = np.zeros(nz)
        decisions = np.zeros(nz, dtype=int)
        if method == "proposed":
            horizon_recs = _pad_records(cfg.weather, d, cfg.horizon)
            rng_fc = np.random.default_rng(seq([cfg.seed, 2, d]))
            rain_fc, et0_fc = perturb_forecast(horizon_recs, rng_fc,
                                               cfg.sigma1_rain, cfg.sigma1_et0)
            kc_fc = _pad_series(kc, d, cfg.horizon)
            zr_fc = _pad_series(z_r, d, cfg.horizon)
            forecast = Forecast(rain=rain_fc, et0=et0_fc, kc=kc_fc, z_r=zr_fc)
            observations = [
                ZoneObservation(states[i], histories[i], y_today[i])
                for i in range(nz)]
            plans = schedule_all(zone_models, observations, forecast,
                                 parallel=parallel)
            for i, plan in enumerate(plans):
                applied[i] = plan.rates[0]
                decisions[i] = plan.decisions[0]
                traces[cfg.zones[i].name].guess_cost.append(plan.cost_of_guess)
                traces[cfg.zones[i].name].plan_cost.append(plan.cost_total)
                if np.isfinite(plan.cost_of_guess) and \
                        plan.cost_total > plan.cost_of_guess + 1e-9:
                    improvement_bad += 1
                on = plan.decisions > 0
                p = zone_models[i].mpc
                if (np.any(plan.rates[~on] != 0.0)
                        or np.any(plan.rates[on] < p.u_min - 1e-9)
                        or np.any(plan.rates[on] > p.u_max + 1e-9)):
                    coupling_bad += 1
        else:
            for i in range(nz):
                rain4 = rain_true[d + 1:d + 5]
                applied[i] = triggered_rate(y_today[i], z_r[d], rain4,
                                            trigger_cfgs[i])
                decisions[i] = int(applied[i] > 0)

        for i in range(nz):
            f = DailyForcing(irrigation=float(applied[i]),
                             rain=float(rain_true[d]), et0=float(et0_true[d]),
                             kc=float(kc[d]), z_r=float(z_r[d]))
            states[i], _ = columns[i].simulate_day(states[i], f,
                                                   rng=noise_rngs[i])
            y_end = columns[i].root_zone(states[i], z_r[d])
            tr = traces[cfg.zones[i].name]
            tr.theta_rz.append(y_end)
            tr.applied_mm.append(float(applied[i]))
            tr.decision.append(int(decisions[i]))
            histories[i] = np.vstack([
                histories[i][1:],
                [y_today[i], applied[i] + rain_true[d], kc[d], et0_true[d],
                 z_r[d]]])

    return _build_report(cfg, method, targets, traces, kc, et0_true,
                         improvement_bad, coupling_bad)


def _pad_series(series, start, n):
    out = np.asarray(series[start:start + n], dtype=float)
    if out.size < n:
        out = np.concatenate([out, np.full(n - out.size, out[-1] if out.size
                                           else series[-1])])
    return out


def _build_report(cfg, method, targets, traces, kc, et0_true,
                  improvement_bad, coupling_bad) -> SeasonReport:
    water, rots, yields = {}, {}, {}
    cost_up = cost_lo = lin_up = lin_lo = 0.0
    any_applied = np.zeros(cfg.days, dtype=bool)
    demand = kc * et0_true
    for i, setup in enumerate(cfg.zones):
        tr = traces[setup.name]
        theta = np.asarray(tr.theta_rz)
        applied = np.asarray(tr.applied_mm)
        tz = targets[i]
        water[setup.name] = float(applied.sum())
        rots[setup.name] = int(np.sum(applied > 0))
        any_applied |= applied > 0
        hi = np.maximum(theta - tz.upper, 0.0)
        lo = np.maximum(tz.lower - theta, 0.0)
        cost_up += setup.q_upper * float((hi ** 2).sum())
        cost_lo += setup.q_lower * float((lo ** 2).sum())
        lin_up += setup.q_upper * float(hi.sum())
        lin_lo += setup.q_lower * float(lo.sum())
        y_a, _, _ = agronomy.seasonal_yield(theta, demand, cfg.crop, tz,
                                            anaerobic_point(setup))
        yields[setup.name] = y_a
    rotations = int(any_applied.sum())
    total_water = float(sum(water.values()))
    cost_water = cfg.r_water * total_water
    cost_events = cfg.r_event * rotations
    return SeasonReport(
        method=method, mad=cfg.mad, days=cfg.days, water_mm=water,
        total_water_mm=total_water, rotations=rotations,
        rotations_per_zone=rots, cost_upper=cost_up, cost_lower=cost_lo,
        cost_upper_linear=lin_up, cost_lower_linear=lin_lo,
        cost_water=cost_water, cost_events=cost_events,
        overall_cost=cost_up + cost_lo + cost_water + cost_events,
        predicted_yield=yields,
        mean_yield=float(np.mean(list(yields.values()))),
        improvement_violations=improvement_bad,
        coupling_violations=coupling_bad, traces=traces)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

_COMPARE_METRICS = (
    ("total_water_mm", "Prescribed irrigation (mm)", "down"),
    ("rotations", "Pivot rotations", "up"),
    ("cost_upper", "Cost of violating the upper bound", "down"),
    ("cost_lower", "Cost of violating the lower bound", "down"),
    ("overall_cost", "Overall cost", "down"),
    ("mean_yield", "Predicted yield (Mg/ha)", "up"),
)


def compare(proposed: SeasonReport, triggered: SeasonReport) -> list[dict]:
    """Per-metric percentage deltas of the proposed run relative to the
    triggered benchmark (positive percentage = reduction)."""
    if proposed.days != triggered.days or proposed.mad != triggered.mad:
        raise ValueError("reports must come from the same scenario")
    rows = []
    for attr, label, _ in _COMPARE_METRICS:
        prop = float(getattr(proposed, attr))
        trig = float(getattr(triggered, attr))
        if trig != 0.0:
            reduction = 100.0 * (trig - prop) / trig
        else:
            reduction = 0.0 if prop == 0.0 else -np.inf
        rows.append({"metric": label, "proposed": prop, "triggered": trig,
                     "reduction_pct": reduction})
    return rows


def format_comparison(rows) -> str:
    lines = [f"{'Metric':<38} {'Proposed':>12} {'Triggered':>12} {'Change':>10}"]
    for row in rows:
        red = row["reduction_pct"]
        arrow = "↓" if red >= 0 else "↑"
        lines.append(f"{row['metric']:<38} {row['proposed']:>12.2f} "
                     f"{row['triggered']:>12.2f} {arrow + format(abs(red), '.1f') + '%':>10}")
    return "\n".join(lines)
