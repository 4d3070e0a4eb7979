"""Field-wide synchronization of per-zone schedules.

Every zone's policy proposes its own daily on/off sequence; the pivot can
only run one field-wide sequence. The zone whose sequence fires earliest
(the limiting zone) wins, its sequence becomes binding for everyone, the
per-zone policy rates are repaired onto that pattern as warm starts, and
the rate programs are then solved independently (optionally in parallel —
they share no state, so the result is identical either way).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mpc import Forecast, IrrigationPlan, MpcParams, solve_rates
from .ppo import PolicyParams, evaluate_sequence
from .soil import SoilColumn, SoilColumnState
from .surrogate import SurrogateModel

__all__ = [
    "ZoneModel",
    "ZoneObservation",
    "BindingResult",
    "find_limiting_zone",
    "binding_sequence",
    "repair_guess",
    "schedule_all",
]


@dataclass
class ZoneModel:
    """Everything one management zone needs at scheduling time."""

    name: str
    column: SoilColumn            # ground-truth dynamics (policy evaluation)
    surrogate: SurrogateModel     # fast dynamics (rate optimization)
    policy: PolicyParams
    mpc: MpcParams


@dataclass
class ZoneObservation:
    """A zone's state as seen on the morning of a scheduling day."""

    state: SoilColumnState       # full pressure-head state
    history: np.ndarray          # last seq_len daily surrogate records
    y_current: float             # today's root-zone moisture


@dataclass(frozen=True)
class BindingResult:
    limiting_zone: int
    binding_c: np.ndarray
    guesses: list  # per-zone repaired rate warm starts


def _first_fire(seq) -> int | None:
    nz = np.flatnonzero(np.asarray(seq))
    return int(nz[0]) if nz.size else None


def find_limiting_zone(sequences) -> int:
    """Index of the zone with the earliest nonzero decision.

    Ties, and the case where no zone fires at all, resolve to the lowest
    zone index.
    """
    sequences = [np.asarray(s) for s in sequences]
    if not sequences:
        raise ValueError("need at least one sequence")
    n = sequences[0].size
    if any(s.size != n for s in sequences):
        raise ValueError("sequences must share one length")
    best, best_pos = 0, np.inf
    for j, seq in enumerate(sequences):
        pos = _first_fire(seq)
        pos = np.inf if pos is None else pos
        if pos < best_pos:
            best, best_pos = j, pos
    return best


def binding_sequence(sequences) -> np.ndarray:
    """The limiting zone's sequence, copied."""
    j = find_limiting_zone(sequences)
    return np.asarray(sequences[j], dtype=int).copy()


def repair_guess(u_agent, binding_c, u_min: float, u_max: float) -> np.ndarray:
    """Project policy rates onto the binding on/off pattern.

    Off days zero out; on days keep the policy rate clipped into the rate
    box (a policy rate of zero becomes the minimum rate).
    """
    u_agent = np.asarray(u_agent, dtype=float)
    binding_c = np.asarray(binding_c)
    if u_agent.shape != binding_c.shape:
        raise ValueError("rates and decisions must align")
    out = np.where(binding_c > 0, np.clip(u_agent, u_min, u_max), 0.0)
    return out


def compute_binding(zones, observations, forecast: Forecast,
                    horizon: int | None = None) -> BindingResult:
    """Evaluate every zone's policy and derive the binding sequence."""
    seqs, rates = [], []
    for zone, obs in zip(zones, observations):
        c_seq, u_seq = evaluate_sequence(zone.policy, zone.column, obs.state,
                                         forecast, horizon)
        seqs.append(c_seq)
        rates.append(u_seq)
    limiting = find_limiting_zone(seqs)
    binding = np.asarray(seqs[limiting], dtype=int).copy()
    guesses = [repair_guess(u, binding, z.mpc.u_min, z.mpc.u_max)
               for z, u in zip(zones, rates)]
    return BindingResult(limiting, binding, guesses)


def schedule_all(zones, observations, forecast: Forecast,
                 parallel: bool = True, max_workers: int | None = None
                 ) -> list[IrrigationPlan]:
    """Run the synchronized scheduling step for all zones.

    Policies are evaluated, the binding sequence imposed, and one rate
    program solved per zone (concurrently when ``parallel``; the merge is
    by zone index, so output is identical to the sequential run). Every
    returned plan carries the same decision sequence.
    """
    if len(zones) != len(observations):
        raise ValueError("one observation per zone required")
    binding = compute_binding(zones, observations, forecast)

    def solve_one(idx: int) -> IrrigationPlan:
        zone, obs = zones[idx], observations[idx]
        try:
            return solve_rates(zone.surrogate, obs.history, obs.y_current,
                               binding.binding_c, forecast, zone.mpc,
                               u_guess=binding.guesses[idx])
        except Exception as exc:
            raise RuntimeError(f"rate solve failed for zone "
                               f"{zones[idx].name!r}") from exc

    if parallel and len(zones) > 1:
        with ThreadPoolExecutor(max_workers=max_workers or len(zones)) as pool:
            plans = list(pool.map(solve_one, range(len(zones))))
    else:
        plans = [solve_one(i) for i in range(len(zones))]
    return plans
