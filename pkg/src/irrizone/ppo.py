"""Daily irrigation decision policy, trained with PPO per management zone.

The policy is a small tanh MLP over the soil-moisture profile and the
day's weather drivers. It has a categorical head for the binary irrigate
decision, a Gaussian head for the rate (tanh-squashed into the equipment's
rate box, zeroed on no-irrigation days) and a value head sharing the
trunk. The clipped-surrogate update, generalized advantage estimation and
all network gradients are written out explicitly in NumPy; the training
environment steps the ground-truth soil column one day per action with
the same negative-cost reward the scheduler optimizes.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .mpc import Forecast, MpcParams
from .soil import DailyForcing, SoilColumn, SoilColumnState
from .surrogate import ForcingRanges, _Adam

__all__ = [
    "PolicyParams",
    "PpoHyper",
    "ZoneEnv",
    "reward",
    "policy_act",
    "gae",
    "ppo_update",
    "train_agent",
    "evaluate_sequence",
    "save_policy",
    "load_policy",
    "save_reward_curve",
]

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


class NonFiniteLoss(RuntimeError):
    """PPO loss became non-finite."""


def reward(theta_rz: float, c: int, u: float, p: MpcParams) -> float:
    """Negative scheduling cost of one day.

    Band violations are charged linearly (per-unit costs on the absolute
    excursion), irrigation days carge the fixed cost, and applied water its
    per-unit cost. Exactly zero inside the band with no action.
    """
    if theta_rz < p.tz.lower:
        zone = p.q_lower * abs(theta_rz - p.tz.lower)
    elif theta_rz > p.tz.upper:
        zone = p.q_upper * abs(theta_rz - p.tz.upper)
    else:
        zone = 0.0
    return -(zone + p.r_event * c + p.r_water * u)


@dataclass
class PolicyParams:
    """Shared-trunk actor-critic parameters plus observation scalers."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_logits: np.ndarray  # (hidden, 2)
    b_logits: np.ndarray
    w_mu: np.ndarray      # (hidden,)
    b_mu: np.ndarray      # scalar
    log_std: np.ndarray   # scalar, clipped to [-5, 2]
    w_v: np.ndarray
    b_v: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray
    u_min: float = 4.0
    u_max: float = 52.0

    NAMES = ("w1", "b1", "w2", "b2", "w_logits", "b_logits",
             "w_mu", "b_mu", "log_std", "w_v", "b_v")

    def items(self):
        for name in self.NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "PolicyParams":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v)
              for k, v in self.__dict__.items()}
        return PolicyParams(**kw)

    @property
    def sigma(self) -> float:
        return float(np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)))


def init_policy(obs_dim: int, hidden: int, rng: np.random.Generator,
                u_min: float, u_max: float) -> PolicyParams:
    def mat(rows, cols):
        lim = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-lim, lim, (rows, cols))
    # zero-initialized heads: the starting policy is uniform over the
    # decision, rate centred in the box, and value zero
    return PolicyParams(
        w1=mat(obs_dim, hidden), b1=np.zeros(hidden),
        w2=mat(hidden, hidden), b2=np.zeros(hidden),
        w_logits=np.zeros((hidden, 2)), b_logits=np.zeros(2),
        w_mu=np.zeros(hidden), b_mu=np.zeros(()),
        log_std=np.zeros(()), w_v=np.zeros(hidden), b_v=np.zeros(()),
        obs_mean=np.zeros(obs_dim), obs_std=np.ones(obs_dim),
        u_min=u_min, u_max=u_max)


def _trunk(params: PolicyParams, obs_std: np.ndarray):
    a1 = obs_std @ params.w1 + params.b1
    h1 = np.tanh(a1)
    a2 = h1 @ params.w2 + params.b2
    h2 = np.tanh(a2)
    return h1, h2


def _heads(params: PolicyParams, h2: np.ndarray):
    logits = h2 @ params.w_logits + params.b_logits
    mu = h2 @ params.w_mu + params.b_mu
    value = h2 @ params.w_v + params.b_v
    return logits, mu, value


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _squash(raw, lo, hi):
    return lo + (hi - lo) * 0.5 * (np.tanh(raw) + 1.0)


def _rate_log_prob(raw, mu, sigma, lo, hi):
    """Log density of the squashed rate at the stored pre-squash sample."""
    z = (raw - mu) / sigma
    gauss = -0.5 * z * z - np.log(sigma) - 0.5 * np.log(2.0 * np.pi)
    jac = np.log((hi - lo) * 0.5) + np.log1p(-np.tanh(raw) ** 2 + 1e-12)
    return gauss - jac


def policy_act(params: PolicyParams, obs, rng: np.random.Generator | None = None,
               deterministic: bool = False):
    """Sample (or take the mode of) one day's action.

    Returns ``(c, u, log_prob, value, raw)``; ``raw`` is the pre-squash
    Gaussian sample needed to re-evaluate the rate's likelihood during the
    update (NaN on no-irrigation days).
    """
    obs = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite entries")
    x = (obs - params.obs_mean) / params.obs_std
    _, h2 = _trunk(params, x[None, :])
    logits, mu, value = _heads(params, h2)
    logp_cat = _log_softmax(logits)[0]
    sigma = params.sigma
    if deterministic:
        c = int(np.argmax(logits[0]))
        raw = float(mu[0])
    else:
        if rng is None:
            raise ValueError("sampling requires an rng")
        c = int(rng.random() < np.exp(logp_cat[1]))
        raw = float(rng.normal(mu[0], sigma))
    if c == 1:
        u = float(_squash(raw, params.u_min, params.u_max))
        logp = float(logp_cat[1] + _rate_log_prob(raw, mu[0], sigma,
                                                  params.u_min, params.u_max))
    else:
        u, raw = 0.0, np.nan
        logp = float(logp_cat[0])
    return c, u, logp, float(value[0]), raw


def gae(rewards, values, bootstrap_value: float, gamma: float, lam: float):
    """Generalized advantage estimation over one trajectory.

    ``values`` aligns with ``rewards``; ``bootstrap_value`` is the value
    estimate of the state after the last step. Returns (advantages,
    returns) with ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must align")
    n = rewards.size
    adv = np.empty(n)
    nxt = bootstrap_value
    acc = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * nxt - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        nxt = values[t]
    return adv, adv + values


@dataclass
class PpoHyper:
    """PPO settings; the episode budget defaults to desk scale."""

    horizon: int = 30
    lr: float = 1e-4
    minibatch: int = 64
    epochs: int = 10
    gamma: float = 0.99
    lam: float = 0.97
    clip: float = 0.25
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    episodes: int = 5000
    episodes_per_batch: int = 16
    reward_scale: float = 1e-6  # conditioning only; logged rewards are raw
    hidden: int = 64
    warmup_episodes: int = 20
    curve_window: int = 100

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("gae lambda must be in [0, 1]")
        if self.clip <= 0.0:
            raise ValueError("clip must be positive")


def _policy_loss_and_grads(params: PolicyParams, batch: dict, hyper: PpoHyper):
    """Clipped-surrogate + value + entropy loss with analytic gradients."""
    x = batch["obs_std"]
    c = batch["c"]
    raw = batch["raw"]
    old_logp = batch["logp"]
    adv = batch["adv"]
    ret = batch["ret"]
    b = x.shape[0]

    h1, h2 = _trunk(params, x)
    logits, mu, value = _heads(params, h2)
    logp_cat = _log_softmax(logits)
    probs = np.exp(logp_cat)
    sigma = params.sigma
    in_clip_band = LOG_STD_MIN < float(params.log_std) < LOG_STD_MAX

    is1 = c == 1
    raw_safe = np.where(is1, raw, 0.0)
    lp_rate = _rate_log_prob(raw_safe, mu, sigma, params.u_min, params.u_max)
    logp = logp_cat[np.arange(b), c] + np.where(is1, lp_rate, 0.0)
    ratio = np.exp(logp - old_logp)

    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip) * adv
    surrogate = np.minimum(unclipped, clipped)
    # gradient flows through ratio only where the unclipped branch is active
    active = unclipped <= clipped

    h_cat = -(probs * logp_cat).sum(axis=1)
    h_gauss = 0.5 * np.log(2.0 * np.pi * np.e * sigma ** 2)
    entropy = h_cat + probs[:, 1] * h_gauss

    v_err = value - ret
    loss = (-surrogate.mean() + hyper.value_coef * 0.5 * (v_err ** 2).mean()
            - hyper.entropy_coef * entropy.mean())
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss non-finite ({loss})")

    # ---- backward ----
    g_logp = -(active * ratio * adv) / b            # d loss / d logp
    # categorical head
    onehot = np.zeros((b, 2))
    onehot[np.arange(b), c] = 1.0
    d_logits = g_logp[:, None] * (onehot - probs)
    # entropy term: dH_cat/dlogits_j = -p_j (log p_j + H_cat)
    d_logits += (-hyper.entropy_coef / b) * (
        -probs * (logp_cat + h_cat[:, None])
        + h_gauss * probs[:, 1:2] * (np.eye(2)[1] - probs))
    # rate head
    z = (raw_safe - mu) / sigma
    d_mu = g_logp * is1 * (z / sigma)
    d_log_std = float(np.sum(g_logp * is1 * (z * z - 1.0)))
    d_log_std += -hyper.entropy_coef / b * float(np.sum(probs[:, 1]))
    if not in_clip_band:
        d_log_std = 0.0
    # value head
    d_value = hyper.value_coef * v_err / b

    grads = {
        "w_logits": h2.T @ d_logits, "b_logits": d_logits.sum(axis=0),
        "w_mu": h2.T @ d_mu, "b_mu": np.asarray(d_mu.sum()),
        "log_std": np.asarray(d_log_std),
        "w_v": h2.T @ d_value, "b_v": np.asarray(d_value.sum()),
    }
    d_h2 = (d_logits @ params.w_logits.T + d_mu[:, None] * params.w_mu
            + d_value[:, None] * params.w_v)
    d_a2 = d_h2 * (1.0 - h2 * h2)
    grads["w2"] = h1.T @ d_a2
    grads["b2"] = d_a2.sum(axis=0)
    d_h1 = d_a2 @ params.w2.T
    d_a1 = d_h1 * (1.0 - h1 * h1)
    grads["w1"] = x.T @ d_a1
    grads["b1"] = d_a1.sum(axis=0)
    return float(loss), grads


def ppo_update(params: PolicyParams, rollout_batch: dict, hyper: PpoHyper,
               opt: _Adam | None = None,
               rng: np.random.Generator | None = None) -> dict:
    """Run the clipped-surrogate epochs over shuffled minibatches in place.

    ``rollout_batch`` holds obs (raw), c, raw, logp, adv, ret; advantages
    are normalized here. Returns summary statistics.
    """
    if opt is None:
        opt = _Adam(list(params.items()), hyper.lr)
    rng = rng or np.random.default_rng(0)
    obs = np.asarray(rollout_batch["obs"], dtype=float)
    x = (obs - params.obs_mean) / params.obs_std
    adv = np.asarray(rollout_batch["adv"], dtype=float).copy()
    std = adv.std()
    adv = (adv - adv.mean()) / (std if std > 1e-12 else 1.0)
    data = {
        "obs_std": x,
        "c": np.asarray(rollout_batch["c"], dtype=int),
        "raw": np.asarray(rollout_batch["raw"], dtype=float),
        "logp": np.asarray(rollout_batch["logp"], dtype=float),
        "adv": adv,
        "ret": np.asarray(rollout_batch["ret"], dtype=float),
    }
    n = x.shape[0]
    losses = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.minibatch):
            idx = order[start:start + hyper.minibatch]
            mb = {k: v[idx] for k, v in data.items()}
            loss, grads = _policy_loss_and_grads(params, mb, hyper)
            opt.step(list(params.items()), grads)
            params.log_std[...] = np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)
            losses.append(loss)
    return {"loss_mean": float(np.mean(losses)), "n_minibatches": len(losses)}


# ---------------------------------------------------------------------------
# environment and training loop
# ---------------------------------------------------------------------------

@dataclass
class ZoneEnv:
    """One management zone as a daily decision process.

    Observations are the full nodal moisture profile plus the day's
    reference evapotranspiration, crop coefficient and rooting depth; an
    action is (irrigate?, rate). Each step advances the ground-truth
    column one day (with process noise) and pays the negative scheduling
    cost of the resulting root-zone moisture.
    """

    column: SoilColumn
    costs: MpcParams
    ranges: ForcingRanges = field(default_factory=ForcingRanges)
    episode_days: int = 30

    def __post_init__(self):
        self._state: SoilColumnState | None = None
        self._forcing: DailyForcing | None = None

    @property
    def obs_dim(self) -> int:
        return self.column.grid.n_nodes + 3

    def _observe(self, theta_profile) -> np.ndarray:
        f = self._forcing
        return np.concatenate([theta_profile, [f.et0, f.kc, f.z_r]])

    def _draw_forcing(self, rng, z_r) -> DailyForcing:
        return DailyForcing(
            irrigation=0.0, rain=0.0,
            et0=float(rng.uniform(*self.ranges.et0)),
            kc=float(rng.uniform(*self.ranges.kc)), z_r=z_r)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        tz = self.costs.tz
        theta0 = float(rng.uniform(tz.theta_pwp, tz.theta_fc))
        z_r = float(rng.choice(self.ranges.rooting_depths))
        self._state = self.column.state_for_root_zone(theta0, z_r)
        self._forcing = self._draw_forcing(rng, z_r)
        return self._observe(self.column.theta(self._state))

    def step(self, c: int, u: float, rng: np.random.Generator):
        f = self._forcing
        applied = DailyForcing(irrigation=u if c else 0.0, rain=f.rain,
                               et0=f.et0, kc=f.kc, z_r=f.z_r)
        self._state, profile = self.column.simulate_day(self._state, applied,
                                                        rng=rng)
        theta_rz = self.column.root_zone(self._state, f.z_r)
        r = reward(theta_rz, c, u if c else 0.0, self.costs)
        self._forcing = self._draw_forcing(rng, f.z_r)
        return self._observe(profile), r


def train_agent(env: ZoneEnv, hyper: PpoHyper, seed: int):
    """PPO training loop. Returns (policy, reward_curve).

    The reward curve is a list of ``(episode_count, mean_raw_episodic
    reward)`` over trailing windows of ``hyper.curve_window`` episodes.
    Fully deterministic for a given seed.
    """
    rng_env = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    rng_upd = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rng_init = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    params = init_policy(env.obs_dim, hyper.hidden, rng_init,
                         env.costs.u_min, env.costs.u_max)

    # calibrate observation scalers with warmup episodes (no updates)
    warm = []
    for _ in range(hyper.warmup_episodes):
        obs = env.reset(rng_env)
        for _ in range(hyper.horizon):
            warm.append(obs)
            c, u, _, _, _ = policy_act(params, obs, rng_env)
            obs, _ = env.step(c, u, rng_env)
    warm = np.asarray(warm)
    params.obs_mean = warm.mean(axis=0)
    params.obs_std = np.where(warm.std(axis=0) < 1e-6, 1.0, warm.std(axis=0))

    opt = _Adam(list(params.items()), hyper.lr)
    episodic, curve = [], []
    n_updates = max(hyper.episodes // hyper.episodes_per_batch, 1)
    for _ in range(n_updates):
        batch = {k: [] for k in ("obs", "c", "raw", "logp", "adv", "ret")}
        for _ in range(hyper.episodes_per_batch):
            obs = env.reset(rng_env)
            rewards, values, raws = [], [], []
            for _ in range(hyper.horizon):
                c, u, logp, v, raw = policy_act(params, obs, rng_env)
                batch["obs"].append(obs)
                batch["c"].append(c)
                batch["raw"].append(raw)
                batch["logp"].append(logp)
                values.append(v)
                obs, r = env.step(c, u, rng_env)
                rewards.append(r)
            episodic.append(float(np.sum(rewards)))
            _, _, _, v_last, _ = policy_act(params, obs, rng_env)
            adv, ret = gae(np.asarray(rewards) * hyper.reward_scale,
                           values, v_last, hyper.gamma, hyper.lam)
            batch["adv"].extend(adv)
            batch["ret"].extend(ret)
            if len(episodic) % hyper.curve_window == 0:
                window = episodic[-hyper.curve_window:]
                curve.append((len(episodic), float(np.mean(window))))
        ppo_update(params, batch, hyper, opt, rng_upd)
    if not curve or curve[-1][0] != len(episodic):
        window = episodic[-hyper.curve_window:]
        curve.append((len(episodic), float(np.mean(window))))
    return params, curve


def evaluate_sequence(params: PolicyParams, column: SoilColumn,
                      state: SoilColumnState, forecast: Forecast,
                      horizon: int | None = None):
    """Deterministic policy rollout against a noise-free copy of the zone.

    Returns the per-day binary decisions and rates over the horizon; the
    rates serve as the warm start for the rate optimization.
    """
    horizon = len(forecast) if horizon is None else int(horizon)
    if horizon < 1 or horizon > len(forecast):
        raise ValueError("horizon must be within the forecast length")
    sim_state = state.copy()
    c_seq = np.zeros(horizon, dtype=int)
    u_seq = np.zeros(horizon)
    for k in range(horizon):
        profile = column.theta(sim_state)
        obs = np.concatenate([profile,
                              [forecast.et0[k], forecast.kc[k], forecast.z_r[k]]])
        c, u, _, _, _ = policy_act(params, obs, deterministic=True)
        c_seq[k], u_seq[k] = c, u
        f = DailyForcing(irrigation=u if c else 0.0,
                         rain=float(forecast.rain[k]),
                         et0=float(forecast.et0[k]), kc=float(forecast.kc[k]),
                         z_r=float(forecast.z_r[k]))
        sim_state, _ = column.simulate_day(sim_state, f, rng=None)
    return c_seq, u_seq


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_policy(params: PolicyParams, path) -> None:
    meta = {"format_version": 1, "u_min": params.u_min, "u_max": params.u_max}
    arrays = {name: np.asarray(arr) for name, arr in params.items()}
    np.savez(path, __meta__=json.dumps(meta), obs_mean=params.obs_mean,
             obs_std=params.obs_std, **arrays)


def load_policy(path) -> PolicyParams:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["__meta__"]))
    if meta.get("format_version") != 1:
        raise ValueError(f"unsupported policy format {meta.get('format_version')}")
    kw = {name: data[name] for name in PolicyParams.NAMES}
    return PolicyParams(obs_mean=data["obs_mean"], obs_std=data["obs_std"],
                        u_min=float(meta["u_min"]), u_max=float(meta["u_max"]),
                        **kw)


def save_reward_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_window", "mean_reward"])
        for count, mean in curve:
            writer.writerow([count, repr(float(mean))])
