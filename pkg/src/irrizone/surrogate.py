"""Per-zone LSTM surrogate of root-zone soil moisture.

A small stacked LSTM maps a sliding window of daily records
``[moisture, water, kc, et0, z_r]`` (``water`` is rain plus irrigation,
mm/day) to the next day's root-zone moisture. The network is implemented
directly in NumPy: the forward pass evaluates the gate equations exactly,
and the backward pass is hand-written reverse-mode differentiation, which
gives both the Adam training loop and the analytic input gradients the
scheduler's optimizer needs.

Training data comes from seeded open-loop runs of the ground-truth soil
column; one model is trained per management zone with the rooting depth
as an input feature.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .soil import ConvergenceFailure, DailyForcing, SoilColumn

__all__ = [
    "FEATURE_NAMES",
    "LayerWeights",
    "LstmWeights",
    "SurrogateModel",
    "SampleSet",
    "TrainConfig",
    "ForcingRanges",
    "DivergenceError",
    "init_weights",
    "forward",
    "input_gradient",
    "train",
    "rollout",
    "rollout_batch",
    "generate_training_data",
    "rmse",
    "r2",
    "save_model",
    "load_model",
    "save_samples",
    "load_samples",
]

log = logging.getLogger(__name__)

FEATURE_NAMES = ("moisture", "water", "kc", "et0", "z_r")
N_FEATURES = len(FEATURE_NAMES)
MOISTURE, WATER = 0, 1  # feature columns referenced by the rollout


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LayerWeights:
    """One LSTM layer: input, recurrent and bias weights for the four gates."""

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_c: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    GATES = ("i", "f", "o", "c")

    def items(self, prefix):
        for g in self.GATES:
            yield f"{prefix}.w_{g}", getattr(self, f"w_{g}")
            yield f"{prefix}.u_{g}", getattr(self, f"u_{g}")
            yield f"{prefix}.b_{g}", getattr(self, f"b_{g}")


@dataclass
class LstmWeights:
    """Stacked-layer weights plus the affine output head."""

    layers: list
    w_y: np.ndarray  # (units,)
    b_y: np.ndarray  # scalar, kept 0-d for uniform gradient handling

    @property
    def units(self) -> int:
        return self.layers[0].b_i.size

    def items(self):
        for li, layer in enumerate(self.layers):
            yield from layer.items(f"layer{li}")
        yield "w_y", self.w_y
        yield "b_y", self.b_y

    def copy(self) -> "LstmWeights":
        layers = [LayerWeights(**{k: getattr(l, k).copy()
                                  for k in l.__dataclass_fields__})
                  for l in self.layers]
        return LstmWeights(layers, self.w_y.copy(), self.b_y.copy())


def init_weights(units: int, n_layers: int, rng: np.random.Generator,
                 n_features: int = N_FEATURES) -> LstmWeights:
    """Glorot-uniform gate weights, zero biases except forget-gate bias 1.

    The output head starts at zero so an untrained model predicts the
    (de-standardized) target mean rather than random noise.
    """
    layers = []
    for li in range(n_layers):
        fan_in = n_features if li == 0 else units
        def mat(rows, cols):
            lim = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-lim, lim, (rows, cols))
        kw = {}
        for g in LayerWeights.GATES:
            kw[f"w_{g}"] = mat(fan_in, units)
            kw[f"u_{g}"] = mat(units, units)
            kw[f"b_{g}"] = np.zeros(units)
        kw["b_f"] = np.ones(units)
        layers.append(LayerWeights(**kw))
    return LstmWeights(layers, np.zeros(units), np.zeros(()))


@dataclass
class SurrogateModel:
    """Trained weights with the feature/target standardization they expect."""

    weights: LstmWeights
    feat_mean: np.ndarray
    feat_std: np.ndarray
    target_mean: float
    target_std: float
    seq_len: int = 5  # past steps per window; windows hold seq_len + 1 records
    history: dict = field(default_factory=dict, repr=False)  # training curves

    @property
    def window_len(self) -> int:
        return self.seq_len + 1

    def standardize(self, windows):
        return (windows - self.feat_mean) / self.feat_std

    def destandardize_target(self, y_std):
        return self.target_mean + self.target_std * y_std


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward_std(weights: LstmWeights, x_std: np.ndarray):
    """Run the gate equations over standardized windows (B, T, F).

    Returns the standardized prediction (B,) and the cache needed for
    reverse mode.
    """
    b, t, _ = x_std.shape
    caches = []
    inp = x_std
    for layer in weights.layers:
        units = layer.b_i.size
        h = np.zeros((b, units))
        c = np.zeros((b, units))
        gates_i = np.empty((b, t, units))
        gates_f = np.empty((b, t, units))
        gates_o = np.empty((b, t, units))
        gates_g = np.empty((b, t, units))
        cells = np.empty((b, t, units))
        hidden = np.empty((b, t, units))
        for k in range(t):
            m = inp[:, k, :]
            gi = _sigmoid(m @ layer.w_i + h @ layer.u_i + layer.b_i)
            gf = _sigmoid(m @ layer.w_f + h @ layer.u_f + layer.b_f)
            go = _sigmoid(m @ layer.w_o + h @ layer.u_o + layer.b_o)
            gg = np.tanh(m @ layer.w_c + h @ layer.u_c + layer.b_c)
            c = gf * c + gi * gg
            h = go * np.tanh(c)
            gates_i[:, k] = gi
            gates_f[:, k] = gf
            gates_o[:, k] = go
            gates_g[:, k] = gg
            cells[:, k] = c
            hidden[:, k] = h
        caches.append((inp, gates_i, gates_f, gates_o, gates_g, cells, hidden))
        inp = hidden
    y = inp[:, -1, :] @ weights.w_y + weights.b_y
    return y, caches


def _backward_std(weights: LstmWeights, caches, dy,
                  want_param_grads: bool = True):
    """Reverse-mode pass. ``dy`` is (B,) gradient at the standardized output.

    Returns (param_grads or None, dx) where dx is (B, T, F) in
    standardized input space.
    """
    top_hidden = caches[-1][6]
    b, t, _ = top_hidden.shape
    grads = {}
    if want_param_grads:
        grads["w_y"] = top_hidden[:, -1, :].T @ dy
        grads["b_y"] = np.asarray(dy.sum())

    # gradient flowing into each layer's hidden sequence
    d_hidden = np.zeros_like(top_hidden)
    d_hidden[:, -1, :] = dy[:, None] * weights.w_y

    for li in range(len(weights.layers) - 1, -1, -1):
        layer = weights.layers[li]
        inp, gi, gf, go, gg, cells, hidden = caches[li]
        units = layer.b_i.size
        d_inp = np.zeros_like(inp)
        dh_next = np.zeros((b, units))
        dc_next = np.zeros((b, units))
        if want_param_grads:
            acc = {f"{w}_{g}": 0.0 for g in LayerWeights.GATES for w in ("w", "u", "b")}
        for k in range(t - 1, -1, -1):
            dh = d_hidden[:, k, :] + dh_next
            c = cells[:, k]
            tc = np.tanh(c)
            do = dh * tc
            dc = dh * go[:, k] * (1.0 - tc * tc) + dc_next
            c_prev = cells[:, k - 1] if k > 0 else np.zeros_like(c)
            di = dc * gg[:, k]
            dg = dc * gi[:, k]
            df = dc * c_prev
            dc_next = dc * gf[:, k]
            # through the activations
            di_raw = di * gi[:, k] * (1.0 - gi[:, k])
            df_raw = df * gf[:, k] * (1.0 - gf[:, k])
            do_raw = do * go[:, k] * (1.0 - go[:, k])
            dg_raw = dg * (1.0 - gg[:, k] * gg[:, k])
            m = inp[:, k, :]
            h_prev = hidden[:, k - 1] if k > 0 else np.zeros((b, units))
            raws = {"i": di_raw, "f": df_raw, "o": do_raw, "c": dg_raw}
            if want_param_grads:
                for g, raw in raws.items():
                    acc[f"w_{g}"] += m.T @ raw
                    acc[f"u_{g}"] += h_prev.T @ raw
                    acc[f"b_{g}"] += raw.sum(axis=0)
            dm = np.zeros_like(m)
            dh_next = np.zeros((b, units))
            for g, raw in raws.items():
                dm += raw @ getattr(layer, f"w_{g}").T
                dh_next += raw @ getattr(layer, f"u_{g}").T
            d_inp[:, k, :] = dm
        if want_param_grads:
            for name, val in acc.items():
                grads[f"layer{li}.{name}"] = val
        d_hidden = d_inp  # becomes the hidden-gradient of the layer below
    return (grads if want_param_grads else None), d_inp


def forward(model: SurrogateModel, window) -> np.ndarray | float:
    """One-day-ahead moisture prediction from a raw window.

    ``window`` is (window_len, 5) or a batch (B, window_len, 5) of rows
    ``[moisture, water, kc, et0, z_r]`` in physical units; the return value
    is de-standardized moisture.
    """
    w = np.asarray(window, dtype=float)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.shape[1:] != (model.window_len, N_FEATURES):
        raise ValueError(f"window must be (*, {model.window_len}, {N_FEATURES})")
    y_std, _ = _forward_std(model.weights, model.standardize(w))
    y = model.destandardize_target(y_std)
    return float(y[0]) if single else y


def input_gradient(model: SurrogateModel, window) -> np.ndarray:
    """Gradient of the prediction w.r.t. every raw window entry.

    Returns an array with the window's shape; entries are
    d(moisture prediction)/d(feature) in physical units.
    """
    w = np.asarray(window, dtype=float)
    single = w.ndim == 2
    if single:
        w = w[None]
    _, caches = _forward_std(model.weights, model.standardize(w))
    _, dx = _backward_std(model.weights, caches, np.ones(w.shape[0]),
                          want_param_grads=False)
    dx = dx * model.target_std / model.feat_std
    return dx[0] if single else dx


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class SampleSet:
    """Sliding windows with one-day-ahead targets, tagged by episode."""

    windows: np.ndarray   # (N, window_len, 5)
    targets: np.ndarray   # (N,)
    episodes: np.ndarray  # (N,) episode index of each window

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        self.episodes = np.asarray(self.episodes, dtype=int)

    def __len__(self):
        return self.targets.size

    @property
    def window_len(self) -> int:
        return self.windows.shape[1]


@dataclass(frozen=True)
class ForcingRanges:
    """Sampling ranges for open-loop data generation (mm/day, fractions)."""

    et0: tuple = (0.1, 8.99)
    kc: tuple = (0.4, 1.02)
    irrigation: tuple = (4.0, 52.0)
    rooting_depths: tuple = (0.5, 1.0)
    p_irrigation: float = 0.25
    p_rain: float = 0.15
    rain_max: float = 15.0


def generate_training_data(column: SoilColumn, ranges: ForcingRanges,
                           episodes: int, seed: int, days: int = 60,
                           seq_len: int = 5,
                           noise_std: float | None = None) -> SampleSet:
    """Seeded open-loop simulations resampled to daily sliding windows.

    Each episode draws an initial root-zone moisture, a rooting-depth
    schedule and random daily forcing, runs the ground-truth column with
    process noise, and emits every ``seq_len + 1``-day window with the next
    day's root-zone moisture as target. Episodes whose solver fails are
    skipped and counted.
    """
    if noise_std is not None:
        column = replace(column, noise_std=noise_std)
    p = column.params
    windows, targets, tags = [], [], []
    failed = 0
    for ep in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, ep]))
        theta0 = rng.uniform(p.theta_r + 0.35 * (p.theta_s - p.theta_r),
                             p.theta_s - 0.05 * (p.theta_s - p.theta_r))
        z_r = float(rng.choice(ranges.rooting_depths))
        lo, hi = days // 3, max(2 * days // 3, days // 3 + 1)
        switch_day = int(rng.integers(lo, hi)) if rng.random() < 0.25 else None
        state = column.state_for_root_zone(theta0, z_r)
        records = []
        try:
            y = column.root_zone(state, z_r)
            for day in range(days):
                if switch_day is not None and day == switch_day:
                    z_r = 1.0
                irr = (rng.uniform(*ranges.irrigation)
                       if rng.random() < ranges.p_irrigation else 0.0)
                rain = (rng.uniform(0.0, ranges.rain_max)
                        if rng.random() < ranges.p_rain else 0.0)
                f = DailyForcing(irrigation=irr, rain=rain,
                                 et0=rng.uniform(*ranges.et0),
                                 kc=rng.uniform(*ranges.kc), z_r=z_r)
                records.append([y, irr + rain, f.kc, f.et0, z_r])
                state, _ = column.simulate_day(state, f, rng=rng)
                y = column.root_zone(state, z_r)
                records[-1].append(y)  # next-day target for this record
        except ConvergenceFailure:
            failed += 1
            continue
        rec = np.asarray(records)
        for t in range(seq_len, days):
            windows.append(rec[t - seq_len:t + 1, :5])
            targets.append(rec[t, 5])
            tags.append(ep)
    if failed:
        log.warning("skipped %d/%d episodes with solver failures", failed, episodes)
    if not windows:
        shape = (0, seq_len + 1, N_FEATURES)
        return SampleSet(np.empty(shape), np.empty(0), np.empty(0, dtype=int))
    return SampleSet(np.stack(windows), np.array(targets), np.array(tags))


def save_samples(samples: SampleSet, path) -> None:
    """Write windows to CSV, one flattened window per row."""
    wl = samples.window_len
    header = ["episode"]
    for t in range(wl):
        header += [f"{name}{t}" for name in FEATURE_NAMES]
    header.append("target")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ep, win, tgt in zip(samples.episodes, samples.windows, samples.targets):
            writer.writerow([int(ep)] + [repr(float(v)) for v in win.ravel()]
                            + [repr(float(tgt))])


def load_samples(path) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        wl = (len(header) - 2) // N_FEATURES
        eps, wins, tgts = [], [], []
        for row in reader:
            eps.append(int(row[0]))
            vals = np.array([float(v) for v in row[1:-1]])
            wins.append(vals.reshape(wl, N_FEATURES))
            tgts.append(float(row[-1]))
    return SampleSet(np.stack(wins), np.array(tgts), np.array(eps))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """LSTM architecture and optimizer settings.

    The published configuration uses 400 units per layer; the desk-scale
    default of 32 trains in seconds and is what the tests exercise.
    """

    units: int = 32
    n_layers: int = 2
    epochs: int = 40
    lr: float = 1e-4
    lr_decay: float = 1.0  # per-epoch multiplicative decay
    batch: int = 64
    seed: int = 0
    clip_norm: float = 5.0
    val_frac: float = 0.10
    test_frac: float = 0.10


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params}
        self.v = {k: np.zeros_like(v) for k, v in params}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for name, value in params:
            g = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / (1 - self.b1 ** self.t)
            vhat = self.v[name] / (1 - self.b2 ** self.t)
            value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _split_by_episode(samples: SampleSet, cfg: TrainConfig, rng):
    """80/10/10 train/val/test split on whole episodes (windows from one
    episode are correlated, so they stay together)."""
    eps = np.unique(samples.episodes)
    rng.shuffle(eps)
    n = eps.size
    n_test = max(int(round(cfg.test_frac * n)), 1) if n >= 3 else 0
    n_val = max(int(round(cfg.val_frac * n)), 1) if n >= 3 else 0
    test_eps = set(eps[:n_test].tolist())
    val_eps = set(eps[n_test:n_test + n_val].tolist())
    idx = np.arange(len(samples))
    in_val = np.isin(samples.episodes, list(val_eps))
    in_test = np.isin(samples.episodes, list(test_eps))
    return idx[~(in_val | in_test)], idx[in_val], idx[in_test]


def _clip_grads(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def train(samples: SampleSet, cfg: TrainConfig) -> SurrogateModel:
    """Fit the surrogate by Adam on mean squared error.

    Features and target are z-scored with statistics from the training
    split; the returned weights are the ones with the best validation loss
    (the final weights when no validation split exists).
    """
    if len(samples) == 0:
        raise ValueError("empty sample set")
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx, _ = _split_by_episode(samples, cfg, rng)
    if train_idx.size == 0:
        raise ValueError("no training episodes after the split")

    x_train = samples.windows[train_idx]
    feat_mean = x_train.reshape(-1, N_FEATURES).mean(axis=0)
    feat_std = x_train.reshape(-1, N_FEATURES).std(axis=0)
    feat_std = np.where(feat_std < 1e-6, 1.0, feat_std)
    t_mean = float(samples.targets[train_idx].mean())
    t_std = float(samples.targets[train_idx].std())
    if t_std < 1e-9:
        t_std = 1.0

    weights = init_weights(cfg.units, cfg.n_layers, rng)
    model = SurrogateModel(weights, feat_mean, feat_std, t_mean, t_std,
                           seq_len=samples.window_len - 1)

    x_all = model.standardize(samples.windows)
    y_all = (samples.targets - t_mean) / t_std
    opt = _Adam(list(weights.items()), cfg.lr)
    best_val = np.inf
    best_weights = weights.copy()

    def loss_on(idx):
        if idx.size == 0:
            return np.nan
        preds, _ = _forward_std(weights, x_all[idx])
        return float(np.mean((preds - y_all[idx]) ** 2))

    model.history = {"train": [], "val": []}
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.lr_decay ** epoch
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        for start in range(0, order.size, cfg.batch):
            batch = order[start:start + cfg.batch]
            preds, caches = _forward_std(weights, x_all[batch])
            err = preds - y_all[batch]
            loss = float(np.mean(err ** 2))
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}")
            grads, _ = _backward_std(weights, caches, 2.0 * err / batch.size)
            _clip_grads(grads, cfg.clip_norm)
            opt.step(list(weights.items()), grads)
            epoch_loss += loss * batch.size
        model.history["train"].append(epoch_loss / order.size)
        val = loss_on(val_idx)
        model.history["val"].append(val)
        if np.isfinite(val) and val < best_val:
            best_val = val
            best_weights = weights.copy()
    if val_idx.size and np.isfinite(best_val) and cfg.epochs > 0:
        model.weights = best_weights
    return model


# ---------------------------------------------------------------------------
# recursive rollout
# ---------------------------------------------------------------------------

def rollout(model: SurrogateModel, history: np.ndarray, y0: float,
            forcing: np.ndarray) -> np.ndarray:
    """Recursive multi-day prediction.

    ``history`` is (seq_len, 5): the last ``seq_len`` complete daily
    records. ``y0`` is today's measured moisture and ``forcing`` is
    (horizon, 4): per-day ``[water, kc, et0, z_r]`` starting today. Each
    prediction feeds the next window's moisture slot; returns the
    (horizon,) predicted moisture for days 1..horizon ahead.
    """
    preds = rollout_batch(model, history, y0, np.asarray(forcing, float)[None])
    return preds[0]


def rollout_batch(model: SurrogateModel, history: np.ndarray, y0: float,
                  forcing: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rollout` over a batch of forcing trajectories
    (B, horizon, 4) sharing one initial window."""
    history = np.asarray(history, dtype=float)
    forcing = np.asarray(forcing, dtype=float)
    if history.shape != (model.seq_len, N_FEATURES):
        raise ValueError(f"history must be ({model.seq_len}, {N_FEATURES})")
    b, horizon, _ = forcing.shape
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    window = np.broadcast_to(history, (b,) + history.shape).copy()
    current = np.concatenate(
        [np.full((b, 1), float(y0)), forcing[:, 0, :]], axis=1)
    preds = np.empty((b, horizon))
    for k in range(horizon):
        full = np.concatenate([window, current[:, None, :]], axis=1)
        y = forward(model, full)
        preds[:, k] = y
        if k + 1 < horizon:
            window = full[:, 1:, :]
            current = np.concatenate([y[:, None], forcing[:, k + 1, :]], axis=1)
    return preds


def rollout_caches(model: SurrogateModel, history, y0, forcing):
    """Forward rollout (single trajectory) keeping per-step windows and
    predictions; used by the scheduler's reverse-mode gradient."""
    history = np.asarray(history, dtype=float)
    forcing = np.asarray(forcing, dtype=float)
    horizon = forcing.shape[0]
    window = history.copy()
    current = np.concatenate([[float(y0)], forcing[0]])
    preds = np.empty(horizon)
    step_windows = []
    for k in range(horizon):
        full = np.vstack([window, current])
        step_windows.append(full)
        preds[k] = forward(model, full)
        if k + 1 < horizon:
            window = full[1:]
            current = np.concatenate([[preds[k]], forcing[k + 1]])
    return preds, step_windows


def rollout_water_gradient(model: SurrogateModel, step_windows,
                           dj_dy: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_k dj_dy[k] * y_k`` w.r.t. each day's water input.

    ``step_windows`` comes from :func:`rollout_caches`; the chain rule runs
    backward through the recursive structure, so upstream water affects
    every later prediction it feeds.
    """
    horizon = len(step_windows)
    wl = model.window_len
    g_y = np.array(dj_dy, dtype=float)  # accumulated dJ/dy_k, k = 1..horizon
    g_water = np.zeros(horizon)
    for t in range(horizon - 1, -1, -1):
        seed = g_y[t]
        if seed == 0.0:
            continue
        grad = input_gradient(model, step_windows[t]) * seed
        # window rows r = 0..wl-1 correspond to days t - seq_len + r
        for r in range(wl):
            day = t - model.seq_len + r
            if 0 <= day < horizon:
                g_water[day] += grad[r, WATER]
            if 1 <= day <= horizon - 1:
                # moisture slot of day `day` holds prediction y_day
                g_y[day - 1] += grad[r, MOISTURE]
    return g_water


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def rmse(y, yhat) -> float:
    """Root mean squared error."""
    y = np.asarray(y, float)
    yhat = np.asarray(yhat, float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("series must be nonempty and aligned")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def r2(y, yhat) -> float:
    """Coefficient of determination; undefined for a constant series."""
    y = np.asarray(y, float)
    yhat = np.asarray(yhat, float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("series must be nonempty and aligned")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r2 is undefined for a constant series")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(model: SurrogateModel, path) -> None:
    """Versioned binary checkpoint (npz) with scalers and architecture."""
    arrays = {name.replace(".", "__"): np.asarray(arr)
              for name, arr in model.weights.items()}
    meta = {
        "format_version": 1,
        "n_layers": len(model.weights.layers),
        "units": model.weights.units,
        "seq_len": model.seq_len,
        "target_mean": model.target_mean,
        "target_std": model.target_std,
    }
    np.savez(path, __meta__=json.dumps(meta),
             feat_mean=model.feat_mean, feat_std=model.feat_std, **arrays)


def load_model(path) -> SurrogateModel:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["__meta__"]))
    if meta.get("format_version") != 1:
        raise ValueError(f"unsupported surrogate format {meta.get('format_version')}")
    layers = []
    for li in range(meta["n_layers"]):
        kw = {}
        for g in LayerWeights.GATES:
            for w in ("w", "u", "b"):
                kw[f"{w}_{g}"] = data[f"layer{li}__{w}_{g}"]
        layers.append(LayerWeights(**kw))
    weights = LstmWeights(layers, data["w_y"], data["b_y"])
    return SurrogateModel(weights, data["feat_mean"], data["feat_std"],
                          float(meta["target_mean"]), float(meta["target_std"]),
                          seq_len=int(meta["seq_len"]))
