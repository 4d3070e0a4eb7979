import numpy as np
import pytest

from irrizone.agronomy import target_bounds
from irrizone.mpc import Forecast, MpcParams
from irrizone.ppo import (
    PolicyParams,
    PpoHyper,
    ZoneEnv,
    _policy_loss_and_grads,
    evaluate_sequence,
    gae,
    init_policy,
    load_policy,
    policy_act,
    ppo_update,
    reward,
    save_policy,
    save_reward_curve,
    train_agent,
)
from irrizone.soil import SoilColumn, SoilHydraulicParams, StressCurve
from irrizone.surrogate import ForcingRanges

TZ = target_bounds(0.280, 0.120, 0.40)
COSTS = MpcParams(tz=TZ, horizon=14)
LOAM = SoilHydraulicParams(0.078, 0.43, 3.6, 1.56, 0.2496)


def make_policy(obs_dim=6, hidden=8, seed=0, randomize=True):
    rng = np.random.default_rng(seed)
    params = init_policy(obs_dim, hidden, rng, COSTS.u_min, COSTS.u_max)
    if randomize:
        for _, arr in params.items():
            arr[...] = rng.normal(0.0, 0.3, arr.shape)
        params.log_std[...] = -0.3
    return params


class TestReward:
    def test_in_zone_no_action_is_exactly_zero(self):
        for theta in (TZ.lower, 0.25, TZ.upper):
            assert reward(theta, 0, 0.0, COSTS) == 0.0

    def test_linear_penalty_below_band(self):
        assert reward(0.19, 0, 0.0, COSTS) == pytest.approx(-520000.0, rel=1e-9)

    def test_action_charges(self):
        assert reward(0.25, 1, 10.0, COSTS) == pytest.approx(-91000.0)

    def test_linear_penalty_above_band(self):
        assert reward(0.30, 0, 0.0, COSTS) == pytest.approx(-2.2e7 * 0.02, rel=1e-9)


class TestGae:
    def test_lambda_zero_gives_one_step_deltas(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=10)
        v = rng.normal(size=10)
        adv, ret = gae(r, v, bootstrap_value=0.3, gamma=0.95, lam=0.0)
        nxt = np.concatenate([v[1:], [0.3]])
        np.testing.assert_allclose(adv, r + 0.95 * nxt - v, atol=1e-12)
        np.testing.assert_allclose(ret, adv + v, atol=1e-12)

    def test_single_step_unit_reward(self):
        adv, ret = gae([1.0], [0.0], 0.0, gamma=0.99, lam=0.97)
        assert adv[0] == pytest.approx(1.0)
        assert ret[0] == pytest.approx(1.0)

    def test_all_zero_inputs(self):
        adv, ret = gae(np.zeros(7), np.zeros(7), 0.0, 0.99, 0.97)
        assert np.all(adv == 0.0) and np.all(ret == 0.0)

    def test_matches_double_sum_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(2, 15))
            r = rng.normal(size=n)
            v = rng.normal(size=n)
            boot = float(rng.normal())
            gamma = float(rng.uniform(0.8, 1.0))
            lam = float(rng.uniform(0.0, 1.0))
            adv, _ = gae(r, v, boot, gamma, lam)
            v_ext = np.concatenate([v, [boot]])
            delta = r + gamma * v_ext[1:] - v
            brute = np.array([
                sum((gamma * lam) ** k * delta[t + k] for k in range(n - t))
                for t in range(n)])
            np.testing.assert_allclose(adv, brute, atol=1e-10)

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            gae([1.0, 2.0], [0.0], 0.0, 0.99, 0.97)


class TestPolicyAct:
    def test_deterministic_mode_is_repeatable(self):
        params = make_policy()
        obs = np.random.default_rng(2).normal(size=6)
        a = policy_act(params, obs, deterministic=True)
        b = policy_act(params, obs, deterministic=True)
        assert a == b

    def test_sampled_rate_respects_box_and_gating(self):
        params = make_policy(seed=3)
        rng = np.random.default_rng(4)
        obs_rng = np.random.default_rng(5)
        seen = {0: 0, 1: 0}
        for _ in range(200):
            c, u, logp, v, raw = policy_act(params, obs_rng.normal(size=6), rng)
            seen[c] += 1
            if c == 1:
                assert COSTS.u_min <= u <= COSTS.u_max
                assert np.isfinite(raw)
            else:
                assert u == 0.0 and np.isnan(raw)
            assert np.isfinite(logp) and np.isfinite(v)
        assert seen[0] > 0 and seen[1] > 0

    def test_tiny_log_std_collapses_rate_to_head_mean(self):
        params = make_policy(seed=6)
        params.log_std[...] = -40.0  # clipped to the band's floor
        obs = np.random.default_rng(7).normal(size=6)
        det = policy_act(params, obs, deterministic=True)
        rng = np.random.default_rng(8)
        for _ in range(20):
            c, u, *_ = policy_act(params, obs, rng)
            if c == 1 and det[0] == 1:
                # sigma floors at exp(-5); the squash slope is ~(u_max-u_min)/2
                assert u == pytest.approx(det[1], abs=0.5)

    def test_nonfinite_observation_rejected(self):
        params = make_policy()
        with pytest.raises(ValueError):
            policy_act(params, np.array([np.nan] * 6), deterministic=True)


def collect_batch(params, n=48, seed=9):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, params.obs_mean.size))
    batch = {"obs": obs, "c": [], "raw": [], "logp": [], "adv": [], "ret": []}
    for o in obs:
        c, u, logp, v, raw = policy_act(params, o, rng)
        batch["c"].append(c)
        batch["raw"].append(raw)
        batch["logp"].append(logp)
        batch["adv"].append(rng.normal())
        batch["ret"].append(v + rng.normal())
    return {k: np.asarray(v) for k, v in batch.items()}


class TestPpoUpdate:
    def test_no_advantage_no_value_error_no_entropy_leaves_params_unchanged(self):
        params = make_policy(seed=10)
        batch = collect_batch(params)
        # exact value predictions and zero advantages
        x = (batch["obs"] - params.obs_mean) / params.obs_std
        from irrizone.ppo import _heads, _trunk
        _, h2 = _trunk(params, x)
        _, _, values = _heads(params, h2)
        batch["adv"] = np.zeros(len(values))
        batch["ret"] = values
        before = {k: v.copy() for k, v in params.items()}
        hyper = PpoHyper(epochs=3, minibatch=16, entropy_coef=0.0, lr=1e-2)
        ppo_update(params, batch, hyper, rng=np.random.default_rng(0))
        for name, arr in params.items():
            np.testing.assert_array_equal(arr, before[name])

    def test_ratio_clipping_caps_objective(self):
        params = make_policy(seed=11)
        batch = collect_batch(params, n=1, seed=12)
        batch["adv"] = np.array([2.0])
        # shift the stored log-prob so the current ratio is exactly 1.5
        batch["logp"] = batch["logp"] - np.log(1.5)
        hyper = PpoHyper(clip=0.25, entropy_coef=0.0, value_coef=0.0)
        x = (batch["obs"] - params.obs_mean) / params.obs_std
        mb = {"obs_std": x, "c": batch["c"], "raw": batch["raw"],
              "logp": batch["logp"], "adv": batch["adv"], "ret": batch["ret"]}
        loss, grads = _policy_loss_and_grads(params, mb, hyper)
        assert loss == pytest.approx(-1.25 * 2.0)
        # clipped branch active: no gradient flows into the policy heads
        assert np.all(grads["w_logits"] == 0.0)
        assert np.all(grads["w_mu"] == 0.0)

    def test_in_band_ratio_matches_unclipped_gradient(self):
        params = make_policy(seed=13)
        batch = collect_batch(params, n=32, seed=14)
        x = (batch["obs"] - params.obs_mean) / params.obs_std
        mb = {"obs_std": x, "c": batch["c"], "raw": batch["raw"],
              "logp": batch["logp"], "adv": batch["adv"], "ret": batch["ret"]}
        tight = PpoHyper(clip=0.25, entropy_coef=0.0, value_coef=0.0)
        huge = PpoHyper(clip=1e6, entropy_coef=0.0, value_coef=0.0)
        # ratios equal 1 exactly (old log-probs come from the same params)
        _, g_tight = _policy_loss_and_grads(params, mb, tight)
        _, g_huge = _policy_loss_and_grads(params, mb, huge)
        for name in g_tight:
            np.testing.assert_allclose(g_tight[name], g_huge[name], atol=1e-12)

    def test_gradients_match_finite_differences(self):
        params = make_policy(seed=15)
        batch = collect_batch(params, n=24, seed=16)
        batch["logp"] = batch["logp"] + 0.1 * np.random.default_rng(17).normal(
            size=len(batch["logp"]))
        x = (batch["obs"] - params.obs_mean) / params.obs_std
        mb = {"obs_std": x, "c": batch["c"], "raw": batch["raw"],
              "logp": batch["logp"], "adv": batch["adv"], "ret": batch["ret"]}
        hyper = PpoHyper(clip=0.25, entropy_coef=0.01, value_coef=0.5)
        _, grads = _policy_loss_and_grads(params, mb, hyper)
        rng = np.random.default_rng(18)
        probes = 0
        while probes < 100:
            name = rng.choice(list(PolicyParams.NAMES))
            arr = getattr(params, name)
            flat = arr.reshape(-1) if arr.ndim else arr.reshape(1)
            idx = int(rng.integers(flat.size))
            h = 1e-6
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = _policy_loss_and_grads(params, mb, hyper)
            flat[idx] = orig - h
            lm, _ = _policy_loss_and_grads(params, mb, hyper)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = np.asarray(grads[name]).reshape(flat.shape)[idx]
            scale = max(abs(fd), abs(an), 1e-8)
            assert abs(an - fd) / scale < 1e-4, f"{name}[{idx}]: {an} vs {fd}"
            probes += 1


@pytest.fixture(scope="module")
def tiny_env():
    col = SoilColumn(LOAM, stress=StressCurve(0.12, TZ.lower, TZ.upper, 0.40))
    return ZoneEnv(col, COSTS, ForcingRanges(), episode_days=5)


class TestTraining:
    HYPER = PpoHyper(horizon=5, episodes=16, episodes_per_batch=4,
                     minibatch=16, epochs=2, hidden=16, warmup_episodes=2,
                     curve_window=8)

    def test_runs_and_reproduces_with_seed(self, tiny_env):
        p1, c1 = train_agent(tiny_env, self.HYPER, seed=21)
        p2, c2 = train_agent(tiny_env, self.HYPER, seed=21)
        assert c1 == c2
        for (_, a), (_, b) in zip(p1.items(), p2.items()):
            np.testing.assert_array_equal(a, b)

    def test_seed_changes_results(self, tiny_env):
        _, c1 = train_agent(tiny_env, self.HYPER, seed=21)
        _, c2 = train_agent(tiny_env, self.HYPER, seed=22)
        assert c1 != c2

    def test_curve_csv(self, tiny_env, tmp_path):
        _, curve = train_agent(tiny_env, self.HYPER, seed=23)
        path = tmp_path / "curve.csv"
        save_reward_curve(curve, path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "episode_window,mean_reward"
        assert len(rows) == len(curve) + 1


class TestEvaluateSequence:
    def setup_method(self):
        self.col = SoilColumn(LOAM, stress=StressCurve(0.12, TZ.lower, TZ.upper, 0.40))
        self.params = make_policy(obs_dim=self.col.grid.n_nodes + 3, seed=24)
        self.state = self.col.state_for_root_zone(0.24, 0.5)
        n = 6
        self.forecast = Forecast(rain=np.zeros(n), et0=np.full(n, 5.0),
                                 kc=np.full(n, 0.8), z_r=np.full(n, 0.5))

    def test_single_step_equals_policy_act(self):
        c_seq, u_seq = evaluate_sequence(self.params, self.col, self.state,
                                         self.forecast, horizon=1)
        obs = np.concatenate([self.col.theta(self.state), [5.0, 0.8, 0.5]])
        c, u, *_ = policy_act(self.params, obs, deterministic=True)
        assert c_seq[0] == c and u_seq[0] == pytest.approx(u)

    def test_output_shapes_and_gating(self):
        c_seq, u_seq = evaluate_sequence(self.params, self.col, self.state,
                                         self.forecast)
        assert len(c_seq) == len(u_seq) == 6
        assert set(np.unique(c_seq)) <= {0, 1}
        assert np.all(u_seq[c_seq == 0] == 0.0)
        on = u_seq[c_seq == 1]
        assert np.all((on >= COSTS.u_min) & (on <= COSTS.u_max))

    def test_deterministic_and_state_preserving(self):
        psi_before = self.state.psi.copy()
        a = evaluate_sequence(self.params, self.col, self.state, self.forecast)
        b = evaluate_sequence(self.params, self.col, self.state, self.forecast)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(self.state.psi, psi_before)

    def test_bad_horizon_rejected(self):
        with pytest.raises(ValueError):
            evaluate_sequence(self.params, self.col, self.state,
                              self.forecast, horizon=0)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        params = make_policy(seed=25)
        path = tmp_path / "policy.npz"
        save_policy(params, path)
        back = load_policy(path)
        obs = np.random.default_rng(26).normal(size=6)
        assert policy_act(back, obs, deterministic=True) == \
            policy_act(params, obs, deterministic=True)
