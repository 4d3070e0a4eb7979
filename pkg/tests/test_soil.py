import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irrizone import agronomy
from irrizone.soil import (
    DailyForcing,
    SoilColumn,
    SoilColumnGrid,
    SoilColumnState,
    SoilHydraulicParams,
    StressCurve,
    default_grid,
    hydrostatic_psi,
    root_uptake_sink,
    root_zone_moisture,
    vg_capacity,
    vg_conductivity,
    vg_moisture,
)

LOAM = SoilHydraulicParams(theta_r=0.078, theta_s=0.43, alpha=3.6, n=1.56, k_s=0.2496)
TOY = SoilHydraulicParams(theta_r=0.1, theta_s=0.4, alpha=2.0, n=2.0, k_s=0.5)

params_strategy = st.builds(
    SoilHydraulicParams,
    theta_r=st.floats(0.0, 0.15),
    theta_s=st.floats(0.3, 0.5),
    alpha=st.floats(0.5, 15.0),
    n=st.floats(1.1, 2.6),
    k_s=st.floats(0.01, 2.0),
)


class TestRetention:
    def test_saturated_branch(self):
        assert vg_moisture(0.0, TOY) == TOY.theta_s
        assert vg_moisture(0.5, TOY) == TOY.theta_s

    def test_dry_limit(self):
        assert vg_moisture(-1e9, TOY) == pytest.approx(TOY.theta_r, abs=1e-9)

    def test_hand_value(self):
        # 0.1 + 0.3 * (1/2)^0.5 at psi = -0.5 with alpha=2, n=2
        assert vg_moisture(-0.5, TOY) == pytest.approx(0.31213, abs=1e-4)

    @given(p=params_strategy, psi=st.floats(-1e4, 10.0))
    @settings(max_examples=150, deadline=None)
    def test_bounded(self, p, psi):
        th = vg_moisture(psi, p)
        assert p.theta_r <= th <= p.theta_s

    @given(p=params_strategy,
           psi=st.floats(-200.0, 5.0), dpsi=st.floats(1e-4, 5.0))
    @settings(max_examples=150, deadline=None)
    def test_nondecreasing(self, p, psi, dpsi):
        assert vg_moisture(psi + dpsi, p) >= vg_moisture(psi, p) - 1e-15

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            SoilHydraulicParams(0.5, 0.4, 2.0, 2.0, 0.5)
        with pytest.raises(ValueError):
            SoilHydraulicParams(0.1, 0.4, 2.0, 0.9, 0.5)
        with pytest.raises(ValueError):
            SoilHydraulicParams(0.1, 0.4, -2.0, 2.0, 0.5)


class TestCapacity:
    def test_zero_at_saturation(self):
        assert vg_capacity(0.0, TOY) == 0.0
        assert vg_capacity(2.0, TOY) == 0.0

    def test_zero_in_dry_limit(self):
        assert vg_capacity(-1e9, TOY) == pytest.approx(0.0, abs=1e-12)

    def test_matches_finite_differences(self):
        psi = -np.logspace(np.log10(1e-3), np.log10(50.0), 2000)
        h = 3e-4 * np.abs(psi)
        fd = (vg_moisture(psi + h, LOAM) - vg_moisture(psi - h, LOAM)) / (2 * h)
        an = vg_capacity(psi, LOAM)
        rel = np.abs(an - fd) / np.maximum(np.abs(fd), 1e-300)
        assert np.max(rel) < 1e-6

    @given(p=params_strategy, psi=st.floats(-50.0, -1e-3))
    @settings(max_examples=100, deadline=None)
    def test_matches_finite_differences_random_params(self, p, psi):
        h = 3e-4 * abs(psi)
        fd = (vg_moisture(psi + h, p) - vg_moisture(psi - h, p)) / (2 * h)
        an = vg_capacity(psi, p)
        assert an == pytest.approx(fd, rel=1e-5, abs=1e-12)


class TestConductivity:
    def test_saturated_value(self):
        assert vg_conductivity(0.0, TOY) == TOY.k_s
        assert vg_conductivity(1.0, TOY) == TOY.k_s

    def test_dry_limit(self):
        assert vg_conductivity(-1e8, TOY) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        # Se = 2^-0.5; K = 0.5 * Se^0.5 * (1 - (1 - Se^2)^0.5)^2
        assert vg_conductivity(-0.5, TOY) == pytest.approx(0.03607, abs=2e-4)

    @given(p=params_strategy, psi=st.floats(-100.0, 5.0), dpsi=st.floats(1e-4, 5.0))
    @settings(max_examples=150, deadline=None)
    def test_bounded_and_nondecreasing(self, p, psi, dpsi):
        k0 = vg_conductivity(psi, p)
        k1 = vg_conductivity(psi + dpsi, p)
        assert 0.0 <= k0 <= p.k_s
        assert k1 >= k0 - 1e-15


class TestGrid:
    def test_default_layout(self):
        g = default_grid()
        assert g.n_nodes == 31
        assert g.depth == 1.0
        assert g.node_depths[20] == pytest.approx(0.5)
        np.testing.assert_allclose(np.diff(g.node_depths[:21]), 0.025)
        np.testing.assert_allclose(np.diff(g.node_depths[20:]), 0.05)
        assert g.widths.sum() == pytest.approx(1.0)

    def test_bad_grids_rejected(self):
        with pytest.raises(ValueError):
            SoilColumnGrid(np.array([0.1, 0.2]))
        with pytest.raises(ValueError):
            SoilColumnGrid(np.array([0.0, 0.2, 0.2]))


def aligned_grid():
    """Grid whose control-volume edges land exactly on the quarter edges of
    a 1 m rooting depth."""
    return SoilColumnGrid(np.array(
        [0.0, 0.2, 0.3, 0.45, 0.55, 0.7, 0.8, 0.9, 1.0]))


class TestRootZoneMoisture:
    def test_uniform_profile(self):
        g = default_grid()
        assert root_zone_moisture(np.full(g.n_nodes, 0.25), 1.0, g) == \
            pytest.approx(0.25)
        assert root_zone_moisture(np.full(g.n_nodes, 0.25), 0.5, g) == \
            pytest.approx(0.25)

    def test_hand_weighted_quarters(self):
        g = aligned_grid()
        by_quarter = {0: 0.30, 1: 0.25, 2: 0.20, 3: 0.15}
        centers = 0.5 * (g.cv_lo + g.cv_hi)
        theta = np.array([by_quarter[min(int(c / 0.25), 3)] for c in centers])
        assert root_zone_moisture(theta, 1.0, g) == pytest.approx(0.25)

        by_quarter = {0: 0.28, 1: 0.28, 2: 0.28, 3: 0.12}
        theta = np.array([by_quarter[min(int(c / 0.25), 3)] for c in centers])
        assert root_zone_moisture(theta, 1.0, g) == pytest.approx(0.264)

    def test_refinement_invariance_uniform(self):
        coarse = SoilColumnGrid(np.linspace(0.0, 1.0, 6))
        fine = SoilColumnGrid(np.linspace(0.0, 1.0, 101))
        v1 = root_zone_moisture(np.full(6, 0.31), 1.0, coarse)
        v2 = root_zone_moisture(np.full(101, 0.31), 1.0, fine)
        assert v1 == pytest.approx(v2)

    def test_rooting_depth_beyond_column_rejected(self):
        g = default_grid()
        with pytest.raises(ValueError):
            root_zone_moisture(np.full(g.n_nodes, 0.2), 1.5, g)


class TestRootUptakeSink:
    STRESS = StressCurve(0.12, 0.216, 0.28, 0.40)

    def make(self, anchor=-1.0):
        col = SoilColumn(LOAM, stress=self.STRESS)
        return col, col.hydrostatic_state(anchor)

    def test_zero_demand_gives_zero_sink(self):
        col, st_ = self.make()
        f = DailyForcing(et0=0.0, kc=0.8, z_r=1.0)
        assert np.all(col.sink(st_, f) == 0.0)

    def test_fully_stressed_profile_gives_zero_sink(self):
        col = SoilColumn(LOAM, stress=self.STRESS)
        dry = col.hydrostatic_state(-200.0)  # theta below wilting everywhere
        f = DailyForcing(et0=5.0, kc=0.8, z_r=1.0)
        assert np.all(col.sink(dry, f) == 0.0)

    def test_unstressed_sink_integrates_to_demand(self):
        col = SoilColumn(LOAM, stress=StressCurve.unstressed())
        st_ = col.hydrostatic_state(-1.0)
        f = DailyForcing(et0=5.0, kc=0.8, z_r=1.0)  # 4 mm/day demand
        sink = col.sink(st_, f)
        total = float(np.dot(sink, col.grid.widths))
        assert total == pytest.approx(4e-3, abs=1e-12)

    def test_zero_below_rooting_depth(self):
        col, st_ = self.make()
        f = DailyForcing(et0=5.0, kc=0.8, z_r=0.5)
        sink = root_uptake_sink(st_, f, LOAM, col.grid, StressCurve.unstressed())
        below = col.grid.cv_lo >= 0.5
        assert np.all(sink[below] == 0.0)

    def test_rooting_depth_beyond_column_rejected(self):
        col, st_ = self.make()
        with pytest.raises(ValueError):
            col.sink(st_, DailyForcing(et0=5.0, kc=0.8, z_r=2.0))

    def test_stress_curve_matches_agronomy_factor(self):
        tz = agronomy.target_bounds(0.28, 0.12, 0.40)
        curve = StressCurve(tz.theta_pwp, tz.lower, tz.upper, 0.40)
        theta = np.linspace(0.0, 0.45, 301)
        np.testing.assert_allclose(
            curve(theta), agronomy.stress_factor(theta, tz, 0.40), atol=1e-14)


class TestStep:
    def sealed(self, anchor=-2.0):
        col = SoilColumn(LOAM, bottom_bc="no_flux")
        return col, col.hydrostatic_state(anchor)

    def test_sealed_step_conserves_mass(self):
        col, st_ = self.sealed()
        st_.psi += np.linspace(0.3, -0.3, col.grid.n_nodes)  # off equilibrium
        before = col.storage(st_)
        nxt, fluxes = col.step(st_, DailyForcing())
        assert abs(col.storage(nxt) - before) < 1e-9
        assert fluxes.top_in == 0.0 and fluxes.bottom_out == 0.0

    def test_hydrostatic_profile_is_fixed_point(self):
        col, st_ = self.sealed(-1.5)
        nxt, _ = col.step(st_, DailyForcing())
        np.testing.assert_array_equal(nxt.psi, st_.psi)

    def test_day_of_infiltration_closes_budget(self):
        col = SoilColumn(LOAM)
        state = col.hydrostatic_state(-3.0)
        before = col.storage(state)
        fluxes_total = np.zeros(3)
        f = DailyForcing(irrigation=10.0)
        for _ in range(48):
            state, fl = col.step(state, f)
            fluxes_total += (fl.top_in, fl.bottom_out, fl.sink)
        gained = col.storage(state) - before
        top, bot, sink = fluxes_total
        assert top == pytest.approx(10e-3, abs=1e-15)
        assert sink == 0.0
        # storage gain equals infiltration minus drainage to 1e-4 mm
        assert abs(gained - (top - bot)) < 1e-7

    def test_random_sealed_steps_conserve(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            p = SoilHydraulicParams(
                theta_r=rng.uniform(0.0, 0.12),
                theta_s=rng.uniform(0.35, 0.48),
                alpha=rng.uniform(1.0, 8.0),
                n=rng.uniform(1.2, 2.5),
                k_s=rng.uniform(0.05, 1.0),
            )
            col = SoilColumn(p, bottom_bc="no_flux")
            psi = hydrostatic_psi(col.grid, rng.uniform(-5.0, -0.2))
            psi += rng.normal(0.0, 0.3, psi.size)
            state = SoilColumnState(psi)
            before = col.storage(state)
            nxt, _ = col.step(state, DailyForcing())
            assert abs(col.storage(nxt) - before) < 1e-6

    def test_bad_dt_rejected(self):
        col, st_ = self.sealed()
        with pytest.raises(ValueError):
            col.step(st_, DailyForcing(), dt=0.0)


class TestSimulateDay:
    FORCING = DailyForcing(irrigation=6.0, rain=2.0, et0=5.0, kc=0.8, z_r=0.5)

    def test_zero_noise_is_deterministic(self):
        col = SoilColumn(LOAM, stress=StressCurve(0.12, 0.216, 0.28, 0.40))
        st0 = col.hydrostatic_state(-1.2)
        a, prof_a = col.simulate_day(st0, self.FORCING, rng=None)
        b, prof_b = col.simulate_day(st0, self.FORCING, rng=None)
        np.testing.assert_array_equal(a.psi, b.psi)
        np.testing.assert_array_equal(prof_a, prof_b)

    def test_seeded_noise_is_reproducible(self):
        col = SoilColumn(LOAM)
        st0 = col.hydrostatic_state(-1.2)
        a, _ = col.simulate_day(st0, self.FORCING, rng=np.random.default_rng(11))
        b, _ = col.simulate_day(st0, self.FORCING, rng=np.random.default_rng(11))
        c, _ = col.simulate_day(st0, self.FORCING, rng=np.random.default_rng(12))
        np.testing.assert_array_equal(a.psi, b.psi)
        assert not np.array_equal(a.psi, c.psi)

    def test_profile_stays_in_physical_range(self):
        col = SoilColumn(LOAM)
        state = col.hydrostatic_state(-2.0)
        rng = np.random.default_rng(0)
        for day in range(30):
            f = DailyForcing(irrigation=float(rng.uniform(0, 30)),
                             et0=float(rng.uniform(0, 9)),
                             kc=float(rng.uniform(0.4, 1.02)), z_r=0.5)
            state, prof = col.simulate_day(state, f, rng=rng)
            assert np.all(prof >= LOAM.theta_r) and np.all(prof <= LOAM.theta_s)

    def test_day_counter_advances(self):
        col = SoilColumn(LOAM)
        state = col.hydrostatic_state(-1.0)
        nxt, _ = col.simulate_day(state, self.FORCING)
        assert nxt.day == state.day + 1 and nxt.step == 0


class TestStateForRootZone:
    def test_matches_requested_moisture(self):
        col = SoilColumn(LOAM)
        for target in (0.15, 0.216, 0.25, 0.28):
            for z_r in (0.5, 1.0):
                st_ = col.state_for_root_zone(target, z_r)
                assert col.root_zone(st_, z_r) == pytest.approx(target, abs=1e-4)

    def test_saturated_request(self):
        col = SoilColumn(LOAM)
        st_ = col.state_for_root_zone(LOAM.theta_s, 0.5)
        assert np.all(st_.psi >= 0.0)

    def test_out_of_range_rejected(self):
        col = SoilColumn(LOAM)
        with pytest.raises(ValueError):
            col.state_for_root_zone(LOAM.theta_r, 0.5)
        with pytest.raises(ValueError):
            col.state_for_root_zone(0.5, 0.5)
