"""One-dimensional unsaturated soil-water column (pressure-head form).

The column is the ground truth for everything else in the package: it
provides van Genuchten / Mualem constitutive laws, an implicit (backward
Euler) mass-conservative finite-difference stepper with full Newton
iteration and an analytic tridiagonal Jacobian, a depth-weighted root
water-uptake sink, and the 40/30/20/10 root-zone moisture aggregate.

Conventions
-----------
* depth ``z`` is measured positive downward from the surface (m),
* capillary pressure head ``psi`` is negative in unsaturated soil (m),
* internal units are metres and days; forcing enters in mm/day and is
  converted once at the boundary,
* the downward Darcy flux between nodes is ``K * (1 - dpsi/dz)`` with
  inter-node conductivity taken as the geometric mean.

The stepper advances the mixed (theta-based) form, so column storage is
conserved to the Newton residual tolerance; sealed-boundary steps conserve
mass to well below 1e-6 m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

__all__ = [
    "SoilHydraulicParams",
    "SoilColumnGrid",
    "SoilColumnState",
    "DailyForcing",
    "StressCurve",
    "SoilColumn",
    "ConvergenceFailure",
    "ROOT_EXTRACTION_WEIGHTS",
    "default_grid",
    "vg_moisture",
    "vg_capacity",
    "vg_conductivity",
    "root_zone_moisture",
    "root_uptake_sink",
    "hydrostatic_psi",
]

MM = 1e-3  # mm -> m

#: fraction of transpiration extracted from each quarter of the rooting depth
ROOT_EXTRACTION_WEIGHTS = (0.4, 0.3, 0.2, 0.1)


class ConvergenceFailure(RuntimeError):
    """Newton iteration failed to converge even after step halving."""


@dataclass(frozen=True)
class SoilHydraulicParams:
    """Van Genuchten / Mualem parameter set for one soil."""

    theta_r: float  # residual moisture (m3/m3)
    theta_s: float  # saturated moisture (m3/m3)
    alpha: float    # retention-curve inverse length (1/m)
    n: float        # retention-curve shape (>1)
    k_s: float      # saturated conductivity (m/day)

    def __post_init__(self):
        if not 0.0 <= self.theta_r < self.theta_s <= 1.0:
            raise ValueError(f"need 0 <= theta_r < theta_s <= 1, got "
                             f"{self.theta_r}, {self.theta_s}")
        if self.alpha <= 0.0 or self.k_s <= 0.0:
            raise ValueError("alpha and k_s must be positive")
        if self.n <= 1.0:
            raise ValueError(f"n must exceed 1, got {self.n}")

    @property
    def m(self) -> float:
        return 1.0 - 1.0 / self.n


@dataclass
class SoilColumnGrid:
    """Node positions of the discretized column (surface node at 0)."""

    node_depths: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.node_depths, dtype=float)
        if z.ndim != 1 or z.size < 2:
            raise ValueError("grid needs at least two nodes")
        if z[0] != 0.0:
            raise ValueError("first node must sit at the surface")
        if np.any(np.diff(z) <= 0):
            raise ValueError("node depths must be strictly increasing")
        self.node_depths = z
        # control volume of node i spans the midpoints to its neighbours,
        # clipped to [0, depth]; the volumes tile the column exactly
        mid = 0.5 * (z[:-1] + z[1:])
        self.cv_lo = np.concatenate(([0.0], mid))
        self.cv_hi = np.concatenate((mid, [z[-1]]))
        self.widths = self.cv_hi - self.cv_lo
        self.spacing = np.diff(z)

    @property
    def n_nodes(self) -> int:
        return self.node_depths.size

    @property
    def depth(self) -> float:
        return float(self.node_depths[-1])


def default_grid() -> SoilColumnGrid:
    """1 m column, 31 nodes: 0.025 m spacing to 0.5 m, 0.05 m below."""
    top = np.arange(21) * 0.025
    bottom = 0.5 + np.arange(1, 11) * 0.05
    return SoilColumnGrid(np.concatenate((top, bottom)))


@dataclass
class SoilColumnState:
    """Capillary pressure head at every node, plus a day/step stamp."""

    psi: np.ndarray
    day: int = 0
    step: int = 0

    def copy(self) -> "SoilColumnState":
        return SoilColumnState(self.psi.copy(), self.day, self.step)


@dataclass(frozen=True)
class DailyForcing:
    """One day of boundary forcing (depths in mm/day)."""

    irrigation: float = 0.0
    rain: float = 0.0
    et0: float = 0.0
    kc: float = 0.0
    z_r: float = 0.5
    ev: float = 0.0

    def __post_init__(self):
        if min(self.irrigation, self.rain, self.et0, self.kc, self.ev) < 0:
            raise ValueError("forcing depths and kc must be nonnegative")
        if self.z_r <= 0:
            raise ValueError("rooting depth must be positive")

    @property
    def surface_flux_m(self) -> float:
        """Net downward flux at the surface (m/day)."""
        return (self.irrigation + self.rain - self.ev) * MM

    @property
    def demand_m(self) -> float:
        """Potential transpiration kc*et0 (m/day)."""
        return self.kc * self.et0 * MM


@dataclass(frozen=True)
class StressCurve:
    """Trapezoidal root water-uptake reduction factor over moisture.

    Zero at/below ``theta_wilt``, ramps to 1 at ``theta_low``, stays 1 up to
    ``theta_high``, ramps back to 0 at ``theta_anaer``. Matches
    :func:`irrizone.agronomy.stress_factor` with the target-zone bounds as
    the plateau.
    """

    theta_wilt: float
    theta_low: float
    theta_high: float
    theta_anaer: float

    def __post_init__(self):
        if not (self.theta_wilt <= self.theta_low <= self.theta_high
                < self.theta_anaer):
            raise ValueError("stress breakpoints must be ordered")

    @staticmethod
    def unstressed() -> "StressCurve":
        # plateau covers every physical moisture value
        return StressCurve(-2.0, -1.0, 2.0, 3.0)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.ones_like(theta)
        if self.theta_low > self.theta_wilt:
            rising = (theta - self.theta_wilt) / (self.theta_low - self.theta_wilt)
        else:
            rising = np.where(theta >= self.theta_low, 1.0, 0.0)
        falling = (self.theta_anaer - theta) / (self.theta_anaer - self.theta_high)
        out = np.where(theta < self.theta_low, rising, out)
        out = np.where(theta > self.theta_high, falling, out)
        return np.clip(out, 0.0, 1.0)[()]


# ---------------------------------------------------------------------------
# constitutive laws (numba kernels; the public wrappers vectorize over psi)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _vg_theta_s(psi, tr, ts, al, vn):
    if psi >= 0.0:
        return ts
    m = 1.0 - 1.0 / vn
    e = vn * math.log(-al * psi)
    if e > 500.0:  # (1 + x^n)^-m ~ x^(-n m); avoids overflow deep in the dry end
        return tr + (ts - tr) * math.exp(-m * e)
    return tr + (ts - tr) * (1.0 + math.exp(e)) ** (-m)


@njit(cache=True)
def _vg_capacity_s(psi, tr, ts, al, vn):
    if psi >= 0.0:
        return 0.0
    m = 1.0 - 1.0 / vn
    lnx = math.log(-al * psi)
    e = vn * lnx
    if e > 500.0:
        ln1p = e
    else:
        ln1p = math.log1p(math.exp(e))
    # d(theta)/d(psi) = (ts-tr) * m*n*alpha * x^(n-1) * (1+x^n)^(-(m+1))
    return (ts - tr) * m * vn * al * math.exp((vn - 1.0) * lnx - (m + 1.0) * ln1p)


@njit(cache=True)
def _vg_se_s(psi, al, vn):
    if psi >= 0.0:
        return 1.0
    m = 1.0 - 1.0 / vn
    e = vn * math.log(-al * psi)
    if e > 500.0:
        return math.exp(-m * e)
    return (1.0 + math.exp(e)) ** (-m)


@njit(cache=True)
def _vg_cond_s(psi, al, vn, ks):
    se = _vg_se_s(psi, al, vn)
    if se >= 1.0:
        return ks
    if se < 1e-15:
        return 0.0
    m = 1.0 - 1.0 / vn
    a = 1.0 - (1.0 - se ** (1.0 / m)) ** m
    return ks * math.sqrt(se) * a * a


@njit(cache=True)
def _vg_dcond_dpsi_s(psi, tr, ts, al, vn, ks):
    # chain rule through the effective saturation; zero in the saturated branch
    if psi >= 0.0:
        return 0.0
    se = _vg_se_s(psi, al, vn)
    if se < 1e-12:
        return 0.0
    if se > 1.0 - 1e-12:
        se = 1.0 - 1e-12
    m = 1.0 - 1.0 / vn
    u = se ** (1.0 / m)
    a = 1.0 - (1.0 - u) ** m
    da_dse = (1.0 - u) ** (m - 1.0) * u / se
    dk_dse = ks * (0.5 / math.sqrt(se) * a * a
                   + 2.0 * math.sqrt(se) * a * da_dse)
    dse_dpsi = _vg_capacity_s(psi, tr, ts, al, vn) / (ts - tr)
    return dk_dse * dse_dpsi


@njit(cache=True)
def _rho_s(theta, sw, slo, shi, sv1):
    if theta <= sw:
        return 0.0
    if theta < slo:
        return (theta - sw) / (slo - sw)
    if theta <= shi:
        return 1.0
    if theta < sv1:
        return (sv1 - theta) / (sv1 - shi)
    return 0.0


@njit(cache=True)
def _rho_prime_s(theta, sw, slo, shi, sv1):
    if sw < theta < slo:
        return 1.0 / (slo - sw)
    if shi < theta < sv1:
        return -1.0 / (sv1 - shi)
    return 0.0


def _vectorize_scalar(fn, psi, *args):
    psi_arr = np.asarray(psi, dtype=float)
    out = np.empty(psi_arr.shape)
    flat = psi_arr.ravel()
    oflat = out.ravel()
    for i in range(flat.size):
        oflat[i] = fn(flat[i], *args)
    return out[()] if psi_arr.ndim else float(out)


def vg_moisture(psi, p: SoilHydraulicParams):
    """Volumetric moisture from pressure head (van Genuchten retention)."""
    return _vectorize_scalar(_vg_theta_s, psi, p.theta_r, p.theta_s, p.alpha, p.n)


def vg_capacity(psi, p: SoilHydraulicParams):
    """Capillary capacity d(theta)/d(psi) (1/m), zero at saturation."""
    return _vectorize_scalar(_vg_capacity_s, psi, p.theta_r, p.theta_s,
                             p.alpha, p.n)


def vg_conductivity(psi, p: SoilHydraulicParams):
    """Unsaturated hydraulic conductivity (m/day, Mualem model)."""
    return _vectorize_scalar(_vg_cond_s, psi, p.alpha, p.n, p.k_s)


def hydrostatic_psi(grid: SoilColumnGrid, anchor: float) -> np.ndarray:
    """Pressure-head profile in hydrostatic equilibrium.

    ``anchor`` is the head at the surface; total head is uniform, so
    ``psi`` increases by 1 m per metre of depth.
    """
    return anchor + grid.node_depths


# ---------------------------------------------------------------------------
# root-zone aggregation and uptake distribution
# ---------------------------------------------------------------------------

def _quarter_overlaps(grid: SoilColumnGrid, z_r: float) -> np.ndarray:
    """(4, n_nodes) overlap lengths of node control volumes with each
    quarter of the rooting depth."""
    if z_r > grid.depth + 1e-12:
        raise ValueError(f"rooting depth {z_r} exceeds column depth {grid.depth}")
    edges = np.linspace(0.0, z_r, 5)
    lo = np.maximum(grid.cv_lo[None, :], edges[:-1, None])
    hi = np.minimum(grid.cv_hi[None, :], edges[1:, None])
    return np.maximum(hi - lo, 0.0)


def root_zone_moisture(theta_profile, z_r: float, grid: SoilColumnGrid) -> float:
    """Depth-weighted root-zone moisture: 40/30/20/10 % per quarter.

    Each quarter's contribution is the length-weighted average of the nodal
    moisture over that quarter, so the value is invariant under grid
    refinement of a piecewise-uniform profile.
    """
    theta = np.asarray(theta_profile, dtype=float)
    ov = _quarter_overlaps(grid, z_r)
    quarter_means = ov @ theta / (z_r / 4.0)
    return float(np.dot(ROOT_EXTRACTION_WEIGHTS, quarter_means))


def _sink_potential(grid: SoilColumnGrid, z_r: float, demand_m: float) -> np.ndarray:
    """Unstressed sink density per node (1/day) integrating to ``demand_m``."""
    ov = _quarter_overlaps(grid, z_r)
    weights = np.asarray(ROOT_EXTRACTION_WEIGHTS)
    dens = (weights[:, None] * ov).sum(axis=0) / (z_r / 4.0)
    return demand_m * dens / grid.widths


def root_uptake_sink(state: SoilColumnState, forcing: DailyForcing,
                     p: SoilHydraulicParams, grid: SoilColumnGrid,
                     stress: StressCurve) -> np.ndarray:
    """Per-node water-uptake sink (1/day) for the given state and forcing.

    The potential transpiration ``kc * et0`` is spread over the rooting
    depth with the quarter weights and each node is scaled by the stress
    factor of its current moisture.
    """
    pot = _sink_potential(grid, forcing.z_r, forcing.demand_m)
    theta = vg_moisture(state.psi, p)
    return pot * stress(theta)


# ---------------------------------------------------------------------------
# implicit stepper
# ---------------------------------------------------------------------------

@njit(cache=True)
def _thomas(lower, diag, upper, rhs):
    n = diag.size
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / den
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


@njit(cache=True)
def _residual(psi, theta_old, dt, widths, spacing, tr, ts, al, vn, ks,
              qtop, free_drain, sink_pot, sw, slo, shi, sv1):
    """Discrete mass-balance residual (m/day per node) and its infinity
    norm scaled to a water depth (m); also the realized boundary/sink
    fluxes at this iterate."""
    n = psi.size
    fvec = np.zeros(n)
    sink_total = 0.0
    for i in range(n):
        theta_i = _vg_theta_s(psi[i], tr, ts, al, vn)
        s_i = sink_pot[i] * _rho_s(theta_i, sw, slo, shi, sv1)
        fvec[i] = (theta_i - theta_old[i]) * widths[i] / dt + s_i * widths[i]
        sink_total += s_i * widths[i]
    kprev = _vg_cond_s(psi[0], al, vn, ks)
    for i in range(n - 1):
        knext = _vg_cond_s(psi[i + 1], al, vn, ks)
        kg = math.sqrt(max(kprev, 1e-30) * max(knext, 1e-30))
        q = kg * (1.0 - (psi[i + 1] - psi[i]) / spacing[i])
        fvec[i] += q
        fvec[i + 1] -= q
        kprev = knext
    fvec[0] -= qtop
    bottom_out = 0.0
    if free_drain:
        bottom_out = kprev
        fvec[n - 1] += bottom_out
    err = 0.0
    for i in range(n):
        a = abs(fvec[i]) * dt
        if a > err:
            err = a
    return fvec, err, bottom_out, sink_total


@njit(cache=True)
def _newton_step(psi, psi_old, dt, widths, spacing,
                 tr, ts, al, vn, ks,
                 qtop, free_drain, sink_pot, sw, slo, shi, sv1,
                 tol_m, max_iter):
    """Solve one implicit step in place. Returns (ok, residual, bottom_out,
    sink_total); fluxes are m/day evaluated at the converged state.

    Plain Newton with an analytic tridiagonal Jacobian; a residual-norm
    backtracking line search guards against overshoot across the
    saturation kink at psi = 0.
    """
    n = psi.size
    theta_old = np.empty(n)
    for i in range(n):
        theta_old[i] = _vg_theta_s(psi_old[i], tr, ts, al, vn)

    lower = np.empty(n)
    diag = np.empty(n)
    upper = np.empty(n)
    kcond = np.empty(n)
    kprime = np.empty(n)
    err = 1e300

    for _ in range(max_iter + 1):
        fvec, err, bottom_out, sink_total = _residual(
            psi, theta_old, dt, widths, spacing, tr, ts, al, vn, ks,
            qtop, free_drain, sink_pot, sw, slo, shi, sv1)
        if err <= tol_m:
            return True, err, bottom_out, sink_total
        if not math.isfinite(err):
            return False, err, 0.0, 0.0

        for i in range(n):
            kcond[i] = max(_vg_cond_s(psi[i], al, vn, ks), 1e-30)
            kprime[i] = _vg_dcond_dpsi_s(psi[i], tr, ts, al, vn, ks)
            cap_i = _vg_capacity_s(psi[i], tr, ts, al, vn)
            theta_i = _vg_theta_s(psi[i], tr, ts, al, vn)
            drho = _rho_prime_s(theta_i, sw, slo, shi, sv1)
            diag[i] = cap_i * widths[i] / dt + sink_pot[i] * drho * cap_i * widths[i]
            lower[i] = 0.0
            upper[i] = 0.0

        for i in range(n - 1):
            dz = spacing[i]
            kg = math.sqrt(kcond[i] * kcond[i + 1])
            grad = (psi[i + 1] - psi[i]) / dz
            dq_di = 0.5 * (kg / kcond[i]) * kprime[i] * (1.0 - grad) + kg / dz
            dq_dj = 0.5 * (kg / kcond[i + 1]) * kprime[i + 1] * (1.0 - grad) - kg / dz
            diag[i] += dq_di
            upper[i] += dq_dj
            diag[i + 1] -= dq_dj
            lower[i + 1] -= dq_di
        if free_drain:
            diag[n - 1] += kprime[n - 1]

        delta = _thomas(lower, diag, upper, -fvec)
        lam = 1.0
        accepted = False
        for _ in range(12):
            trial = psi + lam * delta
            _, err_try, _, _ = _residual(
                trial, theta_old, dt, widths, spacing, tr, ts, al, vn, ks,
                qtop, free_drain, sink_pot, sw, slo, shi, sv1)
            if math.isfinite(err_try) and (err_try < err or err_try <= tol_m):
                for i in range(n):
                    psi[i] = trial[i]
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            # tiny damped step; if this stalls the iteration cap triggers
            for i in range(n):
                psi[i] += lam * delta[i]

    return False, err, 0.0, 0.0


@njit(cache=True)
def _advance(psi, dt, widths, spacing, tr, ts, al, vn, ks,
             qtop, free_drain, sink_pot, sw, slo, shi, sv1,
             tol_m, max_iter, max_halvings):
    """One macro step of size dt, halving the substep on Newton failure.

    Returns (ok, residual, top_in_m, bottom_out_m, sink_m).
    """
    base = psi.copy()
    nsub = 1
    for _ in range(max_halvings + 1):
        for i in range(psi.size):
            psi[i] = base[i]
        sub = dt / nsub
        ok = True
        bottom_acc = 0.0
        sink_acc = 0.0
        last_err = 0.0
        for _ in range(nsub):
            psi_old = psi.copy()
            ok, err, bout, stot = _newton_step(
                psi, psi_old, sub, widths, spacing, tr, ts, al, vn, ks,
                qtop, free_drain, sink_pot, sw, slo, shi, sv1, tol_m, max_iter)
            last_err = err
            if not ok:
                break
            bottom_acc += bout * sub
            sink_acc += stot * sub
        if ok:
            return True, last_err, qtop * dt, bottom_acc, sink_acc
        nsub *= 2
    for i in range(psi.size):
        psi[i] = base[i]
    return False, last_err, 0.0, 0.0, 0.0


@njit(cache=True)
def _run_steps(psi, nsteps, dt, widths, spacing, tr, ts, al, vn, ks,
               qtop, free_drain, sink_pot, sw, slo, shi, sv1,
               tol_m, max_iter, max_halvings):
    """Run ``nsteps`` macro steps; returns (steps_done, residual, fluxes)."""
    top = 0.0
    bot = 0.0
    snk = 0.0
    for k in range(nsteps):
        ok, err, t_in, b_out, s_tot = _advance(
            psi, dt, widths, spacing, tr, ts, al, vn, ks, qtop, free_drain,
            sink_pot, sw, slo, shi, sv1, tol_m, max_iter, max_halvings)
        if not ok:
            return k, err, top, bot, snk
        top += t_in
        bot += b_out
        snk += s_tot
    return nsteps, 0.0, top, bot, snk


@dataclass(frozen=True)
class StepFluxes:
    """Water depths (m) moved across the step: surface in, bottom out,
    root uptake out."""

    top_in: float
    bottom_out: float
    sink: float


@dataclass
class SoilColumn:
    """Ground-truth soil-moisture simulator for one management zone.

    Distinct instances are independent; every method is pure given
    (state, forcing, params, rng), so zones may run concurrently.
    """

    params: SoilHydraulicParams
    grid: SoilColumnGrid = field(default_factory=default_grid)
    stress: StressCurve = field(default_factory=StressCurve.unstressed)
    dt: float = 1.0 / 48.0          # day (30 min)
    noise_std: float = 5e-4         # daily head perturbation (m)
    newton_tol: float = 1e-11       # residual infinity-norm (m)
    max_newton: int = 50
    max_halvings: int = 4
    bottom_bc: str = "free_drainage"  # or "no_flux"

    def __post_init__(self):
        if self.bottom_bc not in ("free_drainage", "no_flux"):
            raise ValueError(f"unknown bottom boundary {self.bottom_bc!r}")

    # -- state helpers ------------------------------------------------------

    def hydrostatic_state(self, anchor: float) -> SoilColumnState:
        return SoilColumnState(hydrostatic_psi(self.grid, anchor))

    def theta(self, state: SoilColumnState) -> np.ndarray:
        return vg_moisture(state.psi, self.params)

    def root_zone(self, state: SoilColumnState, z_r: float) -> float:
        return root_zone_moisture(self.theta(state), z_r, self.grid)

    def storage(self, state: SoilColumnState) -> float:
        """Column water storage (m)."""
        return float(np.dot(self.theta(state), self.grid.widths))

    def sink(self, state: SoilColumnState, forcing: DailyForcing) -> np.ndarray:
        return root_uptake_sink(state, forcing, self.params, self.grid, self.stress)

    # -- stepping -----------------------------------------------------------

    def _kernel_args(self, forcing: DailyForcing):
        p = self.params
        sink_pot = _sink_potential(self.grid, forcing.z_r, forcing.demand_m)
        s = self.stress
        return (self.grid.widths, self.grid.spacing,
                p.theta_r, p.theta_s, p.alpha, p.n, p.k_s,
                forcing.surface_flux_m, self.bottom_bc == "free_drainage",
                sink_pot, s.theta_wilt, s.theta_low, s.theta_high, s.theta_anaer,
                self.newton_tol, self.max_newton)

    def step(self, state: SoilColumnState, forcing: DailyForcing,
             dt: float | None = None) -> tuple[SoilColumnState, StepFluxes]:
        """Advance one implicit step (default 30 min) under constant forcing."""
        dt = self.dt if dt is None else float(dt)
        if dt <= 0:
            raise ValueError("dt must be positive")
        psi = state.psi.astype(float).copy()
        ok, err, top, bot, snk = _advance(
            psi, dt, *self._kernel_args(forcing), self.max_halvings)
        if not ok:
            raise ConvergenceFailure(
                f"Newton failed after {self.max_halvings} halvings on day "
                f"{state.day} step {state.step}; residual {err:.3e} m")
        nxt = SoilColumnState(psi, state.day, state.step + 1)
        return nxt, StepFluxes(top, bot, snk)

    def simulate_day(self, state: SoilColumnState, forcing: DailyForcing,
                     rng: np.random.Generator | None = None,
                     ) -> tuple[SoilColumnState, np.ndarray]:
        """Advance one day (48 half-hour steps) and return end-of-day state
        and moisture profile.

        When ``rng`` is given, a zero-mean Gaussian head perturbation
        (std ``noise_std``) is applied once at the end of the day.
        """
        psi = state.psi.astype(float).copy()
        nsteps = int(round(1.0 / self.dt))
        done, err, *_ = _run_steps(psi, nsteps, self.dt,
                                   *self._kernel_args(forcing),
                                   self.max_halvings)
        if done != nsteps:
            raise ConvergenceFailure(
                f"Newton failed on day {state.day} step {done}; "
                f"residual {err:.3e} m")
        if rng is not None and self.noise_std > 0.0:
            psi = psi + rng.normal(0.0, self.noise_std, psi.size)
        nxt = SoilColumnState(psi, state.day + 1, 0)
        return nxt, vg_moisture(psi, self.params)

    # -- initialization from a moisture target ------------------------------

    def state_for_root_zone(self, theta_rz: float, z_r: float,
                            tol: float = 1e-4) -> SoilColumnState:
        """Hydrostatic state whose root-zone moisture matches ``theta_rz``.

        Bisects on the surface anchor head; raises if the request lies
        outside the retention curve's reachable range.
        """
        p = self.params
        if not p.theta_r < theta_rz <= p.theta_s:
            raise ValueError(
                f"target root-zone moisture {theta_rz} outside "
                f"({p.theta_r}, {p.theta_s}]")

        def rz(anchor):
            return root_zone_moisture(
                vg_moisture(hydrostatic_psi(self.grid, anchor), p), z_r, self.grid)

        lo, hi = -1e4, 1.0
        if theta_rz >= rz(hi):  # saturated request
            return self.hydrostatic_state(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if rz(mid) < theta_rz:
                lo = mid
            else:
                hi = mid
            if abs(rz(hi) - theta_rz) <= tol and rz(hi) >= theta_rz:
                break
        return self.hydrostatic_state(hi)
