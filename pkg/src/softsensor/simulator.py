"""Heat-exchanger + CSTR process with PI control and concept-drift scenarios.

Fresh feed is preheated in a heat exchanger against a hot utility stream and
enters a level-controlled CSTR where the exothermic reaction A -> B runs. The
reactor temperature is held by manipulating the coolant flow through a
jacket, the level by manipulating the outlet flow. Feed flow and the
utility/feed/coolant temperatures are randomly excited and measured; the feed
concentration of A, the jacket heat-transfer coefficient and the catalyst
activity are not measured and carry the drifts.

Units: m, m^3, min, K, kmol/m^3, kJ.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numba
import numpy as np
from scipy.optimize import fsolve
from scipy.signal import lfilter

from .data import Dataset, dataset_csv_text

PLANT_VERSION = "cstr-hx/1"

N_SAMPLES = 700
N_TRAIN = 300

SENSOR_NAMES = (
    "F_feed",  # feed flow
    "F_out",  # reactor outlet flow (level MV)
    "F_cool",  # coolant flow (temperature MV)
    "F_hot",  # hot utility flow
    "T_feed",  # fresh feed temperature
    "T_preheat",  # feed temperature after the exchanger
    "T_hot_in",
    "T_hot_out",
    "T_reactor",
    "T_jacket",
    "T_cool_in",
    "level",
    "P_bottom",  # hydrostatic pressure at the vessel bottom
    "T_reactor_2",  # second, slower thermocouple
    "level_2",  # second level transmitter
    "F_hot_2",  # second hot utility flow meter
    "T_product",  # product line temperature
    "T_hx_shell",  # exchanger shell temperature
    "valve_hot",  # hot utility valve position, %
)
RESPONSE_NAME = "C_B"


@dataclass(frozen=True)
class PlantConfig:
    """Plant constants, controller tunings and excitation settings."""

    version: str = PLANT_VERSION
    area: float = 0.5  # vessel cross-section, m^2
    h_sp: float = 1.0  # level setpoint, m
    T_sp: float = 350.0  # reactor temperature setpoint, K
    F_feed: float = 0.05  # nominal feed flow, m^3/min
    C_A0: float = 2.0  # nominal feed concentration, kmol/m^3
    k0: float = 1.9e5  # 1/min
    E_over_R: float = 5000.0  # K
    dH: float = -5.0e4  # kJ/kmol
    rho_cp: float = 4000.0  # kJ/(m^3 K), process and coolant
    UA: float = 200.0  # jacket, kJ/(min K)
    V_jacket: float = 0.1  # m^3
    UA_hx: float = 250.0  # exchanger, kJ/(min K)
    tau_hx: float = 2.0  # exchanger outlet lag, min
    T_feed: float = 300.0
    T_hot_in: float = 380.0
    F_hot: float = 0.08
    T_cool_in: float = 300.0
    # PI tunings
    Kc_level: float = 0.25  # (m^3/min)/m
    tau_i_level: float = 5.0
    Kc_temp: float = 0.004  # (m^3/min)/K
    tau_i_temp: float = 4.0
    F_out_max: float = 0.15
    F_hot_max: float = 0.15
    F_cool_max: float = 0.1
    # secondary sensor lags, min
    tau_T2: float = 10.0
    tau_level2: float = 0.5
    tau_hot2: float = 0.5
    tau_product: float = 15.0
    tau_shell: float = 1.0
    # sampling and integration
    sample_time: float = 1.0  # min
    substeps: int = 20
    warmup: int = 150
    # excitation of the measured inputs: relative or absolute half-ranges
    exc_feed_rel: float = 0.12
    exc_hot_flow_rel: float = 0.10
    exc_T_feed: float = 5.0
    exc_T_hot_in: float = 5.0
    exc_T_cool_in: float = 3.0
    exc_mean_hold: float = 12.0  # mean hold time of each excitation level, samples
    exc_tau: float = 4.0  # first-order smoothing of the excitation levels, samples
    exc_hot_flow_tau: float = 1.0  # the hot utility valve switches faster
    noise_rel: float = 0.01  # sensor noise std as a fraction of operating range
    noise_seed_reference: int = 20240601


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DriftScenario:
    """A drift in one or more unmeasured (or slowly varying) parameters."""

    id: int
    name: str
    target: str  # "C_A0", "UA", "T_feed", "k0" or "C_A0+UA"
    profile: str  # "none", "step", "ramp", "recurring", "sinusoid"
    onset: int = 0
    magnitude: float = 0.0  # relative (C_A0, UA, k0) or absolute K (T_feed)
    period: int = 0

    def trajectory(self, n: int) -> np.ndarray:
        """Multiplier (or offset for T_feed) per sample; ``0`` means no change."""
        t = np.arange(n, dtype=float)
        out = np.zeros(n)
        on = t >= self.onset
        if self.profile == "none":
            return out
        if self.profile == "step":
            out[on] = self.magnitude
        elif self.profile == "ramp":
            out[on] = self.magnitude * (t[on] - self.onset) / max(n - 1 - self.onset, 1)
        elif self.profile == "recurring":
            phase = ((t[on] - self.onset) // (self.period / 2)).astype(int)
            out[on] = np.where(phase % 2 == 0, self.magnitude, -self.magnitude)
        elif self.profile == "sinusoid":
            out[on] = self.magnitude * np.sin(2 * np.pi * (t[on] - self.onset) / self.period)
        else:
            raise ValueError(f"unknown drift profile {self.profile!r}")
        return out


SCENARIOS = (
    DriftScenario(0, "no drift", "none", "none"),
    DriftScenario(1, "feed concentration step", "C_A0", "step", 350, 0.25),
    DriftScenario(2, "feed concentration ramp", "C_A0", "ramp", 300, 0.35),
    DriftScenario(3, "recurring feed concentration", "C_A0", "recurring", 300, 0.2, period=120),
    DriftScenario(4, "jacket fouling step", "UA", "step", 350, -0.35),
    DriftScenario(5, "jacket fouling ramp", "UA", "ramp", 300, -0.5),
    DriftScenario(6, "seasonal feed temperature", "T_feed", "ramp", 300, 15.0),
    DriftScenario(7, "catalyst activity loss", "k0", "step", 350, -0.35),
    DriftScenario(8, "slow combined oscillation", "C_A0+UA", "sinusoid", 300, 0.2, period=250),
)


def get_scenario(scenario) -> DriftScenario:
    if isinstance(scenario, DriftScenario):
        return scenario
    sid = int(scenario)
    if not 0 <= sid < len(SCENARIOS):
        raise ValueError(f"scenario id must be in 0..{len(SCENARIOS) - 1}, got {sid}")
    return SCENARIOS[sid]


@dataclass(frozen=True)
class SimOutput:
    dataset: Dataset
    scenario: DriftScenario
    seed: int
    clean_values: np.ndarray  # noise-free sensors
    clean_response: np.ndarray
    drift: np.ndarray  # diagnostics only
    n_train: int = N_TRAIN
    meta: dict = field(default_factory=dict)

    @property
    def train_rows(self) -> range:
        return range(0, self.n_train)

    @property
    def test_rows(self) -> range:
        return range(self.n_train, self.dataset.n_samples)


# state layout
_CA, _CB, _T, _TJ, _H, _TPRE, _IT, _IH, _T2, _H2, _F2, _TPROD, _TSHELL = range(13)
_NX = 13
# input layout, held over each sample
_U_FEED, _U_TFEED, _U_THOT, _U_FHOT, _U_TCOOL, _U_CA0, _U_UA, _U_K = range(8)
_NU = 8


def _param_vector(cfg: PlantConfig) -> np.ndarray:
    return np.array([
        cfg.area, cfg.h_sp, cfg.T_sp, cfg.k0, cfg.E_over_R, cfg.dH, cfg.rho_cp,
        cfg.V_jacket, cfg.UA_hx, cfg.tau_hx, cfg.Kc_level, cfg.tau_i_level,
        cfg.Kc_temp, cfg.tau_i_temp, cfg.F_out_max, cfg.F_cool_max, cfg.tau_T2,
        cfg.tau_level2, cfg.tau_hot2, cfg.tau_product, cfg.tau_shell, cfg.F_feed,
        _nominal_cool_flow(cfg), cfg.F_hot_max,
    ])


def _nominal_cool_flow(cfg: PlantConfig) -> float:
    # rough bias; the integrator absorbs the remainder
    return 0.035


@numba.njit(cache=True)
def _controllers(x, par):
    h_sp, T_sp = par[1], par[2]
    Kh, tih, KT, tiT = par[10], par[11], par[12], par[13]
    F_out = par[21] + Kh * ((x[_H] - h_sp) + x[_IH] / tih)
    F_out = min(max(F_out, 0.0), par[14])
    F_cool = par[22] + KT * ((x[_T] - T_sp) + x[_IT] / tiT)
    F_cool = min(max(F_cool, 0.0), par[15])
    return F_out, F_cool


@numba.njit(cache=True)
def _preheat_target(u, par):
    ntu = par[8] / (u[_U_FEED] * par[6])
    eff = 1.0 - np.exp(-ntu)
    return u[_U_TFEED] + eff * (u[_U_THOT] - u[_U_TFEED])


@numba.njit(cache=True)
def _rhs(x, u, par):
    area, h_sp, T_sp, k0, EoR, dH, rcp = par[0], par[1], par[2], par[3], par[4], par[5], par[6]
    Vj, tau_hx = par[7], par[9]
    F_out, F_cool = _controllers(x, par)
    F_in = u[_U_FEED]
    h = max(x[_H], 1e-6)
    V = area * h
    CA = max(x[_CA], 0.0)
    r = k0 * u[_U_K] * np.exp(-EoR / x[_T]) * CA
    UA = u[_U_UA]
    dx = np.empty(_NX)
    dx[_CA] = F_in / V * (u[_U_CA0] - x[_CA]) - r
    dx[_CB] = -F_in / V * x[_CB] + r
    dx[_T] = F_in / V * (x[_TPRE] - x[_T]) + (-dH) * r / rcp - UA * (x[_T] - x[_TJ]) / (rcp * V)
    dx[_TJ] = F_cool / Vj * (u[_U_TCOOL] - x[_TJ]) + UA * (x[_T] - x[_TJ]) / (rcp * Vj)
    dx[_H] = (F_in - F_out) / area
    dx[_TPRE] = (_preheat_target(u, par) - x[_TPRE]) / tau_hx
    dx[_IT] = x[_T] - T_sp
    dx[_IH] = x[_H] - h_sp
    dx[_T2] = (x[_T] - x[_T2]) / par[16]
    dx[_H2] = (x[_H] - x[_H2]) / par[17]
    dx[_F2] = (u[_U_FHOT] - x[_F2]) / par[18]
    dx[_TPROD] = (x[_T] - 1.0 - x[_TPROD]) / par[19]
    T_hot_out = _hot_outlet(x, u, par)
    dx[_TSHELL] = (0.5 * (u[_U_THOT] + T_hot_out) - x[_TSHELL]) / par[20]
    return dx


@numba.njit(cache=True)
def _hot_outlet(x, u, par):
    duty = u[_U_FEED] * par[6] * (x[_TPRE] - u[_U_TFEED])
    return u[_U_THOT] - duty / (u[_U_FHOT] * par[6])


@numba.njit(cache=True)
def _sensors(x, u, par):
    F_out, F_cool = _controllers(x, par)
    z = np.empty(19)
    z[0] = u[_U_FEED]
    z[1] = F_out
    z[2] = F_cool
    z[3] = u[_U_FHOT]
    z[4] = u[_U_TFEED]
    z[5] = x[_TPRE]
    z[6] = u[_U_THOT]
    z[7] = _hot_outlet(x, u, par)
    z[8] = x[_T]
    z[9] = x[_TJ]
    z[10] = u[_U_TCOOL]
    z[11] = x[_H]
    z[12] = 101.325 + 9.81 * x[_H]
    z[13] = x[_T2]
    z[14] = x[_H2]
    z[15] = x[_F2]
    z[16] = x[_TPROD]
    z[17] = x[_TSHELL]
    z[18] = 100.0 * u[_U_FHOT] / par[23]
    return z


@numba.njit(cache=True)
def _integrate(x0, U, par, dt, substeps):
    """RK4 with a zero-order hold on inputs; returns sampled sensors/response.

    ``status`` is -1 on success, else the sample index where the state
    became invalid.
    """
    n = U.shape[0]
    Z = np.empty((n, 19))
    Y = np.empty(n)
    x = x0.copy()
    h = dt / substeps
    for i in range(n):
        u = U[i]
        for _ in range(substeps):
            k1 = _rhs(x, u, par)
            k2 = _rhs(x + 0.5 * h * k1, u, par)
            k3 = _rhs(x + 0.5 * h * k2, u, par)
            k4 = _rhs(x + h * k3, u, par)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        for j in range(_NX):
            if not np.isfinite(x[j]):
                return Z, Y, x, i
        if x[_CA] < -1e-9 or x[_CB] < -1e-9 or x[_H] <= 0.0 or x[_T] <= 0.0:
            return Z, Y, x, i
        Z[i] = _sensors(x, u, par)
        Y[i] = x[_CB]
    return Z, Y, x, -1


def _nominal_inputs(cfg: PlantConfig) -> np.ndarray:
    u = np.empty(_NU)
    u[_U_FEED] = cfg.F_feed
    u[_U_TFEED] = cfg.T_feed
    u[_U_THOT] = cfg.T_hot_in
    u[_U_FHOT] = cfg.F_hot
    u[_U_TCOOL] = cfg.T_cool_in
    u[_U_CA0] = cfg.C_A0
    u[_U_UA] = cfg.UA
    u[_U_K] = 1.0
    return u


def derivatives(state, inputs, cfg: Optional[PlantConfig] = None) -> np.ndarray:
    cfg = cfg or PlantConfig()
    return _rhs(np.asarray(state, float), np.asarray(inputs, float), _param_vector(cfg))


@lru_cache(maxsize=8)
def steady_state(cfg: PlantConfig = PlantConfig()) -> np.ndarray:
    """Operating point at nominal inputs (all derivatives zero)."""
    par = _param_vector(cfg)
    u = _nominal_inputs(cfg)
    # coarse guess from a long integration, then Newton polish
    x = np.array([1.0, 1.0, cfg.T_sp, 330.0, cfg.h_sp, 340.0, 0.0, 0.0,
                  cfg.T_sp, cfg.h_sp, cfg.F_hot, cfg.T_sp - 1.0, 360.0])
    U = np.tile(u, (3000, 1))
    _, _, x, status = _integrate(x, U, par, cfg.sample_time, cfg.substeps)
    if status != -1:
        raise SimulationError("steady-state search diverged")
    x = fsolve(lambda s: _rhs(s, u, par), x, xtol=1e-13)
    x.setflags(write=False)
    return x


def _hold_sequence(rng, n, mean_hold, center, half_range, tau=0.0):
    """Random levels uniform in ``center +- half_range``, held for geometric
    durations and optionally smoothed by a first-order lag of ``tau`` samples."""
    out = np.empty(n)
    i = 0
    level = center
    while i < n:
        hold = int(rng.geometric(1.0 / mean_hold))
        out[i:i + hold] = level
        i += hold
        level = center + rng.uniform(-half_range, half_range)
    if tau > 0:
        a = np.exp(-1.0 / tau)
        out = lfilter([1.0 - a], [1.0, -a], out - center, zi=[0.0])[0] + center
    return out


def _binary_sequence(rng, n, mean_hold, center, half_range, tau=0.0):
    """Two-level random switching signal (identification-style), smoothed."""
    out = np.empty(n)
    i = 0
    sign = 1.0 if rng.random() < 0.5 else -1.0
    while i < n:
        hold = int(rng.geometric(1.0 / mean_hold))
        out[i:i + hold] = center + sign * half_range
        i += hold
        sign = -sign
    if tau > 0:
        a = np.exp(-1.0 / tau)
        out = lfilter([1.0 - a], [1.0, -a], out - center, zi=[out[0] - center])[0] + center
    return out


def _excitations(cfg: PlantConfig, rng, n: int, excite: bool) -> np.ndarray:
    U = np.tile(_nominal_inputs(cfg), (n, 1))
    if not excite:
        return U
    m, tau = cfg.exc_mean_hold, cfg.exc_tau
    U[:, _U_FEED] = _hold_sequence(rng, n, m, cfg.F_feed, cfg.exc_feed_rel * cfg.F_feed, tau)
    U[:, _U_TFEED] = _hold_sequence(rng, n, m, cfg.T_feed, cfg.exc_T_feed, tau)
    U[:, _U_THOT] = _hold_sequence(rng, n, m, cfg.T_hot_in, cfg.exc_T_hot_in, tau)
    U[:, _U_FHOT] = _binary_sequence(rng, n, m, cfg.F_hot, cfg.exc_hot_flow_rel * cfg.F_hot,
                                       cfg.exc_hot_flow_tau)
    U[:, _U_TCOOL] = _hold_sequence(rng, n, m, cfg.T_cool_in, cfg.exc_T_cool_in, tau)
    return U


def _apply_drift(cfg: PlantConfig, U: np.ndarray, sc: DriftScenario, offset: int) -> np.ndarray:
    n_total = U.shape[0]
    traj = np.zeros(n_total)
    traj[offset:] = sc.trajectory(n_total - offset)
    if sc.target == "C_A0":
        U[:, _U_CA0] *= 1.0 + traj
    elif sc.target == "UA":
        U[:, _U_UA] *= 1.0 + traj
    elif sc.target == "k0":
        U[:, _U_K] *= 1.0 + traj
    elif sc.target == "T_feed":
        U[:, _U_TFEED] += traj
    elif sc.target == "C_A0+UA":
        U[:, _U_CA0] *= 1.0 + traj
        U[:, _U_UA] *= 1.0 - 0.5 * traj
    elif sc.target != "none":
        raise ValueError(f"unknown drift target {sc.target!r}")
    return traj[offset:]


def _run(cfg, U, max_halvings=3):
    par = _param_vector(cfg)
    x0 = np.array(steady_state(cfg))
    substeps = cfg.substeps
    for _ in range(max_halvings + 1):
        Z, Y, _, status = _integrate(x0, U, par, cfg.sample_time, substeps)
        if status == -1:
            return Z, Y
        substeps *= 2
    raise SimulationError(
        f"integration failed at sample {status} even with {substeps // 2} substeps"
    )


def simulate_clean(scenario=0, seed: int = 0, cfg: Optional[PlantConfig] = None,
                   n_samples: int = N_SAMPLES, excite: bool = True, drift: bool = True):
    """Noise-free sensors, response and drift trajectory after warm-up."""
    cfg = cfg or PlantConfig()
    sc = get_scenario(scenario)
    rng = np.random.default_rng([int(seed), 0])
    n_total = cfg.warmup + n_samples
    U = _excitations(cfg, rng, n_total, excite)
    traj = _apply_drift(cfg, U, sc if drift else SCENARIOS[0], cfg.warmup)
    Z, Y = _run(cfg, U)
    return Z[cfg.warmup:], Y[cfg.warmup:], traj


@lru_cache(maxsize=8)
def operating_ranges(cfg: PlantConfig = PlantConfig()):
    """Sensor and response ranges of a reference no-drift run."""
    Z, Y, _ = simulate_clean(0, cfg.noise_seed_reference, cfg)
    zr = Z.max(axis=0) - Z.min(axis=0)
    yr = float(Y.max() - Y.min())
    return zr, yr


def simulate(scenario=0, seed: int = 0, cfg: Optional[PlantConfig] = None, *,
             noise: bool = True, excite: bool = True, drift: bool = True,
             n_samples: int = N_SAMPLES) -> SimOutput:
    """Simulate one drift scenario.

    Parameters
    ----------
    scenario : int or DriftScenario
        Scenario id 0..8 (0 = no drift).
    seed : int
        Drives the input excitations and the measurement noise.
    noise, excite, drift : bool
        Switches for measurement noise, input excitation and the drift itself.
    """
    cfg = cfg or PlantConfig()
    sc = get_scenario(scenario)
    Z, Y, traj = simulate_clean(sc, seed, cfg, n_samples, excite, drift)
    values, response = Z.copy(), Y.copy()
    if noise:
        zr, yr = operating_ranges(cfg)
        rng = np.random.default_rng([int(seed), 1])
        values += rng.standard_normal(Z.shape) * (cfg.noise_rel * zr)
        response += rng.standard_normal(Y.shape) * (cfg.noise_rel * yr)
    ds = Dataset(values, response[:, None], SENSOR_NAMES, (RESPONSE_NAME,), cfg.sample_time)
    return SimOutput(ds, sc, int(seed), Z, Y, traj,
                     meta={"plant_version": cfg.version, "noise": noise, "excite": excite,
                           "drift": drift})


def derive_seeds(base_seed: int, n: int) -> list:
    ss = np.random.SeedSequence(int(base_seed))
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in ss.spawn(n)]


def repeat_batch(scenario, n_reps: int = 20, base_seed: int = 0,
                 cfg: Optional[PlantConfig] = None, **kwargs) -> list:
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    return [simulate(scenario, s, cfg, **kwargs) for s in derive_seeds(base_seed, n_reps)]


def preselect_correlated(out: SimOutput, k: int = 10) -> SimOutput:
    """Keep the ``k`` sensors most correlated with the response on the training rows."""
    ds = out.dataset
    if not 1 <= k <= ds.n_vars:
        raise ValueError(f"k must be in 1..{ds.n_vars}, got {k}")
    Z = ds.values[: out.n_train]
    y = ds.targets[: out.n_train, 0]
    Zc = Z - Z.mean(axis=0)
    yc = y - y.mean()
    denom = np.linalg.norm(Zc, axis=0) * np.linalg.norm(yc)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, np.abs(Zc.T @ yc) / denom, 0.0)
    # stable sort on -|r| keeps the lower index first among ties
    chosen = np.sort(np.argsort(-corr, kind="stable")[:k])
    reduced = ds.select_vars(chosen)
    return dataclasses.replace(
        out,
        dataset=reduced,
        clean_values=out.clean_values[:, chosen],
        meta={**out.meta, "preselected": [ds.var_names[i] for i in chosen]},
    )


def csv_text(out: SimOutput, header_lines=()) -> str:
    """The dataset in the CSV schema read by :func:`softsensor.data.load_dataset`."""
    lines = [f"scenario={out.scenario.id}", f"seed={out.seed}",
             f"plant={out.meta.get('plant_version', PLANT_VERSION)}", *header_lines]
    return dataset_csv_text(out.dataset, lines)


def scenario_catalog() -> list:
    return [dataclasses.asdict(s) for s in SCENARIOS]
