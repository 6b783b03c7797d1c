"""Synthetic chiller plant with a known monotone ground truth.

Chiller power follows the proportionality relations of the plant
physics::

    P_CH = base + a * T_wb / (r_pump * r_fan) + b * (T_chw_in - T_chw_out) * r_chwp

with frequencies normalised by their rated values.  Tower fan and both
pumps use cubic device models.  Noise is only added by
:func:`generate_dataset`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kvconfig
from .devicefit import CubicDeviceModel, device_power, device_power_deriv
from .errors import ConfigError, ConstructionError, DomainError

STATE_FIELDS = ("T_wb", "T_chw_in", "T_chw_out", "F_chw_pump")
CONTROL_FIELDS = ("F_cow_pump", "F_fan")
POWER_FIELDS = ("P_CH", "P_CT", "P_COWP", "P_CHWP", "P_total")
DATASET_HEADER = ("t",) + STATE_FIELDS + CONTROL_FIELDS + POWER_FIELDS
POLICIES = ("fixed", "explore", "uniform")


@dataclass(frozen=True)
class PlantState:
    T_wb: float
    T_chw_in: float
    T_chw_out: float
    F_chw_pump: float

    def as_array(self):
        return np.array([self.T_wb, self.T_chw_in, self.T_chw_out, self.F_chw_pump])


@dataclass(frozen=True)
class ControlVector:
    F_cow_pump: float
    F_fan: float

    def as_array(self):
        return np.array([self.F_cow_pump, self.F_fan])

    @classmethod
    def from_array(cls, c):
        return cls(float(c[0]), float(c[1]))


@dataclass(frozen=True)
class PlantSample:
    t: int
    state: PlantState
    control: ControlVector
    P_CH: float
    P_CT: float
    P_COWP: float
    P_CHWP: float
    P_total: float

    def row(self):
        s, c = self.state, self.control
        return (self.t, s.T_wb, s.T_chw_in, s.T_chw_out, s.F_chw_pump, c.F_cow_pump, c.F_fan,
                self.P_CH, self.P_CT, self.P_COWP, self.P_CHWP, self.P_total)


def _default_bounds():
    return {
        "T_wb": (10.0, 30.0),
        "T_chw_out": (7.0, 10.0),
        "dT": (3.0, 7.0),
        "F_chw_pump": (30.0, 50.0),
        "F_cow_pump": (30.0, 50.0),
        "F_fan": (30.0, 50.0),
    }


@dataclass
class PlantConfig:
    a: float = 2.0
    b: float = 1.0
    base: float = 50.0
    tower: CubicDeviceModel = field(default_factory=lambda: CubicDeviceModel([0.0, 0.0, 0.0, 1.0], 22.0, 50.0))
    cow_pump: CubicDeviceModel = field(default_factory=lambda: CubicDeviceModel([0.05, 0.0, 0.1, 0.85], 22.0, 50.0))
    chw_pump: CubicDeviceModel = field(default_factory=lambda: CubicDeviceModel([0.05, 0.0, 0.1, 0.85], 15.0, 50.0))
    chiller_f_rated: float = 50.0
    bounds: dict = field(default_factory=_default_bounds)
    noise_sigma: float = 0.5
    seed: int = 0
    setpoint: tuple = (40.0, 40.0)
    explore_delta: tuple = (1.0, 1.0)
    weather_mean: float = 20.0
    weather_amp: float = 8.0
    weather_period: float = 24.0
    weather_jitter: float = 1.0
    validate: bool = True

    def __post_init__(self):
        b = dict(_default_bounds())
        b.update({k: tuple(float(x) for x in v) for k, v in self.bounds.items()})
        self.bounds = b
        for k, (lo, hi) in b.items():
            if not lo <= hi:
                raise ConstructionError(f"bounds for {k} are inverted")
        if self.noise_sigma < 0:
            raise ConstructionError("noise_sigma must be >= 0")
        if not (self.a > 0 and self.b > 0):
            raise ConstructionError("a and b must be positive for a monotone plant")
        if b["T_wb"][0] <= 0:
            raise ConstructionError("T_wb lower bound must be positive")
        if self.t_chw_in_bounds[0] < b["T_chw_out"][1]:
            raise ConstructionError("bounds allow T_chw_in < T_chw_out")
        if self.validate:
            _validate_monotone(self)
            _validate_convex(self)

    @property
    def t_chw_in_bounds(self):
        lo_out, hi_out = self.bounds["T_chw_out"]
        lo_dt, hi_dt = self.bounds["dT"]
        return (lo_out + lo_dt, hi_out + hi_dt)

    @property
    def control_bounds(self):
        """``(2, 2)`` array of [lo, hi] rows in control order (pump, fan)."""
        return np.array([self.bounds["F_cow_pump"], self.bounds["F_fan"]])

    @property
    def chiller_bounds(self):
        """``(6, 2)`` bounds in chiller feature order."""
        b = self.bounds
        return np.array([b["T_wb"], b["T_chw_out"], self.t_chw_in_bounds,
                         b["F_cow_pump"], b["F_fan"], b["F_chw_pump"]])

    # -- key-value document -------------------------------------------------

    def to_kv(self):
        d = {"a": self.a, "b": self.b, "base": self.base, "chiller_f_rated": self.chiller_f_rated,
             "noise_sigma": self.noise_sigma, "seed": self.seed}
        for name in ("tower", "cow_pump", "chw_pump"):
            m = getattr(self, name)
            d[f"{name}.p_rated"] = m.p_rated
            d[f"{name}.f_rated"] = m.f_rated
            d[f"{name}.theta"] = [float(x) for x in m.theta]
        for k, v in self.bounds.items():
            d[f"bounds.{k}"] = list(v)
        d["setpoint"] = list(self.setpoint)
        d["explore_delta"] = list(self.explore_delta)
        d["weather.mean"] = self.weather_mean
        d["weather.amp"] = self.weather_amp
        d["weather.period"] = self.weather_period
        d["weather.jitter"] = self.weather_jitter
        return d

    @classmethod
    def from_kv(cls, d):
        g = kvconfig.get_float
        known = {"a", "b", "base", "chiller_f_rated", "noise_sigma", "seed", "setpoint", "explore_delta",
                 "weather.mean", "weather.amp", "weather.period", "weather.jitter"}
        devices = {}
        defaults = cls(validate=False)
        for name in ("tower", "cow_pump", "chw_pump"):
            dm = getattr(defaults, name)
            keys = {f"{name}.p_rated", f"{name}.f_rated", f"{name}.theta"}
            known |= keys
            devices[name] = CubicDeviceModel(kvconfig.get_floats(d, f"{name}.theta", dm.theta, 4),
                                             g(d, f"{name}.p_rated", dm.p_rated),
                                             g(d, f"{name}.f_rated", dm.f_rated))
        bounds = {}
        for k in _default_bounds():
            known.add(f"bounds.{k}")
            if f"bounds.{k}" in d:
                bounds[k] = tuple(kvconfig.get_floats(d, f"bounds.{k}", n=2))
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown plant config keys: {sorted(unknown)}")
        try:
            return cls(a=g(d, "a", defaults.a), b=g(d, "b", defaults.b), base=g(d, "base", defaults.base),
                       chiller_f_rated=g(d, "chiller_f_rated", defaults.chiller_f_rated),
                       noise_sigma=g(d, "noise_sigma", defaults.noise_sigma),
                       seed=kvconfig.get_int(d, "seed", defaults.seed),
                       setpoint=tuple(kvconfig.get_floats(d, "setpoint", defaults.setpoint, 2)),
                       explore_delta=tuple(kvconfig.get_floats(d, "explore_delta", defaults.explore_delta, 2)),
                       weather_mean=g(d, "weather.mean", defaults.weather_mean),
                       weather_amp=g(d, "weather.amp", defaults.weather_amp),
                       weather_period=g(d, "weather.period", defaults.weather_period),
                       weather_jitter=g(d, "weather.jitter", defaults.weather_jitter),
                       bounds=bounds, **devices)
        except (ValueError, ConstructionError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        return cls.from_kv(kvconfig.read_kv(path))

    def save(self, path):
        kvconfig.write_kv(path, self.to_kv())


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

def chiller_power_arrays(cfg: PlantConfig, T_wb, T_chw_out, T_chw_in, F_cow_pump, F_fan, F_chw_pump):
    """Vectorised noise-free chiller power (arguments in chiller feature order)."""
    fr = cfg.chiller_f_rated
    r_pump = np.asarray(F_cow_pump) / fr
    r_fan = np.asarray(F_fan) / fr
    r_chwp = np.asarray(F_chw_pump) / fr
    return cfg.base + cfg.a * np.asarray(T_wb) / (r_pump * r_fan) + \
        cfg.b * (np.asarray(T_chw_in) - np.asarray(T_chw_out)) * r_chwp


def _in_bounds(cfg, name, v, bounds=None):
    lo, hi = bounds if bounds is not None else cfg.bounds[name]
    v = np.asarray(v)
    if not np.all(np.isfinite(v)) or np.any(v < lo) or np.any(v > hi):
        raise DomainError(f"{name} outside [{lo}, {hi}]")


def check_domain(cfg: PlantConfig, C, S):
    """Raise :class:`DomainError` if controls/states leave the configured box."""
    C = np.atleast_2d(C)
    S = np.atleast_2d(S)
    _in_bounds(cfg, "F_cow_pump", C[:, 0])
    _in_bounds(cfg, "F_fan", C[:, 1])
    _in_bounds(cfg, "T_wb", S[:, 0])
    _in_bounds(cfg, "T_chw_in", S[:, 1], cfg.t_chw_in_bounds)
    _in_bounds(cfg, "T_chw_out", S[:, 2])
    _in_bounds(cfg, "F_chw_pump", S[:, 3])
    if np.any(S[:, 1] < S[:, 2]):
        raise DomainError("T_chw_in must be >= T_chw_out")


def plant_power_arrays(cfg: PlantConfig, C, S, check=True):
    """Component powers for rows of controls ``C (n,2)`` and states ``S (n,4)``.

    Returns an ``(n, 5)`` array ordered P_CH, P_CT, P_COWP, P_CHWP, P_total.
    """
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if check:
        check_domain(cfg, C, S)
    n = max(C.shape[0], S.shape[0])
    C = np.broadcast_to(C, (n, 2))
    S = np.broadcast_to(S, (n, 4))
    p_ch = chiller_power_arrays(cfg, S[:, 0], S[:, 2], S[:, 1], C[:, 0], C[:, 1], S[:, 3])
    p_ct = device_power(cfg.tower, C[:, 1])
    p_cowp = device_power(cfg.cow_pump, C[:, 0])
    p_chwp = device_power(cfg.chw_pump, S[:, 3])
    total = p_ch + p_ct + p_cowp + p_chwp
    return np.stack([p_ch, p_ct, p_cowp, p_chwp, total], axis=1)


def plant_power(cfg: PlantConfig, c: ControlVector, s: PlantState):
    """Noise-free ``(P_CH, P_CT, P_COWP, P_CHWP, P_total)`` in kW."""
    row = plant_power_arrays(cfg, c.as_array(), s.as_array())[0]
    return tuple(float(v) for v in row)


def plant_total_grad(cfg: PlantConfig, C, s):
    """Analytic d(P_total)/d(controls) for controls ``C (n,2)`` at one state."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    s = np.asarray(s.as_array() if isinstance(s, PlantState) else s, dtype=np.float64)
    fr = cfg.chiller_f_rated
    rp, rf = C[:, 0] / fr, C[:, 1] / fr
    core = cfg.a * s[0] / (rp * rf)
    d_pump = -core / rp / fr + device_power_deriv(cfg.cow_pump, C[:, 0])
    d_fan = -core / rf / fr + device_power_deriv(cfg.tower, C[:, 1])
    return np.stack([d_pump, d_fan], axis=1)


def _validate_monotone(cfg, n=5):
    """Grid check that P_CH follows the declared directions (noise free)."""
    from .mnn import CHILLER_SPEC

    axes = [np.linspace(lo, hi, n) for lo, hi in cfg.chiller_bounds]
    grids = np.meshgrid(*axes, indexing="ij")
    p = chiller_power_arrays(cfg, *grids)
    for i, d in enumerate(CHILLER_SPEC.directions):
        diff = np.diff(p, axis=i) * d.sign
        if np.any(diff < 0):
            raise ConstructionError(f"ground truth violates the direction of {CHILLER_SPEC.names[i]}")


def _validate_convex(cfg, n=20):
    """Midpoint convexity of P_total over the control box at extreme states."""
    cb = cfg.control_bounds
    g0, g1 = np.meshgrid(np.linspace(*cb[0], n), np.linspace(*cb[1], n), indexing="ij")
    C = np.stack([g0.ravel(), g1.ravel()], axis=1)
    mid = 0.5 * (C[:, None, :] + C[None, :, :])
    b = cfg.bounds
    for twb in b["T_wb"]:
        for fchw in b["F_chw_pump"]:
            s = np.array([twb, cfg.t_chw_in_bounds[1], b["T_chw_out"][0], fchw])
            f = plant_power_arrays(cfg, C, s, check=False)[:, 4]
            fm = plant_power_arrays(cfg, mid.reshape(-1, 2), s, check=False)[:, 4].reshape(len(C), len(C))
            if np.any(fm > 0.5 * (f[:, None] + f[None, :]) + 1e-9 * np.abs(f).max()):
                raise ConstructionError("ground-truth total power is not convex in the controls")


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------

def explore_control(c, bounds, delta, seed=None):
    """One cold-start exploration move: uniform jitter, clamped to the box."""
    rng = seed if hasattr(seed, "uniform") else np.random.default_rng(seed)
    c = np.asarray(c.as_array() if isinstance(c, ControlVector) else c, dtype=np.float64)
    bounds = np.asarray(bounds, dtype=np.float64)
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), c.shape)
    if np.any(delta < 0):
        raise ValueError("delta must be >= 0")
    u = rng.uniform(-delta, delta)
    return np.maximum(bounds[:, 0], np.minimum(bounds[:, 1], c + u))


def sample_states(cfg: PlantConfig, n, rng, t0=0):
    """Weather/load process: daily T_wb sinusoid plus jitter, uniform load."""
    b = cfg.bounds
    t = np.arange(t0, t0 + n)
    twb = cfg.weather_mean + cfg.weather_amp * np.sin(2 * np.pi * t / cfg.weather_period)
    twb = np.clip(twb + rng.normal(0.0, cfg.weather_jitter, n), *b["T_wb"])
    t_out = rng.uniform(*b["T_chw_out"], n)
    t_in = t_out + rng.uniform(*b["dT"], n)
    fchw = rng.uniform(*b["F_chw_pump"], n)
    return np.stack([twb, t_in, t_out, fchw], axis=1)


def generate_dataset(cfg: PlantConfig, policy="explore", n=1000, seed=None, noise_sigma=None):
    """Simulate ``n`` observations under a control policy; deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    policy = policy.lower()
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}; choose from {POLICIES}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    sigma = cfg.noise_sigma if noise_sigma is None else noise_sigma
    S = sample_states(cfg, n, rng)
    cb = cfg.control_bounds
    if policy == "fixed":
        C = np.tile(np.clip(cfg.setpoint, cb[:, 0], cb[:, 1]), (n, 1))
    elif policy == "uniform":
        C = rng.uniform(cb[:, 0], cb[:, 1], size=(n, 2))
    else:
        C = np.empty((n, 2))
        c = np.clip(np.asarray(cfg.setpoint, dtype=np.float64), cb[:, 0], cb[:, 1])
        for i in range(n):
            C[i] = c
            c = explore_control(c, cb, cfg.explore_delta, rng)
    P = plant_power_arrays(cfg, C, S)
    comps = P[:, :4] + (rng.normal(0.0, sigma, size=(n, 4)) if sigma > 0 else 0.0)
    return [
        PlantSample(i, PlantState(*map(float, S[i])), ControlVector(*map(float, C[i])),
                    float(comps[i, 0]), float(comps[i, 1]), float(comps[i, 2]), float(comps[i, 3]),
                    float(comps[i, 0] + comps[i, 1] + comps[i, 2] + comps[i, 3]))
        for i in range(n)
    ]


def dataset_arrays(samples):
    """Column arrays keyed by the dataset header names."""
    rows = np.array([s.row() for s in samples], dtype=np.float64)
    return {name: rows[:, j] for j, name in enumerate(DATASET_HEADER)}


def chiller_xy(samples):
    """Raw chiller inputs (order of ``CHILLER_FEATURES``) and P_CH targets."""
    cols = samples if isinstance(samples, dict) else dataset_arrays(samples)
    X = np.stack([cols["T_wb"], cols["T_chw_out"], cols["T_chw_in"],
                  cols["F_cow_pump"], cols["F_fan"], cols["F_chw_pump"]], axis=1)
    return X, cols["P_CH"]


def chiller_inputs(C, s):
    """Raw chiller inputs for control rows ``C (n,2)`` at one state (or rows ``S``)."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    S = np.asarray(s.as_array() if isinstance(s, PlantState) else s, dtype=np.float64)
    S = np.broadcast_to(np.atleast_2d(S), (C.shape[0], 4))
    return np.stack([S[:, 0], S[:, 2], S[:, 1], C[:, 0], C[:, 1], S[:, 3]], axis=1)


def states_from_samples(samples):
    return [s.state for s in samples]


def write_dataset_csv(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for s in samples:
            r = s.row()
            w.writerow([str(r[0])] + [repr(float(v)) for v in r[1:]])


def read_dataset_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:len(DATASET_HEADER)]) != DATASET_HEADER:
            raise ConfigError(f"{path}: dataset header must start with {','.join(DATASET_HEADER)}")
        out = []
        for row in reader:
            v = [float(x) for x in row[:len(DATASET_HEADER)]]
            out.append(PlantSample(int(v[0]), PlantState(*v[1:5]), ControlVector(*v[5:7]), *v[7:12]))
    return out
