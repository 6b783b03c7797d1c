"""Model-free online optimisation: local OLS gradients, projected descent,
bounded exploration.

Each step pushes the latest ``(control, P_total)`` observation into a
sliding window, fits an affine model over it, and moves the exploit
iterate against the fitted slope with step ``eta0 / sqrt(t)``.  The move
is projected onto the box and then onto a trust region of half-width
``eps`` around the current iterate.  The commanded control is the
iterate plus rounded, clamped normal noise, which keeps the window's
design matrix well conditioned.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kvconfig
from .errors import ConfigError, DegenerateWindowError
from .simulator import (DATASET_HEADER, ControlVector, PlantConfig, PlantSample, PlantState,
                        plant_power_arrays, plant_total_grad)

DECAYS = ("invsqrt", "constant")
DIAG_COLUMNS = ("g_norm", "e_norm", "eta", "regret")


def _window_arrays(window):
    C, y = [], []
    for item in window:
        if isinstance(item, PlantSample):
            C.append(item.control.as_array())
            y.append(item.P_total)
        else:
            c, v = item
            C.append(np.atleast_1d(np.asarray(c, dtype=np.float64)))
            y.append(float(v))
    return np.array(C, dtype=np.float64), np.array(y, dtype=np.float64)


def ols_fit(window, ridge=1e-8):
    """Affine least squares over the window: ``(slope, intercept, rmse)``.

    The intercept is left unpenalised by centring; ``ridge`` only acts on
    the slope block of the normal equations.
    """
    C, y = _window_arrays(window)
    if C.ndim != 2 or C.shape[0] == 0:
        raise DegenerateWindowError("empty window")
    n, d = C.shape
    if n < d + 1:
        raise DegenerateWindowError(f"window has {n} samples, needs at least {d + 1}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if np.any(np.ptp(C, axis=0) == 0):
        raise DegenerateWindowError("a control column has zero spread")
    cm, ym = C.mean(axis=0), y.mean()
    Cc, yc = C - cm, y - ym
    A = Cc.T @ Cc + ridge * np.eye(d)
    if np.linalg.cond(A) > 1e12:
        raise DegenerateWindowError("window design is singular")
    slope = np.linalg.solve(A, Cc.T @ yc)
    resid = yc - Cc @ slope
    return slope, float(ym - cm @ slope), float(np.sqrt(np.mean(resid ** 2)))


def ols_gradient(window, ridge=1e-8):
    """Slope of the affine fit, used as a (biased) gradient estimate."""
    return ols_fit(window, ridge)[0]


def bounded_discrete_normal(sigma, lo, hi, s_unit, seed=None):
    """N(0, sigma^2) rounded to a multiple of ``s_unit`` and clamped to [lo, hi]."""
    if not lo <= 0 <= hi:
        raise ValueError("need lo <= 0 <= hi")
    if not s_unit > 0:
        raise ValueError("s_unit must be positive")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = seed if hasattr(seed, "normal") else np.random.default_rng(seed)
    z = rng.normal(0.0, sigma) if sigma > 0 else 0.0
    return float(min(max(round(z / s_unit) * s_unit, lo), hi))


@dataclass
class AoiConfig:
    bounds: np.ndarray
    k: int | None = None
    eta0: float | None = None
    decay: str = "invsqrt"
    sigma: float = 1.0
    eps: float = 2.0
    s_unit: float = 0.1
    ridge: float = 1e-8
    seed: int = 0
    xi: float | None = None
    c0: np.ndarray | None = None

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=np.float64))
        if self.bounds.shape[1] != 2 or np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ConfigError("bounds must be rows of [lo, hi] with lo < hi")
        d = self.dim
        if self.k is None:
            self.k = 3 * (d + 1)
        if self.k < d + 1:
            raise ConfigError(f"window k must be >= d+1 = {d + 1}")
        self.decay = self.decay.lower()
        if self.decay not in DECAYS:
            raise ConfigError(f"unknown decay {self.decay!r}; choose from {DECAYS}")
        if self.eta0 is not None and not self.eta0 > 0:
            raise ConfigError("eta0 must be positive")
        # sigma = 0 is accepted to demonstrate the no-exploration failure mode
        if self.sigma < 0 or not self.eps > 0 or not self.s_unit > 0 or self.ridge < 0:
            raise ConfigError("need sigma >= 0, eps > 0, s_unit > 0, ridge >= 0")
        if self.xi is not None and not self.xi > 0:
            raise ConfigError("xi must be positive when set")
        if self.c0 is not None:
            self.c0 = np.asarray(self.c0, dtype=np.float64).reshape(d)
            if np.any(self.c0 < self.bounds[:, 0]) or np.any(self.c0 > self.bounds[:, 1]):
                raise ConfigError("c0 lies outside the bounds")

    @property
    def dim(self):
        return self.bounds.shape[0]

    @property
    def diam(self):
        return float(np.linalg.norm(self.bounds[:, 1] - self.bounds[:, 0]))

    def to_kv(self):
        d = {"bounds.lo": self.bounds[:, 0].tolist(), "bounds.hi": self.bounds[:, 1].tolist(),
             "k": self.k, "decay": self.decay, "sigma": self.sigma, "eps": self.eps,
             "s_unit": self.s_unit, "ridge": self.ridge, "seed": self.seed}
        if self.eta0 is not None:
            d["eta0"] = self.eta0
        if self.xi is not None:
            d["xi"] = self.xi
        if self.c0 is not None:
            d["c0"] = self.c0.tolist()
        return d

    @classmethod
    def from_kv(cls, d, default_bounds=None):
        known = {"bounds.lo", "bounds.hi", "k", "eta0", "decay", "sigma", "eps", "s_unit",
                 "ridge", "seed", "xi", "c0"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown AOI config keys: {sorted(unknown)}")
        if "bounds.lo" in d or default_bounds is None:
            lo = kvconfig.get_floats(d, "bounds.lo")
            hi = kvconfig.get_floats(d, "bounds.hi", n=len(lo))
            bounds = np.column_stack([lo, hi])
        else:
            bounds = default_bounds
        g = kvconfig.get_float
        return cls(bounds=bounds,
                   k=kvconfig.get_int(d, "k") if "k" in d else None,
                   eta0=g(d, "eta0") if "eta0" in d else None,
                   decay=d.get("decay", "invsqrt"),
                   sigma=g(d, "sigma", 1.0), eps=g(d, "eps", 2.0), s_unit=g(d, "s_unit", 0.1),
                   ridge=g(d, "ridge", 1e-8), seed=kvconfig.get_int(d, "seed", 0),
                   xi=g(d, "xi") if "xi" in d else None,
                   c0=kvconfig.get_floats(d, "c0") if "c0" in d else None)

    @classmethod
    def load(cls, path, default_bounds=None):
        return cls.from_kv(kvconfig.read_kv(path), default_bounds)

    def save(self, path):
        kvconfig.write_kv(path, self.to_kv())


@dataclass
class AoiState:
    t: int
    c: np.ndarray  # exploit iterate, always inside the box
    window: deque
    g: np.ndarray | None = None
    G: float = 1.0
    eta: float = 0.0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    descended: bool = False
    flushed: int = 0


def init_state(cfg: AoiConfig, c0=None):
    if c0 is None:
        c0 = cfg.c0 if cfg.c0 is not None else cfg.bounds.mean(axis=1)
    c0 = np.clip(np.asarray(c0, dtype=np.float64).reshape(cfg.dim), cfg.bounds[:, 0], cfg.bounds[:, 1])
    return AoiState(0, c0, deque(maxlen=cfg.k), rng=np.random.default_rng(cfg.seed))


def explore(c, cfg: AoiConfig, rng):
    """Per-dimension bounded noise around ``c`` (steps never leave the box)."""
    lo, hi = cfg.bounds[:, 0], cfg.bounds[:, 1]
    out = c.copy()
    for j in range(c.size):
        left = min(c[j] - lo[j], cfg.eps)
        right = min(hi[j] - c[j], cfg.eps)
        out[j] = c[j] + bounded_discrete_normal(cfg.sigma, -left, right, cfg.s_unit, rng)
    return np.clip(out, lo, hi)


def aoi_step(state: AoiState, cfg: AoiConfig, latest, y=None):
    """Consume one observation, update the iterate, return the next command.

    ``latest`` is a :class:`PlantSample` or a control vector paired with
    the observed objective ``y``.
    """
    if isinstance(latest, PlantSample):
        item = (latest.control.as_array(), latest.P_total)
    else:
        if y is None:
            raise ValueError("y is required with a raw control vector")
        item = (np.atleast_1d(np.asarray(latest, dtype=np.float64)), float(y))
    state.window.append(item)
    state.t += 1
    eta0 = cfg.eta0 if cfg.eta0 is not None else cfg.diam / state.G
    state.eta = eta0 / math.sqrt(state.t) if cfg.decay == "invsqrt" else eta0
    state.descended = False
    state.g = None
    if len(state.window) >= cfg.k:
        try:
            g, _, rmse = ols_fit(state.window, cfg.ridge)
        except DegenerateWindowError:
            g = None
        if g is not None and cfg.xi is not None:
            scale = abs(float(np.mean([v for _, v in state.window])))
            if rmse > cfg.xi * scale:
                # local model is stale: refit from scratch
                state.window.clear()
                state.flushed += 1
                g = None
        if g is not None:
            state.G = max(state.G, float(np.linalg.norm(g)))
            eta0 = cfg.eta0 if cfg.eta0 is not None else cfg.diam / state.G
            state.eta = eta0 / math.sqrt(state.t) if cfg.decay == "invsqrt" else eta0
            c = np.clip(state.c - state.eta * g, cfg.bounds[:, 0], cfg.bounds[:, 1])
            state.c = np.clip(c, state.c - cfg.eps, state.c + cfg.eps)
            state.g = g
            state.descended = True
    return state, explore(state.c, cfg, state.rng)


# ---------------------------------------------------------------------------
# plants
# ---------------------------------------------------------------------------

class QuadraticPlant:
    """``f(c) = scale * ||c - center||^2`` plus Gaussian observation noise."""

    def __init__(self, center=2.0, bounds=((0.0, 4.0),), noise=0.05, scale=1.0):
        self.bounds = np.atleast_2d(np.asarray(bounds, dtype=np.float64))
        self.center = np.broadcast_to(np.asarray(center, dtype=np.float64), (self.bounds.shape[0],)).copy()
        self.noise = float(noise)
        self.scale = float(scale)

    def true_value(self, c):
        c = np.asarray(c, dtype=np.float64)
        return float(self.scale * np.sum((c - self.center) ** 2))

    def true_grad(self, c):
        return 2.0 * self.scale * (np.asarray(c, dtype=np.float64) - self.center)

    def optimum(self):
        c = np.clip(self.center, self.bounds[:, 0], self.bounds[:, 1])
        return c, self.true_value(c)

    def observe(self, t, c, rng):
        y = self.true_value(c) + (rng.normal(0.0, self.noise) if self.noise > 0 else 0.0)
        return (t, np.asarray(c, dtype=np.float64).copy(), float(y))


DEFAULT_STATE = PlantState(T_wb=20.0, T_chw_in=13.5, T_chw_out=8.5, F_chw_pump=40.0)


class ChillerPlant:
    """Simulator at a fixed state; controls are (F_cow_pump, F_fan)."""

    def __init__(self, cfg: PlantConfig | None = None, state: PlantState = DEFAULT_STATE, resolution=101):
        self.cfg = cfg or PlantConfig()
        self.state = state
        self.bounds = self.cfg.control_bounds
        self.resolution = resolution
        self._opt = None

    def true_value(self, c):
        return float(plant_power_arrays(self.cfg, c, self.state.as_array())[0, 4])

    def true_grad(self, c):
        return plant_total_grad(self.cfg, c, self.state)[0]

    def optimum(self):
        if self._opt is None:
            from .mbo import oracle_controls
            self._opt = oracle_controls(self.cfg, self.state, self.resolution)
        return self._opt

    def observe(self, t, c, rng):
        P = plant_power_arrays(self.cfg, c, self.state.as_array())[0, :4]
        if self.cfg.noise_sigma > 0:
            P = P + rng.normal(0.0, self.cfg.noise_sigma, 4)
        return PlantSample(t, self.state, ControlVector.from_array(c), *map(float, P), float(P.sum()))


@dataclass
class AoiDiagnostics:
    g_norm: np.ndarray
    e_norm: np.ndarray
    eta: np.ndarray
    objective: np.ndarray
    regret: np.ndarray
    true_grad: np.ndarray
    iterates: np.ndarray
    f_star: float
    c_star: np.ndarray

    @property
    def avg_regret(self):
        return np.cumsum(self.regret) / np.arange(1, self.regret.size + 1)

    @property
    def final_c(self):
        return self.iterates[-1]


def run_aoi(plant, cfg: AoiConfig, T: int):
    """Closed loop: command, observe, step.  Returns ``(trajectory, diagnostics)``.

    ``plant`` is a :class:`QuadraticPlant`, a :class:`ChillerPlant` or a
    :class:`PlantConfig` (wrapped at the default state).  Row ``t`` of the
    diagnostics describes the step taken after observation ``t``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if isinstance(plant, PlantConfig):
        plant = ChillerPlant(plant)
    if plant.bounds.shape != cfg.bounds.shape:
        raise ConfigError("AOI bounds do not match the plant's control dimension")
    c_star, f_star = plant.optimum()
    obs_rng = np.random.default_rng([cfg.seed, 1])
    state = init_state(cfg)
    cmd = state.c.copy()
    traj = []
    d = cfg.dim
    g_norm, e_norm, eta, obj, reg = (np.full(T, np.nan) for _ in range(5))
    tg = np.zeros((T, d))
    its = np.zeros((T, d))
    for t in range(T):
        rec = plant.observe(t, cmd, obs_rng)
        traj.append(rec)
        f = plant.true_value(cmd)
        obj[t], reg[t] = f, f - f_star
        # bias is measured at the iterate the window is centred on
        grad_true = plant.true_grad(state.c)
        state, nxt = aoi_step(state, cfg, rec) if isinstance(rec, PlantSample) else aoi_step(state, cfg, rec[1], rec[2])
        tg[t] = grad_true
        eta[t] = state.eta
        if state.g is not None:
            g_norm[t] = float(np.linalg.norm(state.g))
            e_norm[t] = float(np.linalg.norm(state.g - grad_true))
        its[t] = state.c
        cmd = nxt
    return traj, AoiDiagnostics(g_norm, e_norm, eta, obj, reg, tg, its, float(f_star), np.asarray(c_star))


def write_trajectory_csv(path, traj, diag: AoiDiagnostics):
    """Dataset schema (or ``t,c0..,y`` for toy plants) plus diagnostic columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        chiller = bool(traj) and isinstance(traj[0], PlantSample)
        if chiller:
            w.writerow(DATASET_HEADER + DIAG_COLUMNS)
        else:
            d = traj[0][1].size if traj else 0
            w.writerow(("t",) + tuple(f"c{j}" for j in range(d)) + ("y",) + DIAG_COLUMNS)
        for i, rec in enumerate(traj):
            if chiller:
                r = rec.row()
                head = [str(r[0])] + [repr(float(v)) for v in r[1:]]
            else:
                head = [str(rec[0])] + [repr(float(v)) for v in rec[1]] + [repr(rec[2])]
            w.writerow(head + [repr(float(diag.g_norm[i])), repr(float(diag.e_norm[i])),
                               repr(float(diag.eta[i])), repr(float(diag.regret[i]))])
