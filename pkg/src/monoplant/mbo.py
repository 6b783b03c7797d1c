"""Total-power surrogate and the offline control optimisation step.

Plant power is the sum of a chiller model and three cubic device models.
Controls are the cooling-water pump and tower fan frequencies, in that
order; the state is ``(T_wb, T_chw_in, T_chw_out, F_chw_pump)``.

Any object with ``value(C, s)`` and ``grad(C, s)`` (batched over control
rows ``C`` of shape ``(n, 2)``) can be optimised.  :class:`TotalPowerModel`
is the learned surrogate, :class:`TruePlantSurrogate` wraps the
simulator's noise-free ground truth.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .devicefit import CubicDeviceModel, device_power, device_power_deriv
from .errors import ConfigError, ShapeError, SurrogateError
from .features import ChillerModel
from .mnn import MnnNetwork
from .simulator import PlantConfig, PlantState, chiller_inputs, check_domain, plant_power_arrays, plant_total_grad

METHODS = ("pg", "grid")
POLICY_HEADER = ("state_id", "T_wb", "c_fan", "c_pump", "pred_kw", "true_kw", "oracle_true_kw")


def _state_array(s):
    arr = np.asarray(s.as_array() if isinstance(s, PlantState) else s, dtype=np.float64)
    if arr.shape != (4,):
        raise ShapeError("state must have 4 entries (T_wb, T_chw_in, T_chw_out, F_chw_pump)")
    return arr


def _controls(C):
    C = np.asarray(C.as_array() if hasattr(C, "as_array") else C, dtype=np.float64)
    C2 = np.atleast_2d(C)
    if C2.shape[1] != 2:
        raise ShapeError("controls must have 2 entries (F_cow_pump, F_fan)")
    return C2


@dataclass
class TotalPowerModel:
    """Learned chiller model plus the three fitted device models."""
    chiller: ChillerModel
    tower: CubicDeviceModel
    cow_pump: CubicDeviceModel
    chw_pump: CubicDeviceModel

    def __post_init__(self):
        if isinstance(self.chiller, MnnNetwork):
            self.chiller = ChillerModel(self.chiller, engineered=self.chiller.n_features == 8)

    def components(self, C, s):
        """``(n, 4)`` predictions: P_CH, P_CT, P_COWP, P_CHWP."""
        C = _controls(C)
        S = _state_array(s)
        p_ch = np.atleast_1d(self.chiller.predict(chiller_inputs(C, S)))
        p_ct = device_power(self.tower, C[:, 1])
        p_cowp = device_power(self.cow_pump, C[:, 0])
        p_chwp = np.full(C.shape[0], device_power(self.chw_pump, float(S[3])))
        return np.stack([p_ch, p_ct, p_cowp, p_chwp], axis=1)

    def value(self, C, s):
        return self.components(C, s).sum(axis=1)

    def grad(self, C, s):
        """d(P_total)/d(controls), shape ``(n, 2)``."""
        C = _controls(C)
        X = chiller_inputs(C, _state_array(s))
        _, tr = self.chiller.forward(X)
        gx = np.atleast_2d(self.chiller.backward(tr, np.ones(X.shape[0])).input)
        d_pump = gx[:, 3] + device_power_deriv(self.cow_pump, C[:, 0])
        d_fan = gx[:, 4] + device_power_deriv(self.tower, C[:, 1])
        return np.stack([d_pump, d_fan], axis=1)

    def to_dict(self):
        return {"chiller": self.chiller.to_dict(), "tower": self.tower.to_dict(),
                "cow_pump": self.cow_pump.to_dict(), "chw_pump": self.chw_pump.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(ChillerModel.from_dict(d["chiller"]), CubicDeviceModel.from_dict(d["tower"]),
                   CubicDeviceModel.from_dict(d["cow_pump"]), CubicDeviceModel.from_dict(d["chw_pump"]))


def total_power(m, c, s):
    """Surrogate P_total in kW for one control vector."""
    return float(m.value(_controls(c), s)[0])


class TruePlantSurrogate:
    """Noise-free simulator ground truth behind the surrogate interface."""

    def __init__(self, cfg: PlantConfig):
        self.cfg = cfg

    def value(self, C, s):
        C = _controls(C)
        return plant_power_arrays(self.cfg, C, _state_array(s), check=False)[:, 4]

    def grad(self, C, s):
        return plant_total_grad(self.cfg, _controls(C), _state_array(s))


@dataclass
class OptimizeConfig:
    method: str = "pg"
    restarts: int = 8
    max_iter: int = 500
    lr: float = 1.0
    resolution: int = 101
    bounds: np.ndarray | None = None
    tol: float = 1e-4

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.resolution < 2:
            raise ConfigError("resolution must be >= 2")
        if self.restarts < 1 or self.max_iter < 1:
            raise ConfigError("restarts and max_iter must be >= 1")
        if not self.lr > 0 or not self.tol > 0:
            raise ConfigError("lr and tol must be positive")
        if self.bounds is not None:
            self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 2)
            if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
                raise ConfigError("control bounds are inverted")


@dataclass
class OptimizeResult:
    c: np.ndarray
    f: float
    trace: dict = field(default_factory=dict)


def _finite(v, what):
    if not np.all(np.isfinite(v)):
        raise SurrogateError(f"surrogate returned a non-finite {what}")
    return v


def start_points(bounds, restarts, seed):
    """Box centre first, then Latin-hypercube samples."""
    lo, hi = bounds[:, 0], bounds[:, 1]
    pts = [0.5 * (lo + hi)]
    if restarts > 1:
        lhs = qmc.LatinHypercube(d=2, seed=np.random.default_rng(seed)).random(restarts - 1)
        pts.extend(lo + lhs * (hi - lo))
    return np.array(pts)


def grid_search(m, s, bounds, resolution):
    """Exhaustive argmin on a ``resolution**2`` grid; first index wins ties."""
    a0 = np.linspace(bounds[0, 0], bounds[0, 1], resolution)
    a1 = np.linspace(bounds[1, 0], bounds[1, 1], resolution)
    g0, g1 = np.meshgrid(a0, a1, indexing="ij")
    C = np.stack([g0.ravel(), g1.ravel()], axis=1)
    f = _finite(np.asarray(m.value(C, s), dtype=np.float64), "value")
    k = int(np.argmin(f))
    return C[k].copy(), float(f[k]), f.reshape(resolution, resolution)


def projected_gradient(m, s, bounds, starts, lr=1.0, max_iter=500, tol=1e-4):
    """Batched projected descent with Armijo backtracking, one row per start.

    Every iterate is clamped to the box.  A start stops once its accepted
    move is shorter than ``tol`` (Hz) or no descent step can be found.
    """
    lo, hi = bounds[:, 0], bounds[:, 1]
    C = np.clip(np.asarray(starts, dtype=np.float64), lo, hi)
    f = _finite(np.asarray(m.value(C, s), dtype=np.float64), "value")
    step = np.full(C.shape[0], float(lr))
    active = np.ones(C.shape[0], dtype=bool)
    iters = np.zeros(C.shape[0], dtype=int)
    path = [C.copy()]
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        g = _finite(np.atleast_2d(m.grad(C[idx], s)), "gradient")
        t = step[idx].copy()
        todo = np.ones(idx.size, dtype=bool)
        newC = C[idx].copy()
        newf = f[idx].copy()
        for _ in range(40):
            if not todo.any():
                break
            j = np.flatnonzero(todo)
            cand = np.clip(C[idx[j]] - t[j, None] * g[j], lo, hi)
            fc = _finite(np.asarray(m.value(cand, s), dtype=np.float64), "value")
            dec = np.sum(g[j] * (C[idx[j]] - cand), axis=1)
            ok = fc <= f[idx[j]] - 1e-4 * dec
            newC[j[ok]] = cand[ok]
            newf[j[ok]] = fc[ok]
            todo[j[ok]] = False
            t[j[~ok]] *= 0.5
        moved = np.max(np.abs(newC - C[idx]), axis=1)
        C[idx] = newC
        f[idx] = newf
        iters[idx] += 1
        # failed line searches leave the point in place and stop
        step[idx] = np.where(todo, t, np.minimum(2.0 * t, 16.0 * lr))
        active[idx] = ~todo & (moved >= tol)
        path.append(C.copy())
    return C, f, iters, np.array(path)


def optimize_controls(m, s, cfg: OptimizeConfig | None = None, seed=0, bounds=None) -> OptimizeResult:
    """Minimise the surrogate over the control box at state ``s``."""
    cfg = cfg or OptimizeConfig()
    b = cfg.bounds if cfg.bounds is not None else bounds
    if b is None:
        raise ConfigError("control bounds are required")
    b = np.asarray(b, dtype=np.float64).reshape(2, 2)
    if cfg.method == "grid":
        c, f, _ = grid_search(m, s, b, cfg.resolution)
        return OptimizeResult(c, f, {"method": "grid", "resolution": cfg.resolution})
    starts = start_points(b, cfg.restarts, seed)
    C, f, iters, path = projected_gradient(m, s, b, starts, cfg.lr, cfg.max_iter, cfg.tol)
    k = int(np.argmin(f))
    return OptimizeResult(C[k].copy(), float(f[k]),
                          {"method": "pg", "starts": starts, "finals": C, "values": f,
                           "iters": iters, "path": path[:, k, :]})


def oracle_controls(plant: PlantConfig, s, resolution=101):
    """Best control on the true plant: grid argmin polished by L-BFGS-B."""
    truth = TruePlantSurrogate(plant)
    b = plant.control_bounds
    c0, f0, _ = grid_search(truth, s, b, resolution)
    res = minimize(lambda c: float(truth.value(c, s)[0]), c0, jac=lambda c: truth.grad(c, s)[0],
                   method="L-BFGS-B", bounds=[tuple(r) for r in b], options={"ftol": 1e-15, "gtol": 1e-10})
    c1 = np.clip(res.x, b[:, 0], b[:, 1])
    f1 = float(truth.value(c1, s)[0])
    return (c1, f1) if f1 <= f0 else (c0, f0)


@dataclass
class PolicyRow:
    state_id: int
    T_wb: float
    c_fan: float
    c_pump: float
    pred_kw: float
    true_kw: float
    oracle_true_kw: float

    def row(self):
        return (self.state_id, self.T_wb, self.c_fan, self.c_pump, self.pred_kw, self.true_kw, self.oracle_true_kw)


def evaluate_policy(m, cfg: OptimizeConfig, plant: PlantConfig, states, seed=0, oracle=None):
    """Optimise each state on ``m`` and score the result on the true plant.

    ``oracle`` may pass precomputed oracle costs (one per state).
    """
    states = list(states)
    if not states:
        raise ValueError("states must be nonempty")
    rows = []
    for i, st in enumerate(states):
        S = _state_array(st)
        check_domain(plant, plant.control_bounds.mean(axis=1), S)
        res = optimize_controls(m, S, cfg, seed=seed + i, bounds=plant.control_bounds)
        true_kw = float(plant_power_arrays(plant, res.c, S)[0, 4])
        orc = oracle[i] if oracle is not None else oracle_controls(plant, S, cfg.resolution)[1]
        rows.append(PolicyRow(i, float(S[0]), float(res.c[1]), float(res.c[0]), res.f, true_kw, float(orc)))
    return rows


def write_policy_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POLICY_HEADER)
        for r in rows:
            w.writerow([str(r.state_id)] + [repr(float(v)) for v in r.row()[1:]])


def read_policy_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != POLICY_HEADER:
            raise ConfigError(f"{path}: policy header must be {','.join(POLICY_HEADER)}")
        return [PolicyRow(int(r[0]), *map(float, r[1:])) for r in reader]


def compare_table(methods: dict, bucket_width=1.0):
    """Mean true P_total per method per T_wb bucket.

    ``methods`` maps a name to a list of ``(T_wb, true_kw)`` pairs.  Returns
    ``(header, rows)`` where each row is ``(lo, hi, n..., means...)``.
    """
    if not methods:
        raise ValueError("no methods to compare")
    names = list(methods)
    keys = set()
    per = {}
    for name in names:
        d = {}
        for twb, kw in methods[name]:
            k = int(np.floor(twb / bucket_width))
            d.setdefault(k, []).append(kw)
            keys.add(k)
        per[name] = d
    header = ["T_wb_lo", "T_wb_hi"] + [f"n_{n}" for n in names] + [f"mean_kw_{n}" for n in names]
    rows = []
    for k in sorted(keys):
        counts = [len(per[n].get(k, [])) for n in names]
        means = [float(np.mean(per[n][k])) if per[n].get(k) else float("nan") for n in names]
        rows.append([k * bucket_width, (k + 1) * bucket_width] + counts + means)
    return header, rows
