"""Cubic fan/pump power model and its regularised fits.

Power follows the affinity law in the normalised speed ``r = f / F_rated``::

    P(f) = P_rated * (t0 + t1 r + t2 r^2 + t3 r^3)
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import DomainError, FitError


@dataclass
class CubicDeviceModel:
    theta: np.ndarray
    p_rated: float
    f_rated: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(4)
        self.p_rated = float(self.p_rated)
        self.f_rated = float(self.f_rated)
        if not (self.p_rated > 0 and self.f_rated > 0):
            raise ValueError("rated power and frequency must be positive")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")

    def to_dict(self):
        return {"theta": self.theta.tolist(), "p_rated": self.p_rated, "f_rated": self.f_rated}

    @classmethod
    def from_dict(cls, d):
        return cls(d["theta"], d["p_rated"], d["f_rated"])


def _check_freq(freq):
    f = np.asarray(freq, dtype=np.float64)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DomainError("frequency must be finite and non-negative")
    return f


def device_power(m: CubicDeviceModel, freq):
    """Power in kW at frequency ``freq`` (Hz); scalar or array."""
    f = _check_freq(freq)
    r = f / m.f_rated
    t0, t1, t2, t3 = m.theta
    p = m.p_rated * (t0 + r * (t1 + r * (t2 + r * t3)))
    return float(p) if np.ndim(freq) == 0 else p


def device_power_deriv(m: CubicDeviceModel, freq):
    """dP/df in kW/Hz."""
    f = _check_freq(freq)
    r = f / m.f_rated
    _, t1, t2, t3 = m.theta
    d = m.p_rated / m.f_rated * (t1 + r * (2.0 * t2 + r * 3.0 * t3))
    return float(d) if np.ndim(freq) == 0 else d


def _design(freq, f_rated):
    r = np.asarray(freq, dtype=np.float64) / f_rated
    return r, np.stack([np.ones_like(r), r, r ** 2, r ** 3], axis=1)


def _validate(freq, power):
    freq = np.asarray(freq, dtype=np.float64).ravel()
    power = np.asarray(power, dtype=np.float64).ravel()
    if freq.shape != power.shape:
        raise FitError("frequency and power arrays differ in length")
    if freq.size < 4:
        raise FitError("need at least 4 samples")
    if np.unique(freq).size < 4:
        raise FitError("need at least 4 distinct frequencies (design is rank deficient)")
    _check_freq(freq)
    return freq, power


def device_objective(theta, freq, power, p_rated, f_rated, l2_gamma=0.0):
    """(1/2m) sum (y - f(x))^2 + gamma ||theta||^2."""
    _, phi = _design(freq, f_rated)
    resid = np.asarray(power) - p_rated * phi @ theta
    return 0.5 * np.mean(resid ** 2) + l2_gamma * float(theta @ theta)


def fit_device_closed_form(freq, power, p_rated, f_rated, l2_gamma=0.0) -> CubicDeviceModel:
    """Ridge normal-equation solve on the basis (1, r, r^2, r^3)."""
    freq, power = _validate(freq, power)
    _, phi = _design(freq, f_rated)
    m = freq.size
    A = (p_rated ** 2 / m) * phi.T @ phi + 2.0 * l2_gamma * np.eye(4)
    b = (p_rated / m) * phi.T @ power
    try:
        theta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular design") from exc
    return CubicDeviceModel(theta, p_rated, f_rated)


def fit_device(freq, power, p_rated, f_rated, l2_gamma=0.0, method="gd",
               lr=None, momentum=None, max_iter=500_000, tol=1e-14) -> CubicDeviceModel:
    """Fit theta by gradient descent (default) or the closed-form ridge solve.

    With ``lr``/``momentum`` unset, the heavy-ball parameters are chosen
    from the extreme eigenvalues of the (constant) Hessian of the objective.
    """
    if method == "closed":
        return fit_device_closed_form(freq, power, p_rated, f_rated, l2_gamma)
    if method != "gd":
        raise ValueError(f"unknown fit method {method!r}")
    freq, power = _validate(freq, power)
    r, phi = _design(freq, f_rated)
    m = freq.size
    hess = (p_rated ** 2 / m) * phi.T @ phi + 2.0 * l2_gamma * np.eye(4)
    eig = np.linalg.eigvalsh(hess)
    lo, hi = eig[0], eig[-1]
    if lo <= 0:
        raise FitError("singular design")
    if lr is None or momentum is None:
        sl, sh = np.sqrt(lo), np.sqrt(hi)
        lr = 4.0 / (sl + sh) ** 2 if lr is None else lr
        momentum = ((sh - sl) / (sh + sl)) ** 2 if momentum is None else momentum
    theta, _ = _accel.gd_cubic(r, power, p_rated, l2_gamma, np.zeros(4), lr, momentum, max_iter, tol)
    if not np.all(np.isfinite(theta)):
        raise FitError("gradient descent diverged")
    return CubicDeviceModel(theta, p_rated, f_rated)


def read_device_csv(path):
    freq, power = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"freq_hz", "power_kw"} <= set(reader.fieldnames):
            raise FitError("device CSV needs columns freq_hz, power_kw")
        for row in reader:
            freq.append(float(row["freq_hz"]))
            power.append(float(row["power_kw"]))
    return np.array(freq), np.array(power)


def write_device_csv(path, freq, power):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "power_kw"])
        for f, p in zip(freq, power):
            w.writerow([repr(float(f)), repr(float(p))])
