"""Chiller feature map and the model wrapper that applies it.

The chiller model always takes the six raw plant features
(``CHILLER_FEATURES`` order).  Optionally two engineered columns are
appended before the network sees them::

    cool_ratio = T_wb / (F_cow_pump * F_fan)
    chw_load   = (T_chw_in - T_chw_out) * F_chw_pump

Each engineered column moves in the declared direction of every raw
feature it combines (for T_chw_in >= T_chw_out and positive
frequencies), so it is declared ``Increase`` and the composite stays
monotone in the raw features.
"""
from __future__ import annotations

import numpy as np

from .mnn import CHILLER_FEATURES, CHILLER_SPEC, Direction, MnnNetwork, MonotonicitySpec
from .netcore import GradientSet

ENGINEERED_NAMES = ("cool_ratio", "chw_load")
ENGINEERED_SPEC = MonotonicitySpec(CHILLER_FEATURES + ENGINEERED_NAMES,
                                   CHILLER_SPEC.directions + (Direction.INCREASE, Direction.INCREASE))


# raw components of each engineered column and the directions that make it Increase
_COMPONENTS = (
    {"T_wb": Direction.INCREASE, "F_cow_pump": Direction.DECREASE, "F_fan": Direction.DECREASE},
    {"T_chw_out": Direction.DECREASE, "T_chw_in": Direction.INCREASE, "F_chw_pump": Direction.INCREASE},
)


def network_spec(engineered=True, base: MonotonicitySpec = CHILLER_SPEC):
    """Directions seen by the network.

    An engineered column stays ``Increase`` only while every raw component
    keeps the direction it was derived from; otherwise it is NonMonotone.
    """
    if not engineered:
        return base
    extra = []
    for comp in _COMPONENTS:
        ok = all(base.directions[base.index(n)] is d for n, d in comp.items())
        extra.append(Direction.INCREASE if ok else Direction.NON_MONOTONE)
    return MonotonicitySpec(base.names + ENGINEERED_NAMES, base.directions + tuple(extra))


def engineered_features(X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    cool = X[:, 0] / (X[:, 3] * X[:, 4])
    chw = (X[:, 2] - X[:, 1]) * X[:, 5]
    out = np.column_stack([X, cool, chw])
    return out[0] if single else out


def engineered_jacobian(X):
    """``(n, 2, 6)`` derivatives of the two engineered columns w.r.t. raw inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    J = np.zeros((n, 2, 6))
    fp, ff = X[:, 3], X[:, 4]
    J[:, 0, 0] = 1.0 / (fp * ff)
    J[:, 0, 3] = -X[:, 0] / (fp ** 2 * ff)
    J[:, 0, 4] = -X[:, 0] / (fp * ff ** 2)
    J[:, 1, 1] = -X[:, 5]
    J[:, 1, 2] = X[:, 5]
    J[:, 1, 5] = X[:, 2] - X[:, 1]
    return J


class ChillerModel:
    """A chiller network plus its feature map, evaluated on raw inputs."""

    def __init__(self, net: MnnNetwork, engineered=True):
        self.net = net
        self.engineered = bool(engineered)
        expected = 8 if self.engineered else 6
        if net.n_features != expected:
            raise ValueError(f"network expects {net.n_features} inputs, feature map gives {expected}")

    @property
    def spec(self):
        """Directions over the raw inputs."""
        return MonotonicitySpec(self.net.spec.names[:6], self.net.spec.directions[:6])

    @property
    def kind(self):
        return self.net.kind

    @property
    def scaling_fitted(self):
        return self.net.scaling_fitted

    @property
    def y_shift(self):
        return self.net.y_shift

    @property
    def y_scale(self):
        return self.net.y_scale

    def transform(self, X):
        return engineered_features(X) if self.engineered else np.asarray(X, dtype=np.float64)

    def fit_scaling(self, X, y):
        self.net.fit_scaling(np.atleast_2d(self.transform(X)), y)
        return self

    def named_layers(self):
        return self.net.named_layers()

    def weight_arrays(self):
        return self.net.weight_arrays()

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        out, tr = self.net.forward(self.transform(X))
        tr["raw"] = X
        return out, tr

    def backward(self, tr, upstream=1.0) -> GradientSet:
        g = self.net.backward(tr, upstream)
        if self.engineered:
            raw = np.atleast_2d(tr["raw"])
            dz = np.atleast_2d(g.input)
            dx = dz[:, :6] + np.einsum("nk,nkj->nj", dz[:, 6:], engineered_jacobian(raw))
            g.input = dx[0] if tr["single"] else dx
        return g

    def predict(self, X):
        return self.forward(X)[0]

    __call__ = predict

    def to_dict(self):
        return {"engineered": self.engineered, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(MnnNetwork.from_dict(d["net"]), d.get("engineered", False))


ARCHITECTURES = ("mlp", "soft-mnn", "hard-mnn", "partial-mnn")


def build_chiller_model(arch="hard-mnn", seed=0, engineered=True, hidden=(16, 16),
                        spec: MonotonicitySpec = CHILLER_SPEC, mnn_arch=None):
    """Fresh chiller model for one of ``ARCHITECTURES``.

    ``mlp`` and ``soft-mnn`` share the unconstrained network; they differ
    only in whether rank losses are used during training.  ``partial-mnn``
    needs at least one NonMonotone entry in ``spec``.
    """
    from .mnn import MnnArchitecture, build_mlp, build_mnn
    from .errors import ConfigError

    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")
    nspec = network_spec(engineered, spec)
    if arch in ("mlp", "soft-mnn"):
        net = build_mlp(nspec, hidden, seed=seed)
    else:
        if arch == "partial-mnn" and not spec.has_nonmonotone:
            raise ConfigError("partial-mnn needs at least one NonMonotone feature")
        if arch == "hard-mnn" and spec.has_nonmonotone:
            raise ConfigError("hard-mnn needs every feature monotone; use partial-mnn")
        net = build_mnn(nspec, mnn_arch or MnnArchitecture(tuple(hidden)), seed=seed)
    return ChillerModel(net, engineered)


def audit_tol(model):
    """Violation tolerance: exact for constrained networks, 1e-4 kW otherwise."""
    kind = getattr(model, "kind", "mlp")
    return 1e-9 if kind in ("hard", "partial") else 1e-4
