"""Monotone network architectures (hard / partial) plus the plain MLP baseline.

A hard network masks its inputs so every feature becomes "increasing",
then runs them through layers whose weights are clamped non-negative and
whose activations are nondecreasing.  The partial variant routes
non-monotone features through an unconstrained ReLU branch that is added
into each backbone hidden layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum

import numpy as np

from .errors import ConstructionError, ShapeError, SpecError, TraceError
from .netcore import (kink_points, LINEAR, RELU, ActivationKind, DenseLayer, GradientSet,
                      dense_backward, dense_forward, init_layer)

FORMAT_VERSION = 1


class Direction(str, Enum):
    INCREASE = "Increase"
    DECREASE = "Decrease"
    NON_MONOTONE = "NonMonotone"

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "").replace("-", "")
        for d in cls:
            if d.value.lower() == key or d.name.lower().replace("_", "") == key:
                return d
        aliases = {"inc": cls.INCREASE, "up": cls.INCREASE, "+": cls.INCREASE,
                   "dec": cls.DECREASE, "down": cls.DECREASE, "-": cls.DECREASE,
                   "none": cls.NON_MONOTONE, "nonmono": cls.NON_MONOTONE}
        if key in aliases:
            return aliases[key]
        raise SpecError(f"unknown monotonic direction {text!r}")

    @property
    def sign(self):
        return {"Increase": 1.0, "Decrease": -1.0, "NonMonotone": 0.0}[self.value]


@dataclass(frozen=True)
class MonotonicitySpec:
    names: tuple
    directions: tuple

    def __post_init__(self):
        names = tuple(self.names)
        dirs = tuple(Direction.parse(d) if not isinstance(d, Direction) else d for d in self.directions)
        if len(names) != len(dirs):
            raise SpecError("names and directions differ in length")
        if len(set(names)) != len(names):
            raise SpecError("feature names must be unique")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "directions", dirs)

    def __len__(self):
        return len(self.names)

    @cached_property
    def signs(self):
        out = np.array([d.sign for d in self.directions], dtype=np.float64)
        out.setflags(write=False)
        return out

    @property
    def monotone_idx(self):
        return [i for i, d in enumerate(self.directions) if d is not Direction.NON_MONOTONE]

    @property
    def has_nonmonotone(self):
        return any(d is Direction.NON_MONOTONE for d in self.directions)

    def index(self, name):
        return self.names.index(name)

    def with_overrides(self, overrides):
        dirs = list(self.directions)
        for name, d in overrides.items():
            if name not in self.names:
                raise SpecError(f"unknown feature {name!r}")
            dirs[self.index(name)] = Direction.parse(d)
        return MonotonicitySpec(self.names, tuple(dirs))

    def to_dict(self):
        return {"names": list(self.names), "directions": [d.value for d in self.directions]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), tuple(d["directions"]))


# Chiller-power feature directions (chiller input vector order).
CHILLER_FEATURES = ("T_wb", "T_chw_out", "T_chw_in", "F_cow_pump", "F_fan", "F_chw_pump")
CHILLER_SPEC = MonotonicitySpec(
    CHILLER_FEATURES,
    (Direction.INCREASE, Direction.DECREASE, Direction.INCREASE,
     Direction.DECREASE, Direction.DECREASE, Direction.INCREASE),
)


@dataclass(frozen=True)
class MnnArchitecture:
    hidden: tuple = (16, 16)
    activation: ActivationKind = field(default_factory=lambda: ActivationKind("ptrelu", 4.0, 1.0))
    aggregation: str = "plus"
    passthrough: bool = True

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden)
        if not hidden or any(h < 1 for h in hidden):
            raise ConstructionError("need at least one hidden layer of positive width")
        if self.aggregation not in ("plus", "concat"):
            raise ConstructionError(f"unknown aggregation {self.aggregation!r}")
        object.__setattr__(self, "hidden", hidden)

    def to_dict(self):
        return {"hidden": list(self.hidden), "activation": self.activation.to_dict(),
                "aggregation": self.aggregation, "passthrough": self.passthrough}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["hidden"]), ActivationKind.from_dict(d["activation"]),
                   d["aggregation"], bool(d["passthrough"]))


def mask_apply(x, spec: MonotonicitySpec):
    """Negate decreasing features; reject non-monotone ones."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(spec):
        raise ShapeError("feature vector length does not match the spec")
    if spec.has_nonmonotone:
        raise SpecError("spec has non-monotone features; use partial_mask_apply")
    return x * spec.signs


def partial_mask_apply(x, spec: MonotonicitySpec):
    """Split into the signed monotone part and the non-monotone part."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(spec):
        raise ShapeError("feature vector length does not match the spec")
    signs = spec.signs
    x_m = x * signs
    x_n = np.where(signs == 0.0, x, 0.0)
    return x_m, x_n


class MnnNetwork:
    """Hard-MNN, partial-MNN, or an unconstrained MLP sharing one layout.

    ``kind`` is ``"hard"``, ``"partial"`` or ``"mlp"``.  Inputs are
    standardised with a positive per-feature scale before masking and the
    output is de-standardised, which leaves monotone directions intact.
    """

    def __init__(self, spec, arch, kind, main, passthrough, branch, output,
                 x_shift=None, x_scale=None, y_shift=0.0, y_scale=1.0):
        self.spec = spec
        self.arch = arch
        self.kind = kind
        self.main = list(main)
        self.passthrough = list(passthrough)
        self.branch = list(branch)
        self.output = output
        d = len(spec)
        self.x_shift = np.zeros(d) if x_shift is None else np.asarray(x_shift, dtype=np.float64)
        self.x_scale = np.ones(d) if x_scale is None else np.asarray(x_scale, dtype=np.float64)
        self.y_shift = float(y_shift)
        self.y_scale = float(y_scale)
        if np.any(self.x_scale <= 0) or self.y_scale <= 0:
            raise ConstructionError("scaling factors must be positive")
        self.scaling_fitted = x_shift is not None

    @property
    def n_features(self):
        return len(self.spec)

    @property
    def constrained(self):
        return self.kind in ("hard", "partial")

    def named_layers(self):
        out = [(f"main.{i}", l) for i, l in enumerate(self.main)]
        out += [(f"pass.{i}", l) for i, l in enumerate(self.passthrough)]
        out += [(f"branch.{i}", l) for i, l in enumerate(self.branch)]
        out.append(("out", self.output))
        return out

    def weight_arrays(self):
        return [l.weights for _, l in self.named_layers()]

    def fit_scaling(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        sd = X.std(axis=0)
        self.x_shift = X.mean(axis=0)
        self.x_scale = np.where(sd > 1e-12, sd, 1.0)
        ysd = float(y.std())
        self.y_shift = float(y.mean())
        self.y_scale = ysd if ysd > 1e-12 else 1.0
        self.scaling_fitted = True
        return self

    def copy(self):
        return MnnNetwork(self.spec, self.arch, self.kind,
                          [l.copy() for l in self.main], [l.copy() for l in self.passthrough],
                          [l.copy() for l in self.branch], self.output.copy(),
                          self.x_shift.copy(), self.x_scale.copy(), self.y_shift, self.y_scale)

    # -- evaluation -------------------------------------------------------

    def _split(self, xs):
        if self.kind == "mlp":
            return xs, None
        if self.kind == "hard":
            return xs * self.spec.signs, None
        return partial_mask_apply(xs, self.spec)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got shape {x.shape}")
        xs = (X - self.x_shift) / self.x_scale
        xm, xn = self._split(xs)
        tr = {"xm": xm, "xn": xn, "h_in": [], "z": [], "a": [], "p": [], "u_in": [], "uz": [], "single": single}
        h, u = xm, xn
        concat = self.arch.aggregation == "concat"
        for i, layer in enumerate(self.main):
            tr["h_in"].append(h)
            z, a = dense_forward(layer, h)
            tr["z"].append(z)
            tr["a"].append(a)
            if self.branch:
                tr["u_in"].append(u)
                uz, u = dense_forward(self.branch[i], u)
                tr["uz"].append(uz)
                a = a + u
            if self.passthrough:
                _, p = dense_forward(self.passthrough[i], xm)
                tr["p"].append(p)
                h = np.concatenate([a, p], axis=1) if concat else a + p
            else:
                h = a
        tr["h_out"] = h
        _, ys = dense_forward(self.output, h)
        ys = ys[:, 0]
        tr["ys"] = ys
        y = ys * self.y_scale + self.y_shift
        return (float(y[0]) if single else y), tr

    def backward(self, tr, upstream=1.0) -> GradientSet:
        """Gradients of ``sum(output_kw * upstream)``."""
        if len(tr.get("z", ())) != len(self.main):
            raise TraceError("trace does not match this network")
        n = tr["ys"].shape[0]
        up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (n,))
        gw, gb = {}, {}
        d_ys = (up * self.y_scale)[:, None]
        dw, db, dh = dense_backward(self.output, tr["h_out"], tr["ys"][:, None], d_ys)
        gw["out"], gb["out"] = dw, db
        dxm = np.zeros_like(tr["xm"])
        dxn = None if tr["xn"] is None else np.zeros_like(tr["xn"])
        du = None
        concat = self.arch.aggregation == "concat"
        for i in range(len(self.main) - 1, -1, -1):
            width = self.main[i].n_out
            if self.passthrough:
                if concat:
                    da, dp = dh[:, :width], dh[:, width:]
                else:
                    da, dp = dh, dh
                dw, _, dx = dense_backward(self.passthrough[i], tr["xm"], tr["p"][i], dp)
                gw[f"pass.{i}"], gb[f"pass.{i}"] = dw, None
                dxm += dx
            else:
                da = dh
            if self.branch:
                du_total = da if du is None else da + du
                dw, db, du = dense_backward(self.branch[i], tr["u_in"][i], tr["uz"][i], du_total)
                gw[f"branch.{i}"], gb[f"branch.{i}"] = dw, db
            dw, db, dh = dense_backward(self.main[i], tr["h_in"][i], tr["z"][i], da)
            gw[f"main.{i}"], gb[f"main.{i}"] = dw, db
        dxm += dh
        if self.kind == "mlp":
            dxs = dxm
        else:
            dxs = dxm * self.spec.signs
            if du is not None:
                dxs = dxs + np.where(self.spec.signs == 0.0, du, 0.0)
        dx = dxs / self.x_scale
        return GradientSet(gw, gb, dx[0] if tr["single"] else dx)

    def predict(self, x):
        return self.forward(x)[0]

    __call__ = predict

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        layers = {}
        for name, l in self.named_layers():
            layers[name] = {
                "weights": l.weights.tolist(),
                "bias": None if l.bias is None else l.bias.tolist(),
                "activation": l.activation.to_dict(),
                "nonneg": l.nonneg_constrained,
            }
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "arch": self.arch.to_dict(),
            "scaling": {"x_shift": self.x_shift.tolist(), "x_scale": self.x_scale.tolist(),
                        "y_shift": self.y_shift, "y_scale": self.y_scale,
                        "fitted": self.scaling_fitted},
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ConstructionError(f"unsupported model format {d.get('format_version')!r}")

        def mk(e):
            return DenseLayer(np.array(e["weights"], dtype=np.float64).reshape(len(e["weights"]), -1),
                              None if e["bias"] is None else np.array(e["bias"], dtype=np.float64),
                              ActivationKind.from_dict(e["activation"]), bool(e["nonneg"]))

        layers = d["layers"]

        def seq(prefix):
            out, i = [], 0
            while f"{prefix}.{i}" in layers:
                out.append(mk(layers[f"{prefix}.{i}"]))
                i += 1
            return out

        sc = d["scaling"]
        net = cls(MonotonicitySpec.from_dict(d["spec"]), MnnArchitecture.from_dict(d["arch"]), d["kind"],
                  seq("main"), seq("pass"), seq("branch"), mk(layers["out"]),
                  sc["x_shift"], sc["x_scale"], sc["y_shift"], sc["y_scale"])
        net.scaling_fitted = bool(sc.get("fitted", True))
        return net


def build_mnn(spec: MonotonicitySpec, arch: MnnArchitecture | None = None, seed=0) -> MnnNetwork:
    """Wire a hard-MNN (all monotone) or partial-MNN (some NonMonotone)."""
    arch = arch or MnnArchitecture()
    if not isinstance(spec, MonotonicitySpec):
        raise ConstructionError("spec must be a MonotonicitySpec")
    if not spec.monotone_idx:
        raise ConstructionError("spec has no monotone features")
    rng = np.random.default_rng(seed)
    d = len(spec)
    partial = spec.has_nonmonotone
    main, passthrough, branch = [], [], []
    n_in = d
    b_in = d
    for w in arch.hidden:
        main.append(init_layer(n_in, w, arch.activation, True, rng))
        if arch.passthrough:
            passthrough.append(init_layer(d, w, LINEAR, True, rng, bias=False))
        if partial:
            branch.append(init_layer(b_in, w, RELU, False, rng))
            b_in = w
        n_in = 2 * w if (arch.passthrough and arch.aggregation == "concat") else w
    output = init_layer(n_in, 1, LINEAR, True, rng)
    return MnnNetwork(spec, arch, "partial" if partial else "hard", main, passthrough, branch, output)


def build_mlp(spec: MonotonicitySpec, hidden=(16, 16), activation: ActivationKind = RELU, seed=0) -> MnnNetwork:
    """Unconstrained baseline with the same hidden widths (no mask, no pass-through)."""
    rng = np.random.default_rng(seed)
    arch = MnnArchitecture(tuple(hidden), activation, "plus", False)
    main, n_in = [], len(spec)
    for w in arch.hidden:
        main.append(init_layer(n_in, w, activation, False, rng))
        n_in = w
    output = init_layer(n_in, 1, LINEAR, False, rng)
    return MnnNetwork(spec, arch, "mlp", main, [], [], output)


def predict(net: MnnNetwork, x):
    return net.predict(x)


@dataclass
class ViolationReport:
    count: int
    pairs: int
    worst_gap: float
    per_feature: dict

    @property
    def rate(self):
        return self.count / self.pairs if self.pairs else 0.0

    def to_dict(self):
        return {"violations": self.count, "pairs": self.pairs, "rate": self.rate,
                "worst_gap": self.worst_gap, "per_feature": self.per_feature}


def check_monotonicity(net, spec: MonotonicitySpec, bounds, grid_n=20, tol=1e-9, anchors=None, seed=0):
    """Scan natural curves and count direction violations larger than ``tol``.

    ``bounds`` is a ``(d, 2)`` array.  Anchors default to ``grid_n`` points
    drawn uniformly inside the bounds; each anchor is swept over ``grid_n``
    evenly spaced values of every monotone feature.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    bounds = np.asarray(bounds, dtype=np.float64)
    fn = net.predict if hasattr(net, "predict") else net
    if anchors is None:
        rng = np.random.default_rng(seed)
        anchors = rng.uniform(bounds[:, 0], bounds[:, 1], size=(grid_n, len(spec)))
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    count, pairs, worst = 0, 0, 0.0
    per_feature = {}
    for i in spec.monotone_idx:
        sign = spec.directions[i].sign
        grid = np.linspace(bounds[i, 0], bounds[i, 1], grid_n)
        X = np.repeat(anchors, grid_n, axis=0)
        X[:, i] = np.tile(grid, anchors.shape[0])
        y = np.asarray(fn(X)).reshape(anchors.shape[0], grid_n)
        gap = -sign * np.diff(y, axis=1)  # positive = moving against the declared direction
        bad = gap > tol
        c = int(bad.sum())
        count += c
        pairs += gap.size
        if c:
            worst = max(worst, float(gap.max()))
        per_feature[spec.names[i]] = c / gap.size
    return ViolationReport(count, pairs, worst, per_feature)


def natural_curves(net, feature_idx, bounds, anchors, grid_n=20):
    """Predicted power along one feature for each anchor: ``(grid, (n_anchor, grid_n))``."""
    bounds = np.asarray(bounds, dtype=np.float64)
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    grid = np.linspace(bounds[feature_idx, 0], bounds[feature_idx, 1], grid_n)
    X = np.repeat(anchors, grid_n, axis=0)
    X[:, feature_idx] = np.tile(grid, anchors.shape[0])
    return grid, np.asarray(net.predict(X)).reshape(anchors.shape[0], grid_n)


def save_model(doc: dict, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return json.load(fh)


def kink_margin(net: MnnNetwork, x):
    """Smallest distance of any hidden pre-activation to a kink of its activation.

    Finite-difference checks skip inputs with a small margin, where the
    central stencil may straddle two branches.
    """
    _, tr = net.forward(x)
    best = np.inf
    for layers, zs in ((net.main, tr["z"]), (net.branch, tr["uz"])):
        for layer, z in zip(layers, zs):
            for k in kink_points(layer.activation):
                best = min(best, float(np.min(np.abs(z - k))))
    return best
