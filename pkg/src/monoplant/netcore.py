"""Dense feedforward engine: activations, forward/backward passes, SGD.

Networks here are plain lists of :class:`DenseLayer`.  Arrays are batched
row-wise: an input of shape ``(n, d)`` yields ``n`` outputs, a 1-D input
yields a scalar.  Composite networks (see :mod:`monoplant.mnn`) reuse
:func:`dense_forward` / :func:`dense_backward` directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import DivergenceError, NonFiniteInputError, ShapeError, TraceError

ACTIVATION_TAGS = ("relu", "ptrelu", "sigmoid", "linear")


@dataclass(frozen=True)
class ActivationKind:
    tag: str = "relu"
    alpha: float = 4.0
    beta: float = 1.0

    def __post_init__(self):
        tag = self.tag.lower()
        if tag not in ACTIVATION_TAGS:
            raise ValueError(f"unknown activation {self.tag!r}")
        object.__setattr__(self, "tag", tag)
        if tag == "ptrelu" and not (self.alpha > 0 and self.beta > 0):
            raise ValueError("PTRelu needs alpha > 0 and beta > 0")

    def to_dict(self):
        return {"tag": self.tag, "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tag"], float(d.get("alpha", 4.0)), float(d.get("beta", 1.0)))


RELU = ActivationKind("relu")
LINEAR = ActivationKind("linear")


def _act(z, kind: ActivationKind):
    if kind.tag == "relu":
        return np.maximum(z, 0.0)
    if kind.tag == "linear":
        return z
    if kind.tag == "sigmoid":
        return _accel.sigmoid(z)
    return _accel.ptrelu(z, kind.alpha, kind.beta)


def _act_grad(z, kind: ActivationKind):
    if kind.tag == "relu":
        return (z > 0).astype(np.float64)
    if kind.tag == "linear":
        return np.ones_like(z)
    if kind.tag == "sigmoid":
        return _accel.sigmoid_grad(z)
    return _accel.ptrelu_grad(z, kind.alpha, kind.beta)


def activate(x, kind: ActivationKind):
    """Apply an activation to a scalar or array."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError("activation input is not finite")
    out = _act(arr, kind)
    return float(np.ravel(out)[0]) if np.ndim(x) == 0 else out


def activate_grad(x, kind: ActivationKind):
    arr = np.asarray(x, dtype=np.float64)
    out = _act_grad(arr, kind)
    return float(np.ravel(out)[0]) if np.ndim(x) == 0 else out


def kink_points(kind: ActivationKind):
    """Points where the activation is not differentiable."""
    if kind.tag == "relu":
        return [0.0]
    if kind.tag == "ptrelu":
        # z = alpha * sigmoid(beta z) has exactly one positive root; bisection
        lo, hi = 0.0, max(kind.alpha, 1.0)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid < kind.alpha * float(_accel.sigmoid_np(kind.beta * mid)):
                lo = mid
            else:
                hi = mid
        return [0.0, 0.5 * (lo + hi)]
    return []


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray | None  # (out,) or None for bias-free layers
    activation: ActivationKind = RELU
    nonneg_constrained: bool = False

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        if self.bias is not None:
            self.bias = np.array(self.bias, dtype=np.float64, ndmin=1)
            if self.bias.shape != (self.weights.shape[0],):
                raise ShapeError("bias length must equal the number of output units")

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def project(self):
        if self.nonneg_constrained:
            np.maximum(self.weights, 0.0, out=self.weights)
        return self

    def copy(self):
        return DenseLayer(self.weights.copy(), None if self.bias is None else self.bias.copy(),
                          self.activation, self.nonneg_constrained)


def init_layer(n_in, n_out, activation=RELU, nonneg=False, rng=None, bias=True):
    """Seeded initialisation; constrained layers start feasible."""
    rng = np.random.default_rng(rng)
    bound = 1.0 / math.sqrt(n_in)
    if nonneg:
        w = rng.uniform(0.0, bound, size=(n_out, n_in))
    else:
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
    return DenseLayer(w, np.zeros(n_out) if bias else None, activation, nonneg)


def dense_forward(layer: DenseLayer, x):
    z = x @ layer.weights.T
    if layer.bias is not None:
        z = z + layer.bias
    return z, _act(z, layer.activation)


def dense_backward(layer: DenseLayer, x, z, d_out):
    """Gradients of a layer given upstream dL/d(post-activation)."""
    dz = d_out if layer.activation.tag == "linear" else d_out * _act_grad(z, layer.activation)
    dw = dz.T @ x
    db = None if layer.bias is None else dz.sum(axis=0)
    dx = dz @ layer.weights
    return dw, db, dx


@dataclass
class ForwardTrace:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    output: np.ndarray | None = None
    single: bool = False


@dataclass
class GradientSet:
    """Gradients keyed by layer name, plus the input gradient."""
    weights: dict
    biases: dict
    input: np.ndarray

    def max_abs(self):
        vals = [np.max(np.abs(w)) for w in self.weights.values() if w.size]
        vals += [np.max(np.abs(b)) for b in self.biases.values() if b is not None and b.size]
        return max(vals) if vals else 0.0

    def is_finite(self):
        # one reduction per array: a nan/inf entry (or an overflowing sum) makes the total non-finite
        total = sum(float(np.add.reduce(w, axis=None)) for w in self.weights.values())
        total += sum(float(np.add.reduce(b, axis=None)) for b in self.biases.values() if b is not None)
        return math.isfinite(total)


def named_layers(net):
    if hasattr(net, "named_layers"):
        return net.named_layers()
    return [(str(i), layer) for i, layer in enumerate(net)]


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ShapeError(f"expected 1-D or 2-D input, got shape {x.shape}")
    return x, False


def forward(net, x):
    """Evaluate a sequential net; returns ``(output, trace)``."""
    h, single = _as_batch(x)
    if not net:
        raise ShapeError("empty network")
    if h.shape[1] != net[0].n_in:
        raise ShapeError(f"input width {h.shape[1]} != first layer width {net[0].n_in}")
    trace = ForwardTrace(single=single)
    for layer in net:
        if h.shape[1] != layer.n_in:
            raise ShapeError("adjacent layer dimensions disagree")
        trace.inputs.append(h)
        z, h = dense_forward(layer, h)
        trace.pre.append(z)
        trace.post.append(h)
    if h.shape[1] != 1:
        raise ShapeError("final layer must have a single output unit")
    out = h[:, 0]
    trace.output = out
    return (float(out[0]) if single else out), trace


def backward(net, trace: ForwardTrace, upstream=1.0) -> GradientSet:
    """Exact gradients of ``sum(output * upstream)`` for a sequential net."""
    if len(trace.pre) != len(net):
        raise TraceError("trace does not match the network depth")
    for layer, z in zip(net, trace.pre):
        if z.shape[1] != layer.n_out:
            raise TraceError("trace layer widths do not match the network")
    n = trace.output.shape[0]
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (n,))
    d = up[:, None].copy()
    gw, gb = {}, {}
    for i in range(len(net) - 1, -1, -1):
        dw, db, d = dense_backward(net[i], trace.inputs[i], trace.pre[i], d)
        gw[str(i)] = dw
        gb[str(i)] = db
    return GradientSet(gw, gb, d[0] if trace.single else d)


def _output_sum(net, x):
    if hasattr(net, "forward"):
        out, _ = net.forward(x)
    else:
        out, _ = forward(net, x)
    return float(np.sum(out))


def finite_diff_grad(net, x, h=1e-5) -> GradientSet:
    """Central-difference gradients of the summed output, per parameter."""
    if not h > 0:
        raise ValueError("h must be positive")
    gw, gb = {}, {}
    for name, layer in named_layers(net):
        gw[name] = _fd_array(net, x, layer.weights, h)
        gb[name] = None if layer.bias is None else _fd_array(net, x, layer.bias, h)
    x = np.array(x, dtype=np.float64)
    gx = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = gx.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = _output_sum(net, x)
        flat[k] = orig - h
        fm = _output_sum(net, x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * h)
    return GradientSet(gw, gb, gx)


def _fd_array(net, x, arr, h):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = _output_sum(net, x)
        flat[k] = orig - h
        fm = _output_sum(net, x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * h)
    return g


def project_nonneg(net):
    for _, layer in named_layers(net):
        layer.project()
    return net


def sgd_step(net, grads: GradientSet, lr, velocity=None, momentum=0.0):
    """In-place SGD update followed by the non-negativity projection.

    ``velocity`` is a dict owned by the caller when momentum is used.
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    if not grads.is_finite():
        raise DivergenceError("non-finite gradient")
    for name, layer in named_layers(net):
        for key, param, g in (("w", layer.weights, grads.weights[name]),
                              ("b", layer.bias, grads.biases.get(name))):
            if param is None or g is None:
                continue
            if momentum:
                v = velocity.get((name, key))
                if v is None:
                    v = velocity[(name, key)] = np.zeros_like(param)
                v *= momentum
                v -= lr * g
                param += v
            else:
                param -= lr * g
        layer.project()
    return net


class SGD:
    """Plain SGD with optional fixed momentum, holding its own velocity."""

    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, net, grads):
        return sgd_step(net, grads, self.lr, self.velocity, self.momentum)


def random_sequential(widths, activation=RELU, nonneg=False, seed=0):
    """Sequential net with the given widths ending in a linear scalar output."""
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        layers.append(init_layer(n_in, n_out, activation, nonneg, rng))
    layers.append(init_layer(widths[-1], 1, LINEAR, nonneg, rng))
    return layers
