"""Training objectives, monotone pair generation, and the mini-batch trainer.

The trainer optimises, on standardised targets,

    mse_l2 + rank_weight * mean(rank loss) + range_weight * mean(range penalty)

with SGD (optionally with momentum) and projects constrained layers back
onto the non-negative orthant after every step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, SpecError
from .mnn import Direction, MonotonicitySpec
from .netcore import SGD

RANK_KINDS = ("ce", "hinge", "none")


def _log_sigmoid(d):
    # log(sigmoid(d)) without overflow
    return -np.logaddexp(0.0, -d)


def mse_l2(preds, targets, params=(), gamma=0.0):
    """(1/2m) sum (y - yhat)^2 + gamma * sum ||W||^2 over weight arrays."""
    preds = np.asarray(preds, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if preds.size == 0:
        raise ValueError("empty batch")
    if preds.shape != targets.shape:
        raise ValueError("preds and targets differ in length")
    l2 = sum(float(np.sum(np.asarray(w) ** 2)) for w in params) if gamma else 0.0
    return 0.5 * float(np.mean((targets - preds) ** 2)) + gamma * l2


def rank_loss_ce(yhat_a, yhat_b, label):
    """Cross-entropy between sigmoid(yhat_a - yhat_b) and the order label."""
    d = np.asarray(yhat_a, dtype=np.float64) - np.asarray(yhat_b, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    out = -label * _log_sigmoid(d) - (1.0 - label) * _log_sigmoid(-d)
    return float(out) if out.ndim == 0 else out


def rank_loss_ce_grad(yhat_a, yhat_b, label):
    """d(loss)/d(yhat_a); the derivative w.r.t. yhat_b is its negative."""
    d = np.asarray(yhat_a, dtype=np.float64) - np.asarray(yhat_b, dtype=np.float64)
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return s - np.asarray(label, dtype=np.float64)


def rank_loss_hinge(yhat_a, yhat_b, label):
    """Penalise the predicted gap only when it contradicts the label."""
    d = np.asarray(yhat_a, dtype=np.float64) - np.asarray(yhat_b, dtype=np.float64)
    label = np.asarray(label)
    out = np.where(label == 1, np.maximum(0.0, -d), np.maximum(0.0, d))
    return float(out) if out.ndim == 0 else out


def rank_loss_hinge_grad(yhat_a, yhat_b, label):
    d = np.asarray(yhat_a, dtype=np.float64) - np.asarray(yhat_b, dtype=np.float64)
    label = np.asarray(label)
    return np.where(label == 1, np.where(d < 0, -1.0, 0.0), np.where(d > 0, 1.0, 0.0))


def range_penalty(yhat, lower, upper):
    if lower > upper:
        raise ValueError("lower must not exceed upper")
    y = np.asarray(yhat, dtype=np.float64)
    out = np.maximum(y - upper, 0.0) + np.maximum(lower - y, 0.0)
    return float(out) if out.ndim == 0 else out


def range_penalty_grad(yhat, lower, upper):
    y = np.asarray(yhat, dtype=np.float64)
    return np.where(y > upper, 1.0, 0.0) - np.where(y < lower, 1.0, 0.0)


@dataclass(frozen=True)
class PairSample:
    xA: np.ndarray
    xB: np.ndarray
    label: int


def pair_label(direction: Direction, xa_i, xb_i):
    """I(y_A > y_B) implied by a one-coordinate move along a monotone feature."""
    if direction is Direction.NON_MONOTONE:
        raise SpecError("pairs need a monotone feature")
    if xa_i == xb_i:
        raise ValueError("pair coordinates must differ")
    up = xb_i > xa_i
    if direction is Direction.INCREASE:
        return 0 if up else 1
    return 1 if up else 0


def generate_pairs(X, spec: MonotonicitySpec, delta_frac=0.05, n=1000, seed=0):
    """Copy an anchor row and nudge one monotone feature upward.

    ``X`` holds model inputs (one row per sample).  The nudge is uniform
    in (0, delta_frac * observed range].
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if not 0 < delta_frac <= 0.2:
        raise ValueError("delta_frac must lie in (0, 0.2]")
    mono = spec.monotone_idx
    if not mono:
        raise SpecError("spec has no monotone features")
    rng = np.random.default_rng(seed)
    span = X.max(axis=0) - X.min(axis=0)
    span = np.where(span > 0, span, 1.0)
    anchors = rng.integers(0, X.shape[0], n)
    feats = np.asarray(mono)[rng.integers(0, len(mono), n)]
    # 1 - U[0,1) lies in (0, 1]
    u = (1.0 - rng.random(n)) * delta_frac * span[feats]
    pairs = []
    for a, i, du in zip(anchors, feats, u):
        xa = X[a].copy()
        xb = xa.copy()
        xb[i] += du
        pairs.append(PairSample(xa, xb, pair_label(spec.directions[i], xa[i], xb[i])))
    return pairs


def pairs_to_arrays(pairs):
    if not pairs:
        return None, None, None
    return (np.array([p.xA for p in pairs]), np.array([p.xB for p in pairs]),
            np.array([p.label for p in pairs], dtype=np.float64))


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 0.03
    l2_gamma: float = 1e-4
    rank_weight: float | None = None
    rank_kind: str = "none"
    range_weight: float = 0.1
    y_lower: float | None = None
    y_upper: float | None = None
    batch_size: int = 32
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        self.rank_kind = (self.rank_kind or "none").lower()
        if self.rank_kind not in RANK_KINDS:
            raise ConfigError(f"unknown rank loss {self.rank_kind!r}")
        if self.rank_weight is None:
            self.rank_weight = 0.0 if self.rank_kind == "none" else 1.0
        if self.rank_kind == "none" and self.rank_weight > 0:
            raise ConfigError("rank_weight > 0 needs a rank loss kind")
        if self.rank_weight < 0 or self.range_weight < 0 or self.l2_gamma < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.y_lower is not None and self.y_upper is not None and self.y_lower > self.y_upper:
            raise ConfigError("y_lower must not exceed y_upper")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and lr > 0 required")


@dataclass
class EpochRecord:
    epoch: int
    mse: float
    rank_loss: float
    range_loss: float
    total: float


def train(net, X, y, pairs=None, cfg: TrainConfig | None = None):
    """Mini-batch SGD on the combined objective; returns ``(net, history)``.

    MSE and range terms use the standardised output scale; rank terms use
    the raw prediction difference in kW.  When the network
    has not been given scaling statistics it takes them from ``X, y``.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if cfg.rank_kind != "none" and cfg.rank_weight > 0 and not pairs:
        raise ConfigError("rank loss requested without pairs")
    if not net.scaling_fitted:
        net.fit_scaling(X, y)
    ys, sc = net.y_shift, net.y_scale
    lower = 0.0 if cfg.y_lower is None else cfg.y_lower
    upper = 1.5 * float(np.max(y)) if cfg.y_upper is None else cfg.y_upper
    lo_s, hi_s = (lower - ys) / sc, (upper - ys) / sc
    XA, XB, labels = pairs_to_arrays(pairs) if cfg.rank_kind != "none" else (None, None, None)
    use_rank = XA is not None and cfg.rank_weight > 0
    rank_fn, rank_grad = ((rank_loss_ce, rank_loss_ce_grad) if cfg.rank_kind == "ce"
                          else (rank_loss_hinge, rank_loss_hinge_grad))

    rng = np.random.default_rng(cfg.seed)
    opt = SGD(cfg.lr, cfg.momentum)
    n = X.shape[0]
    history = []
    pair_order = rng.permutation(len(labels)) if use_rank else None
    pair_pos = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            m = idx.size
            xb = X[idx]
            if use_rank:
                take = np.take(pair_order, np.arange(pair_pos, pair_pos + m), mode="wrap")
                pair_pos = (pair_pos + m) % len(pair_order)
                xb = np.concatenate([xb, XA[take], XB[take]], axis=0)
            out, trace = net.forward(xb)
            pred = (out[:m] - ys) / sc
            tgt = (y[idx] - ys) / sc
            resid = pred - tgt
            l2 = sum(float(np.vdot(w, w)) for w in net.weight_arrays()) if cfg.l2_gamma else 0.0
            mse = 0.5 * float(np.mean(resid ** 2))
            rng_pen = float(np.mean(range_penalty(pred, lo_s, hi_s)))
            up = np.zeros(xb.shape[0])
            up[:m] = resid / m + cfg.range_weight * range_penalty_grad(pred, lo_s, hi_s) / m
            rank = 0.0
            if use_rank:
                # rank terms compare raw (kW) predictions
                pa, pb = out[m:2 * m], out[2 * m:]
                lab = labels[take]
                rank = float(np.mean(rank_fn(pa, pb, lab)))
                g = cfg.rank_weight * rank_grad(pa, pb, lab) / m * sc
                up[m:2 * m] = g
                up[2 * m:] = -g
            total = mse + cfg.l2_gamma * l2 + cfg.rank_weight * rank + cfg.range_weight * rng_pen
            if not np.isfinite(total):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch)
            # backward differentiates the kW output; convert to standardised units
            grads = net.backward(trace, up / sc)
            if cfg.l2_gamma:
                for name, layer in net.named_layers():
                    grads.weights[name] = grads.weights[name] + 2.0 * cfg.l2_gamma * layer.weights
            try:
                opt.step(net, grads)
            except DivergenceError as exc:
                raise DivergenceError(f"non-finite gradient at epoch {epoch}", epoch) from exc
            sums += (mse, rank, rng_pen, total)
            batches += 1
        avg = sums / max(batches, 1)
        history.append(EpochRecord(epoch, *map(float, avg)))
    return net, history


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mse", "rank_loss", "range_loss", "total"])
        for r in history:
            w.writerow([r.epoch, repr(r.mse), repr(r.rank_loss), repr(r.range_loss), repr(r.total)])


def mape(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.mean(np.abs(pred - target) / np.abs(target))) * 100.0
