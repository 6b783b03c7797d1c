import math

import numpy as np
import pytest

from monoplant import losses as L
from monoplant.errors import ConfigError, DivergenceError, SpecError
from monoplant.mnn import CHILLER_SPEC, Direction, MnnArchitecture, MonotonicitySpec, build_mlp, build_mnn


def test_mse_l2_examples():
    assert L.mse_l2([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert L.mse_l2([2.0], [0.0]) == 2.0
    assert L.mse_l2([2.0], [0.0], [np.array([3.0])], 0.1) == pytest.approx(2.9)
    with pytest.raises(ValueError):
        L.mse_l2([], [])


def test_rank_ce_examples():
    assert L.rank_loss_ce(1.0, 1.0, 1) == pytest.approx(math.log(2))
    assert L.rank_loss_ce(1.0, 1.0, 0) == pytest.approx(0.693147, abs=1e-6)
    assert L.rank_loss_ce(2.0, 0.0, 1) == pytest.approx(0.126928, abs=1e-6)
    assert L.rank_loss_ce(2.0, 0.0, 0) == pytest.approx(2.126928, abs=1e-6)
    # no overflow for large gaps
    assert L.rank_loss_ce(1000.0, 0.0, 0) == pytest.approx(1000.0)


def test_rank_ce_gradient():
    assert L.rank_loss_ce_grad(0.0, 0.0, 1) == -0.5
    for d, lab in ((0.3, 1), (-1.2, 0), (4.0, 1)):
        h = 1e-6
        fd = (L.rank_loss_ce(d + h, 0.0, lab) - L.rank_loss_ce(d - h, 0.0, lab)) / (2 * h)
        assert L.rank_loss_ce_grad(d, 0.0, lab) == pytest.approx(fd, abs=1e-8)


def test_hinge_examples():
    assert L.rank_loss_hinge(5.0, 3.0, 0) == 2.0
    assert L.rank_loss_hinge(5.0, 3.0, 1) == 0.0
    assert L.rank_loss_hinge(4.0, 4.0, 0) == 0.0
    assert L.rank_loss_hinge(4.0, 4.0, 1) == 0.0


def test_hinge_zero_iff_order_agrees(rng):
    a, b = rng.normal(size=200), rng.normal(size=200)
    lab = rng.integers(0, 2, 200)
    loss = L.rank_loss_hinge(a, b, lab)
    agrees = np.where(lab == 1, a >= b, a <= b)
    np.testing.assert_array_equal(loss == 0, agrees)


def test_range_penalty_examples():
    assert L.range_penalty(5.0, 0.0, 10.0) == 0.0
    assert L.range_penalty(12.0, 0.0, 10.0) == 2.0
    assert L.range_penalty(-3.0, 0.0, 10.0) == 3.0
    with pytest.raises(ValueError):
        L.range_penalty(1.0, 2.0, 1.0)


def test_pair_labels_from_table():
    assert L.pair_label(Direction.DECREASE, 30.0, 31.0) == 1  # F_fan
    assert L.pair_label(Direction.INCREASE, 20.0, 21.0) == 0  # T_wb
    with pytest.raises(SpecError):
        L.pair_label(Direction.NON_MONOTONE, 1.0, 2.0)
    with pytest.raises(ValueError):
        L.pair_label(Direction.INCREASE, 1.0, 1.0)


def test_generate_pairs_consistent(rng):
    X = rng.uniform(0, 10, (50, 6))
    pairs = L.generate_pairs(X, CHILLER_SPEC, 0.05, 300, seed=1)
    assert len(pairs) == 300
    span = X.max(0) - X.min(0)
    for p in pairs:
        diff = np.flatnonzero(p.xA != p.xB)
        assert diff.size == 1
        i = diff[0]
        assert 0 < p.xB[i] - p.xA[i] <= 0.05 * span[i] + 1e-12
        assert p.label == L.pair_label(CHILLER_SPEC.directions[i], p.xA[i], p.xB[i])
    again = L.generate_pairs(X, CHILLER_SPEC, 0.05, 300, seed=1)
    assert all(np.array_equal(a.xB, b.xB) for a, b in zip(pairs, again))


def test_generate_pairs_errors():
    s = MonotonicitySpec(("a",), (Direction.NON_MONOTONE,))
    with pytest.raises(SpecError):
        L.generate_pairs(np.ones((3, 1)), s)
    with pytest.raises(ValueError):
        L.generate_pairs(np.ones((3, 6)), CHILLER_SPEC, delta_frac=0.0)


def test_train_config_contract():
    with pytest.raises(ConfigError):
        L.TrainConfig(rank_kind="none", rank_weight=1.0)
    with pytest.raises(ConfigError):
        L.TrainConfig(rank_kind="listwise")
    assert L.TrainConfig(rank_kind="ce").rank_weight == 1.0
    assert L.TrainConfig().rank_weight == 0.0


def test_l2_invariant_under_bias():
    s = MonotonicitySpec(("a", "b"), (Direction.INCREASE, Direction.DECREASE))
    net = build_mlp(s, (4,), seed=0)
    before = L.mse_l2([1.0], [0.0], net.weight_arrays(), 0.5)
    for _, layer in net.named_layers():
        layer.bias += 3.0
    assert L.mse_l2([1.0], [0.0], net.weight_arrays(), 0.5) == before


def test_hard_mnn_fits_linear_monotone_target(rng):
    s = MonotonicitySpec(("a", "b"), (Direction.INCREASE, Direction.DECREASE))
    X = rng.uniform(-1, 1, (200, 2))
    y = 3.0 * X[:, 0] - 2.0 * X[:, 1] + 10.0
    net = build_mnn(s, MnnArchitecture((8,)), seed=0)
    L.train(net, X, y, None, L.TrainConfig(epochs=200, lr=0.03, l2_gamma=0.0, seed=0))
    assert np.mean((net.predict(X) - y) ** 2) < 1e-3 * np.var(y)


def test_rank_terms_recorded_and_deterministic(rng):
    s = MonotonicitySpec(("a", "b"), (Direction.INCREASE, Direction.DECREASE))
    X = rng.uniform(-1, 1, (64, 2))
    y = X[:, 0] - X[:, 1]
    pairs = L.generate_pairs(X, s, 0.05, 64, seed=0)

    def run():
        net = build_mlp(s, (6,), seed=0)
        _, hist = L.train(net, X, y, pairs, L.TrainConfig(epochs=5, rank_kind="ce", seed=3))
        return net, hist

    n1, h1 = run()
    n2, h2 = run()
    assert all(r.rank_loss > 0 for r in h1)
    for a, b in zip(n1.weight_arrays(), n2.weight_arrays()):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ConfigError):
        L.train(build_mlp(s, (6,)), X, y, None, L.TrainConfig(rank_kind="hinge"))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_epoch(rng):
    s = MonotonicitySpec(("a",), (Direction.INCREASE,))
    X = rng.uniform(0, 1, (32, 1))
    y = 1e6 * X[:, 0]
    net = build_mlp(s, (4,), seed=0)
    with pytest.raises(DivergenceError) as ei:
        L.train(net, X, y, None, L.TrainConfig(epochs=50, lr=1e6, seed=0))
    assert ei.value.epoch is not None and "epoch" in str(ei.value)


def test_history_csv_and_mape(tmp_path):
    h = [L.EpochRecord(1, 0.5, 0.0, 0.0, 0.5)]
    p = tmp_path / "h.csv"
    L.write_history_csv(p, h)
    assert p.read_text().splitlines()[0] == "epoch,mse,rank_loss,range_loss,total"
    assert L.mape([110.0], [100.0]) == pytest.approx(10.0)
