import numpy as np
import pytest

from monoplant.errors import ConfigError
from monoplant.features import (ENGINEERED_NAMES, ChillerModel, audit_tol, build_chiller_model,
                                engineered_features, engineered_jacobian, network_spec)
from monoplant.mnn import CHILLER_SPEC, Direction, check_monotonicity


def raw_rows(rng, n=5):
    return np.column_stack([rng.uniform(10, 30, n), rng.uniform(7, 10, n), rng.uniform(10, 17, n),
                            rng.uniform(30, 50, n), rng.uniform(30, 50, n), rng.uniform(30, 50, n)])


def test_engineered_values():
    x = np.array([20.0, 8.0, 13.0, 40.0, 50.0, 30.0])
    z = engineered_features(x)
    assert z.shape == (8,)
    assert z[6] == pytest.approx(20.0 / 2000.0)
    assert z[7] == pytest.approx(5.0 * 30.0)


def test_jacobian_matches_finite_differences(rng):
    X = raw_rows(rng)
    J = engineered_jacobian(X)
    h = 1e-6
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        fd = (engineered_features(X + e)[:, 6:] - engineered_features(X - e)[:, 6:]) / (2 * h)
        np.testing.assert_allclose(J[:, :, j], fd, rtol=1e-6, atol=1e-10)


def test_network_spec_follows_overrides():
    s = network_spec(True)
    assert s.names[6:] == ENGINEERED_NAMES
    assert s.directions[6:] == (Direction.INCREASE, Direction.INCREASE)
    s2 = network_spec(True, CHILLER_SPEC.with_overrides({"F_fan": "nonmonotone"}))
    assert s2.directions[6] is Direction.NON_MONOTONE and s2.directions[7] is Direction.INCREASE
    assert network_spec(False) is CHILLER_SPEC


@pytest.mark.parametrize("arch", ["hard-mnn", "mlp"])
def test_input_gradient_through_feature_map(arch, rng):
    m = build_chiller_model(arch, seed=3)
    X = raw_rows(rng, 40)
    m.fit_scaling(X, rng.normal(120, 10, 40))
    x = X[:3]
    _, tr = m.forward(x)
    g = m.backward(tr, np.ones(3)).input
    h = 1e-5
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        fd = (m.predict(x + e) - m.predict(x - e)) / (2 * h)
        np.testing.assert_allclose(g[:, j], fd, rtol=1e-4, atol=1e-6)


def test_hard_composite_monotone_on_raw_box(plant):
    m = build_chiller_model("hard-mnn", seed=0)
    rng = np.random.default_rng(0)
    X = raw_rows(rng, 60)
    m.fit_scaling(X, rng.normal(120, 10, 60))
    for l in m.net.main:
        l.bias[:] = rng.normal(0, 1, l.bias.shape)
    rep = check_monotonicity(m, CHILLER_SPEC, plant.chiller_bounds, grid_n=15)
    assert rep.count == 0


def test_roundtrip_and_errors(rng):
    m = build_chiller_model("hard-mnn", seed=1, engineered=False)
    back = ChillerModel.from_dict(m.to_dict())
    X = raw_rows(rng)
    np.testing.assert_array_equal(back.predict(X), m.predict(X))
    assert back.engineered is False
    with pytest.raises(ValueError):
        ChillerModel(m.net, engineered=True)
    with pytest.raises(ConfigError):
        build_chiller_model("resnet")
    with pytest.raises(ConfigError):
        build_chiller_model("partial-mnn")
    with pytest.raises(ConfigError):
        build_chiller_model("hard-mnn", spec=CHILLER_SPEC.with_overrides({"T_wb": "nonmonotone"}))
    p = build_chiller_model("partial-mnn", spec=CHILLER_SPEC.with_overrides({"T_wb": "nonmonotone"}))
    assert p.kind == "partial"


def test_audit_tol():
    assert audit_tol(build_chiller_model("hard-mnn")) == 1e-9
    assert audit_tol(build_chiller_model("mlp")) == 1e-4
