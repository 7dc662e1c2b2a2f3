import numpy as np
import pytest

from semisup import autodiff as ad
from semisup.gradcheck import check
from semisup.model import EmaState, MLP, ModelConfig, ema_update, embed_eval, fit_normalization, predict_eval
from semisup.trainer import cross_entropy


def small(seed=0, **kw):
    return MLP(ModelConfig(6, 3, hidden=[10], feature_dim=5, seed=seed, **kw))


def test_forward_shapes_and_distributions(rng):
    m = small()
    f, p = m.forward(rng.normal(size=(4, 6)))
    assert f.shape == (4, 5) and p.shape == (4, 3)
    np.testing.assert_allclose(p.values.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(f.values >= 0)
    f2, _ = small(features_after_relu=False).forward(rng.normal(size=(4, 6)))
    assert np.any(f2.values < 0)


def test_zero_final_layer_gives_uniform(rng):
    m = small()
    m.params[-2].values[:] = 0
    _, p = m.forward(rng.normal(size=(5, 6)))
    np.testing.assert_allclose(p.values, 1 / 3, atol=1e-15)


def test_batch_independence(rng):
    m = small()
    X = rng.normal(size=(8, 6))
    _, p8 = m.forward(X)
    for i in range(8):
        _, p1 = m.forward(X[i : i + 1])
        np.testing.assert_allclose(p1.values[0], p8.values[i], rtol=0, atol=1e-15)


def test_xavier_bounds():
    m = MLP(ModelConfig(20, 4, hidden=[30], feature_dim=10, seed=3))
    for W, (fi, fo) in zip(m.params[::2], [(20, 30), (30, 10), (10, 4)]):
        assert np.abs(W.values).max() <= np.sqrt(6 / (fi + fo))
    for b in m.params[1::2]:
        np.testing.assert_array_equal(b.values, 0)


def test_bad_input_width():
    with pytest.raises(ad.ShapeError):
        small().forward(np.zeros((2, 7)))
    with pytest.raises(ValueError):
        ModelConfig(3, 1)


@pytest.mark.parametrize("normalized", [False, True])
def test_ce_gradient_through_forward(rng, normalized):
    m = small(seed=1)
    for b in m.params[1::2]:
        b.values[:] = rng.normal(scale=0.5, size=b.shape)
    if normalized:
        m.set_normalization(rng.normal(size=6), rng.uniform(0.5, 2.0, size=6))
    X = rng.normal(size=(4, 6))
    y = np.array([0, 2, 1, 2])
    assert check(lambda: cross_entropy(m.forward(X)[1], y), m.params) <= 1e-4


def test_ema_limits(rng):
    m = small()
    ema = EmaState(m, decay=0.0)
    for p in m.params:
        p.values += 1.0
    ema_update(m, ema)
    for s, p in zip(ema.shadow, m.params):
        np.testing.assert_array_equal(s.values, p.values)
    ema = EmaState(m, decay=1.0)
    before = [s.values.copy() for s in ema.shadow]
    for p in m.params:
        p.values *= 3.0
    ema.update(m)
    for s, b in zip(ema.shadow, before):
        np.testing.assert_array_equal(s.values, b)
    with pytest.raises(ValueError):
        EmaState(m, decay=1.5)


def test_ema_closed_form():
    m = small()
    ema = EmaState(m, decay=0.999)
    s0 = [s.values.copy() for s in ema.shadow]
    for p in m.params:
        p.values += 0.5
    for _ in range(100):
        ema.update(m)
    w = 0.999**100
    for s, a, p in zip(ema.shadow, s0, m.params):
        np.testing.assert_allclose(s.values, w * a + (1 - w) * p.values, rtol=1e-12, atol=1e-14)


def test_evaluation_leaves_training_state_alone(rng):
    m = small()
    ema = EmaState(m, 0.5)
    snapshot = [p.values.copy() for p in m.params]
    graph = ad.new_graph()
    probs = predict_eval(m, ema, rng.normal(size=(3, 6)))
    embed_eval(m, rng.normal(size=(3, 6)))
    assert probs.shape == (3, 3) and len(graph) == 0
    for p, s in zip(m.params, snapshot):
        np.testing.assert_array_equal(p.values, s)
        np.testing.assert_array_equal(p.grad, 0)


def test_state_roundtrip(rng):
    a, b = small(seed=0), small(seed=1)
    b.load_state(a.state())
    X = rng.normal(size=(2, 6))
    np.testing.assert_array_equal(a.forward(X)[1].values, b.forward(X)[1].values)
    with pytest.raises(ValueError):
        b.load_state(a.state()[:-1])


def test_fit_normalization():
    X = np.random.default_rng(0).uniform(size=(50, 4, 4, 3))
    X[..., 2] = 0.7  # constant channel
    mean, std = fit_normalization(X)
    assert mean.shape == std.shape == (48,)
    np.testing.assert_allclose(mean.reshape(4, 4, 3)[0, 0], X.reshape(-1, 3).mean(axis=0))
    assert np.all(std.reshape(4, 4, 3)[..., 2] == 1.0)
    m2, s2 = fit_normalization(X.reshape(50, -1)[:, :5])
    assert m2.shape == (5,)
