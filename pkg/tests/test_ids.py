import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcgan import datapipe as dp
from qcgan import ids

from conftest import central_diff, rel_err


@pytest.fixture(scope="module")
def separable():
    ds = dp.generate_synthetic(dp.SyntheticSpec.two_class(8.0), 3000, seed=1)
    parts = dp.split_fractions(ds, 0.0, 0.3, seed=1)
    return parts["train"].matrix(), parts["train"].label, parts["test"].matrix(), parts["test"].label


class Const:
    def __init__(self, v):
        self.v = v

    def predict(self, X):
        return np.full(len(X), self.v)


class Coin:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def predict(self, X):
        return self.rng.integers(0, 2, len(X))


@pytest.mark.parametrize("train", [
    lambda X, y: ids.train_random_forest(X, y, n_trees=30, seed=0),
    lambda X, y: ids.train_boosted_trees(X, y, n_rounds=50),
    lambda X, y: ids.train_cnn1d(X, y, epochs=10, seed=0),
], ids=["rf", "boost", "cnn"])
def test_separable_accuracy(separable, train):
    X, y, Xt, yt = separable
    model = train(X, y)
    assert np.mean(model.predict(Xt) == yt) > 0.99


def test_rf_noise_labels():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((2000, 4))
    y = rng.integers(0, 2, 2000)
    rf = ids.train_random_forest(X[:1000], y[:1000], n_trees=30, seed=0)
    assert 0.45 <= np.mean(rf.predict(X[1000:]) == y[1000:]) <= 0.55


def test_depth_zero_is_majority(rng):
    X = rng.standard_normal((100, 3))
    y = (np.arange(100) < 70).astype(int)
    rf = ids.train_random_forest(X, y, n_trees=5, max_depth=0, bootstrap=False)
    assert np.all(rf.predict(X) == 1)


def test_rf_beats_majority_on_train(rng):
    X = rng.standard_normal((300, 4))
    y = (X[:, 0] + 0.5 * rng.standard_normal(300) > 0.3).astype(int)
    rf = ids.train_random_forest(X, y, n_trees=20, seed=2)
    assert np.mean(rf.predict(X) == y) >= max(y.mean(), 1 - y.mean())


def test_single_class_rejected(rng):
    X = rng.standard_normal((10, 2))
    for fit in (ids.train_random_forest, ids.train_boosted_trees, ids.train_cnn1d):
        with pytest.raises(ids.IDSError, match="both classes"):
            fit(X, np.ones(10, int))


def test_stump_on_step_data():
    x = np.linspace(0, 1, 41)[:, None]
    y = (x[:, 0] > 0.3).astype(int)
    model = ids.train_boosted_trees(x, y, n_rounds=1, max_depth=1)
    tree = model.trees[0]
    # only thresholds between the last benign and first attack sample separate the classes
    lo, hi = x[y == 0, 0].max(), x[y == 1, 0].min()
    assert tree.feature[0] == 0 and lo <= tree.threshold[0] < hi


def test_boost_loss_non_increasing(rng):
    X = rng.standard_normal((400, 4))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    m = ids.train_boosted_trees(X, y, n_rounds=40)
    assert np.all(np.diff(m.train_loss_) <= 1e-12)


def test_leaf_weight_formula():
    # a depth-0 tree has one leaf with weight -G / (H + lambda)
    X = np.zeros((4, 1))
    g = np.array([0.5, -0.2, 0.1, 0.3])
    h = np.array([0.25, 0.2, 0.1, 0.3])
    tree = ids.fit_newton_tree(X, g, h, [np.arange(4)], max_depth=0, reg_lambda=1.0)
    assert tree.value[0] == pytest.approx(-g.sum() / (h.sum() + 1.0))


def test_forests_deterministic(separable):
    X, y, Xt, _ = separable
    a = ids.train_random_forest(X, y, n_trees=10, seed=5).predict_votes(Xt)
    b = ids.train_random_forest(X, y, n_trees=10, seed=5).predict_votes(Xt)
    assert np.array_equal(a, b)
    p = ids.train_boosted_trees(X, y, n_rounds=10).predict_proba(Xt)
    q = ids.train_boosted_trees(X, y, n_rounds=10).predict_proba(Xt)
    assert np.array_equal(p, q)


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((5, 4))
    out = ids.conv1d_forward(x, np.array([[1.0, 0.0]]), np.zeros(1))
    assert np.array_equal(out[:, 0, :], x[:, :3])


def test_conv_gradients(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((5, 2))
    b = rng.standard_normal(5)
    G = rng.standard_normal((3, 5, 3))
    dw, db, dx = ids.conv1d_backward(x, w, G)
    f = lambda xx, ww, bb: float(np.sum(G * ids.conv1d_forward(xx, ww, bb)))
    assert rel_err(dw, central_diff(lambda v: f(x, v, b), w)) <= 1e-5
    assert rel_err(db, central_diff(lambda v: f(x, w, v), b)) <= 1e-5
    assert rel_err(dx, central_diff(lambda v: f(v, w, b), x)) <= 1e-5


def test_cnn_loss_gradients(rng):
    cnn = ids.CNN1D(channels=4)
    cnn.init(rng)
    for p in cnn.params:
        p += rng.normal(0, 0.1, p.shape)
    X = rng.standard_normal((6, 4))
    y = rng.integers(0, 2, 6).astype(float)
    _, grads = cnn.loss_and_grads(X, y)
    for i, p in enumerate(cnn.params):
        def f(v, i=i):
            ps = [q.copy() for q in cnn.params]
            ps[i] = v
            return cnn.loss_and_grads(X, y, ps)[0]
        assert rel_err(grads[i], central_diff(f, p)) <= 1e-5


def test_degenerate_classifiers():
    A, N = np.zeros((8000, 4)), np.ones((8000, 4))
    always, never = ids.evaluate_evasion({"a": Const(1), "n": Const(0)}, A, N)
    assert (always.dr, always.asr) == (1.0, 0.0) and always.f1 == pytest.approx(2 * 0.5 / 1.5, abs=1e-15)
    assert (never.dr, never.asr, never.f1) == (0.0, 1.0, 0.0)


def test_coin_detection_rate():
    r, = ids.evaluate_evasion({"coin": Coin(3)}, np.zeros((8000, 4)), np.zeros((8000, 4)))
    assert abs(r.dr - 0.5) <= 0.02


@given(st.integers(0, 2**31), st.integers(1, 300), st.integers(1, 300))
@settings(max_examples=40, deadline=None)
def test_asr_dr_and_f1_consistency(seed, na, nb):
    rng = np.random.default_rng(seed)
    r, = ids.evaluate_evasion({"c": Coin(seed)}, rng.standard_normal((na, 2)), rng.standard_normal((nb, 2)))
    assert r.asr + r.dr == 1.0
    assert r.tp + r.fn == na and r.fp + r.tn == nb
    assert abs(r.f1 - 2 * r.tp / (2 * r.tp + r.fp + r.fn)) <= 1e-12 if r.tp else r.f1 == 0


def test_evaluate_empty():
    with pytest.raises(ids.IDSError):
        ids.evaluate_evasion({"a": Const(1)}, np.zeros((0, 4)), np.zeros((3, 4)))


def test_threshold_tie_goes_to_attack():
    assert ids._decide(np.array([0.5, 0.4999]))[0] == 1


def test_protocol_balance(rng):
    X = rng.standard_normal((30_000, 4))
    y = (rng.random(30_000) < 0.5).astype(int)
    gen = rng.standard_normal((9000, 4)) + 100
    (Xtr, ytr), G, B = ids.EvasionProtocol(8000, seed=1).build(X, y, gen)
    assert Xtr.shape == (16_000, 4) and ytr.sum() == 8000
    assert G.shape == B.shape == (8000, 4)
    assert np.all(G > 50) and not np.any(Xtr > 50)


def test_model_serialization(separable):
    X, y, Xt, _ = separable
    models = ids.train_all(X, y, seed=0, rf={"n_trees": 5}, boost={"n_rounds": 5}, cnn={"epochs": 2})
    for m in models.values():
        back = ids.model_from_dict(ids.model_to_dict(m))
        assert np.array_equal(back.predict_proba(Xt), m.predict_proba(Xt))
