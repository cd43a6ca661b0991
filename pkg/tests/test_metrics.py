import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qcgan import metrics

finite = st.floats(-1, 1, allow_nan=False)
samples = arrays(float, st.tuples(st.integers(2, 40), st.just(3)), elements=finite)


def test_mmd_identical_shuffled(rng):
    X = rng.standard_normal((500, 4))
    assert metrics.mmd(X, X[rng.permutation(500)]) <= 0.01


def test_mmd_separated(rng):
    X = rng.standard_normal((500, 4))
    Y = rng.standard_normal((500, 4)) + 5
    assert metrics.mmd(X, Y) > 0.5


def test_mmd_matches_brute_force(rng):
    X, Y = rng.standard_normal((30, 2)), rng.standard_normal((25, 2)) + 0.5
    Z = np.vstack([X, Y])
    d = np.sqrt(((Z[:, None] - Z[None]) ** 2).sum(-1))
    h = np.median(d[np.triu_indices(len(Z), 1)])
    k = lambda A, B: np.exp(-((A[:, None] - B[None]) ** 2).sum(-1) / (2 * h * h))
    kxx, kyy = k(X, X), k(Y, Y)
    m, n = len(X), len(Y)
    mmd2 = ((kxx.sum() - np.trace(kxx)) / (m * (m - 1)) + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
            - 2 * k(X, Y).mean())
    assert metrics.mmd_squared(X, Y) == pytest.approx(mmd2, abs=1e-12)


def test_mmd_permutation_null(rng):
    Z = rng.standard_normal((200, 4))
    obs, null = metrics.mmd_permutation_test(Z[:100], Z[100:], 200, seed=1)
    assert obs < np.percentile(null, 95)


@given(samples, samples)
@settings(max_examples=40, deadline=None)
def test_mmd_symmetry_and_sign(X, Y):
    assert abs(metrics.mmd(X, Y) - metrics.mmd(Y, X)) < 1e-12
    assert metrics.mmd(X, Y) >= 0


def test_mmd_errors():
    with pytest.raises(metrics.MetricError):
        metrics.mmd(np.zeros((1, 2)), np.zeros((5, 2)))
    with pytest.raises(metrics.MetricError):
        metrics.mmd(np.zeros((3, 2)), np.zeros((3, 3)))


def test_wasserstein_examples(rng):
    X = rng.uniform(-1, 1, (100, 4))
    assert metrics.wasserstein_per_feature(X, X) == 0.0
    assert metrics.wasserstein_per_feature([[0.0], [1.0]], [[1.0], [2.0]]) == 1.0
    with pytest.raises(metrics.MetricError):
        metrics.wasserstein_per_feature(np.zeros((3, 2)), np.zeros((3, 3)))


@given(arrays(float, (20, 3), elements=finite), st.floats(-5, 5))
def test_wasserstein_translation(X, c):
    assert abs(metrics.wasserstein_per_feature(X, X + c) - abs(c)) <= 1e-9


def test_wasserstein_subsamples_larger(rng):
    X = rng.uniform(size=(50, 2))
    Y = np.vstack([X, X])
    assert metrics.wasserstein_per_feature(Y, X, np.random.default_rng(0)) >= 0


def test_kl_examples(rng):
    X = rng.uniform(-1, 1, (1000, 4))
    assert metrics.kl_histogram(X, X) <= 1e-6
    A = rng.uniform(-1, -0.01, (1000, 1))
    B = rng.uniform(0.01, 1, (1000, 1))
    assert metrics.kl_histogram(A, B) > 5


def test_kl_direction():
    # two-bin oracle: mass (0.9, 0.1) vs (0.5, 0.5)
    P = np.r_[np.full(90, -0.5), np.full(10, 0.5)][:, None]
    Q = np.r_[np.full(50, -0.5), np.full(50, 0.5)][:, None]
    eps = 1e-6

    def kl(p, q):
        p, q = p + eps, q + eps
        p, q = p / p.sum(), q / q.sum()
        return float(np.sum(p * np.log(p / q)))

    p = np.array([0.9, 0.1])
    q = np.array([0.5, 0.5])
    # with 2 bins both histograms fill exactly these two bins
    assert metrics.kl_histogram(P, Q, bins=2) == pytest.approx(kl(p, q), rel=1e-9)
    assert metrics.kl_histogram(Q, P, bins=2) == pytest.approx(kl(q, p), rel=1e-9)
    assert metrics.kl_histogram(P, Q, bins=2) != pytest.approx(metrics.kl_histogram(Q, P, bins=2))


def test_mse_examples(rng):
    X = rng.standard_normal((100, 3))
    assert metrics.mse_quantile_paired(X, X) == 0.0
    assert metrics.mse_quantile_paired([[0.0], [0.0]], [[1.0], [1.0]]) == 1.0
    with pytest.raises(metrics.MetricError):
        metrics.mse_quantile_paired(np.zeros((0, 2)), np.zeros((3, 2)))


@given(arrays(float, (15, 2), elements=finite), arrays(float, (15, 2), elements=finite), st.integers(0, 1000))
def test_mse_permutation_invariant(X, Y, seed):
    p = np.random.default_rng(seed).permutation(15)
    assert metrics.mse_quantile_paired(X[p], Y) == metrics.mse_quantile_paired(X, Y)


@given(samples, samples)
@settings(max_examples=30, deadline=None)
def test_all_metrics_nonnegative(X, Y):
    assert metrics.wasserstein_per_feature(X, Y) >= 0
    assert metrics.mse_quantile_paired(X, Y) >= 0
    assert metrics.kl_histogram(X, Y) >= -1e-12


def test_histogram_export(rng):
    names = ["a", "b"]
    rows = metrics.histogram_export({"real": rng.uniform(-1, 1, (500, 2)), "const": np.zeros((50, 2)),
                                     "narrow": rng.normal(0, 0.1, (5000, 2))}, names, bins=50)
    for series in ("real", "const", "narrow"):
        for f in names:
            dens = [r["density"] for r in rows if r["series"] == series and r["feature"] == f]
            assert len(dens) == 50 and abs(sum(dens) - 1) < 1e-9
            if series == "const":
                assert sum(d > 0 for d in dens) == 1
            if series == "narrow":
                assert abs(int(np.argmax(dens)) - 24.5) <= 1.5


def test_evaluate_report(rng):
    real = rng.uniform(-1, 1, (4000, 4))
    gen = rng.uniform(-1, 1, (4000, 4))
    r = metrics.evaluate(real, gen, batch_size=2000, seed=3)
    assert r.batch_count == 2
    assert min(r.mmd, r.mse, r.wd_mean, r.wd_std, r.kl_mean, r.kl_std) >= 0
    assert metrics.evaluate(real, gen, seed=3) == r
    with pytest.raises(metrics.MetricError, match="2 test batches"):
        metrics.evaluate(real[:3000], gen)
