import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from qcgan import datapipe as dp
from qcgan.datapipe import RawDataset


def _unsw_frame(n, rng):
    df = pd.DataFrame({c: rng.integers(0, 100, n).astype(str) for c in dp.UNSW_COLUMNS})
    df["proto"] = rng.choice(["tcp", "udp", "arp"], n)
    df["service"] = rng.choice(["-", "http", "dns"], n)
    df["state"] = rng.choice(["FIN", "INT", "CON"], n)
    df["attack_cat"] = rng.choice(["Normal", "Exploits"], n)
    df["label"] = rng.integers(0, 2, n).astype(str)
    return df


def test_weights_sum_to_one():
    assert dp.ENSEMBLE_WEIGHTS == {"rf": 0.35, "mi": 0.35, "l1": 0.30}
    assert sum(dp.ENSEMBLE_WEIGHTS.values()) == pytest.approx(1.0, abs=1e-15)


def test_load_unsw_csv(tmp_path, rng):
    df = _unsw_frame(50, rng)
    df.loc[7, "sbytes"] = "oops"
    df.to_csv(tmp_path / "a.csv", index=False)
    ds = dp.load_csv(tmp_path / "a.csv")
    assert len(ds) == 49 and ds.dropped_rows == 1
    assert set(ds.encodings["state"]) == {"FIN", "INT", "CON"}
    assert ds.features["state"].isin(range(3)).all()
    assert "label" not in ds.columns and "attack_cat" not in ds.columns


def test_shared_encodings_extend(tmp_path, rng):
    a, b = _unsw_frame(20, rng), _unsw_frame(20, rng)
    a["proto"] = "tcp"
    b["proto"] = "udp"
    a.to_csv(tmp_path / "a.csv", index=False)
    b.to_csv(tmp_path / "b.csv", index=False)
    da = dp.load_csv(tmp_path / "a.csv")
    db = dp.load_csv(tmp_path / "b.csv", encodings=da.encodings)
    assert db.encodings["proto"] == {"tcp": 0, "udp": 1}


def test_load_errors(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(dp.DataError, match="no rows"):
        dp.load_csv(tmp_path / "empty.csv")
    (tmp_path / "hdr.csv").write_text(",".join(dp.UNSW_COLUMNS) + "\n")
    with pytest.raises(dp.DataError, match="no rows"):
        dp.load_csv(tmp_path / "hdr.csv")
    (tmp_path / "cols.csv").write_text("a,b,label\n1,2,0\n")
    with pytest.raises(dp.DataError, match="missing columns"):
        dp.load_csv(tmp_path / "cols.csv")
    with pytest.raises(dp.DataError, match="nope.csv"):
        dp.load_csv(tmp_path / "nope.csv")


def test_synthetic_roundtrip(tmp_path):
    spec = dp.SyntheticSpec.bimodal()
    spec.n_nuisance = 2
    ds = dp.generate_synthetic(spec, 300, seed=4)
    dp.write_csv(ds, tmp_path / "s.csv")
    back = dp.load_csv(tmp_path / "s.csv", schema="generic")
    assert np.array_equal(back.matrix(), ds.matrix())
    assert np.array_equal(back.label, ds.label)
    dp.write_csv(dp.generate_synthetic(spec, 300, seed=4), tmp_path / "t.csv")
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "t.csv").read_bytes()


def test_synthetic_validation():
    spec = dp.SyntheticSpec.two_class(2.0)
    spec.attack[0].weight = 0.7
    with pytest.raises(dp.DataError, match="weights"):
        dp.generate_synthetic(spec, 10, 0)


def test_stage1_label_copy_and_noise():
    spec = dp.SyntheticSpec.two_class(3.0, n_nuisance=3)
    ds = dp.generate_synthetic(spec, 3000, seed=0)
    ds.features["leak"] = ds.label.astype(float)
    ds.features["const"] = 1.0
    scores, top = dp.stage1_screen(ds, top_k=8, n_trees=20, seed=0)
    ens = dict(zip(scores.names, scores.ensemble))
    assert top[0] == "leak" and ens["leak"] == pytest.approx(1.0)
    for j in range(3):
        assert ens[f"noise_{j}"] < 0.1
    assert ens["const"] == 0.0
    i = scores.names.index("const")
    assert scores.rf[i] == scores.mi[i] == scores.l1[i] == 0.0
    assert np.allclose(scores.ensemble, 0.35 * scores.rf + 0.35 * scores.mi + 0.30 * scores.l1, atol=1e-12)
    for view in (scores.rf, scores.mi, scores.l1, scores.ensemble):
        assert view.min() >= 0 and view.max() <= 1


def test_stage1_needs_two_classes():
    ds = RawDataset(pd.DataFrame({"a": np.arange(10.0)}), np.ones(10, int))
    with pytest.raises(dp.DataError):
        dp.stage1_screen(ds)


def test_stage2_orthogonal_variances(rng):
    n, sds = 4000, np.sqrt([8, 7, 6, 5, 4, 3, 2, 1])
    Q, _ = np.linalg.qr(rng.standard_normal((n, 8)))
    X = Q * np.sqrt(n) * sds  # exactly orthogonal columns with the given variances
    names = [f"f{i}" for i in range(8)]
    rng.shuffle(names)
    picked = dp.stage2_pca_select(X, names, k=4, standardize_first=False)
    assert set(picked) == set(names[:4])


def test_stage2_duplicates(rng):
    X = rng.standard_normal((500, 8))
    X[:, 3] = X[:, 0]
    names = [f"f{i}" for i in range(8)]
    with pytest.warns(RuntimeWarning):
        picked = dp.stage2_pca_select(X, names)
    assert len(set(picked)) == 4 and not {"f0", "f3"} <= set(picked)


def test_stage2_rank_deficient_falls_back(rng):
    X = rng.standard_normal((300, 8))
    X[:, 5] = X[:, 1] + X[:, 2]
    with pytest.warns(RuntimeWarning, match="rank-deficient"):
        picked = dp.stage2_pca_select(X, [f"f{i}" for i in range(8)])
    assert len(set(picked)) == 4


def test_stage2_excludes_id(rng):
    X = rng.standard_normal((300, 8))
    X[:, 0] = np.arange(300) * 100.0
    names = ["id"] + [f"f{i}" for i in range(7)]
    assert "id" not in dp.stage2_pca_select(X, names)


@given(st.integers(0, 2**31))
@settings(max_examples=15, deadline=None)
def test_stage2_returns_four_distinct_from_top8(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((200, 8)) @ rng.standard_normal((8, 8))
    names = [f"f{i}" for i in range(8)]
    picked = dp.stage2_pca_select(X, names)
    assert len(picked) == 4 and len(set(picked)) == 4 and set(picked) <= set(names)


def test_quantile_examples(rng):
    X = rng.standard_normal((10_001, 2))
    qt = dp.QuantileTransform().fit(X)
    med = np.median(X, axis=0)
    assert np.abs(qt.transform(med[None])).max() < 1e-12
    assert np.all(qt.transform(X.min(axis=0)[None]) == -1.0)
    T = qt.transform(X)
    for j in range(2):
        assert stats.kstest(T[:, j], stats.uniform(-1, 2).cdf).statistic < 0.02
    assert np.all(qt.transform(np.array([[1e9, -1e9]])) == [[1.0, -1.0]])


@given(arrays(float, (50, 1), elements=st.floats(-100, 100)), arrays(float, 20, elements=st.floats(-200, 200)))
def test_quantile_monotone(train, probe):
    qt = dp.QuantileTransform().fit(train)
    probe = np.sort(probe)[:, None]
    assert np.all(np.diff(qt.transform(probe)[:, 0]) >= 0)


def test_quantile_needs_ten_rows():
    with pytest.raises(dp.DataError):
        dp.QuantileTransform().fit(np.zeros((9, 2)))


def test_quantile_fit_on_train_only_matters(rng):
    train = rng.standard_normal((500, 1))
    val = rng.standard_normal((500, 1)) + 2.0
    a = dp.QuantileTransform().fit(train).transform(val)
    b = dp.QuantileTransform().fit(np.vstack([train, val])).transform(val)
    assert np.abs(a - b).max() > 0.1


def test_quantile_serialization(rng):
    qt = dp.QuantileTransform().fit(rng.standard_normal((100, 3)))
    back = dp.QuantileTransform.from_dict(qt.to_dict())
    X = rng.standard_normal((20, 3))
    assert np.array_equal(qt.transform(X), back.transform(X))


def test_split_sizes_and_stratification():
    rng = np.random.default_rng(0)

    def fake(n, p):
        return RawDataset(pd.DataFrame({"x": np.zeros(n)}), (rng.random(n) < p).astype(int))

    test_file, train_file = fake(dp.OFFICIAL_TEST_ROWS, 0.55), fake(dp.OFFICIAL_TRAIN_ROWS, 0.68)
    parts = dp.split_unsw(test_file, train_file, seed=1)
    assert (len(parts["train"]), len(parts["val"]), len(parts["test"])) == (67_512, 14_820, 175_341)
    assert abs(parts["val"].label.mean() - parts["train"].label.mean()) < 0.01
    tr, va = dp.stratified_indices(test_file.label, 67_512, 1)
    assert len(np.intersect1d(tr, va)) == 0 and len(tr) + len(va) == dp.OFFICIAL_TEST_ROWS
    with pytest.raises(dp.DataError, match="82332"):
        dp.split_unsw(fake(100, 0.5), train_file, 0)


def test_split_fractions_disjoint():
    ds = dp.generate_synthetic(dp.SyntheticSpec.bimodal(), 1000, seed=2)
    ds.features["row"] = np.arange(1000.0)
    parts = dp.split_fractions(ds, 0.2, 0.1, seed=0)
    rows = [set(p.features["row"]) for p in parts.values()]
    assert sum(map(len, rows)) == 1000 and len(set.union(*rows)) == 1000


def test_synthetic_separation_zero_is_chance():
    from qcgan import ids
    ds = dp.generate_synthetic(dp.SyntheticSpec.two_class(0.0), 2000, seed=0)
    parts = dp.split_fractions(ds, 0.0, 0.5, seed=0)
    rf = ids.train_random_forest(parts["train"].matrix(), parts["train"].label, n_trees=20, seed=0)
    acc = np.mean(rf.predict(parts["test"].matrix()) == parts["test"].label)
    assert 0.44 <= acc <= 0.56


def test_desk_dataset_shape():
    tr, va, qt = dp.desk_dataset()
    assert tr.shape == (1600, 4) and va.shape == (400, 4)
    assert tr.min() >= -1 and tr.max() <= 1
