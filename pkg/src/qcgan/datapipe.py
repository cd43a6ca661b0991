"""UNSW-NB15 ingestion, two-stage feature selection, quantile scaling and
splits, plus a synthetic stand-in dataset with the same shape."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .ids import RandomForest

log = logging.getLogger(__name__)

# column layout of the official UNSW-NB15 training/testing partition files
UNSW_COLUMNS = [
    "id", "dur", "proto", "service", "state", "spkts", "dpkts", "sbytes", "dbytes", "rate",
    "sttl", "dttl", "sload", "dload", "sloss", "dloss", "sinpkt", "dinpkt", "sjit", "djit",
    "swin", "stcpb", "dtcpb", "dwin", "tcprtt", "synack", "ackdat", "smean", "dmean",
    "trans_depth", "response_body_len", "ct_srv_src", "ct_state_ttl", "ct_dst_ltm",
    "ct_src_dport_ltm", "ct_dst_sport_ltm", "ct_dst_src_ltm", "is_ftp_login", "ct_ftp_cmd",
    "ct_flw_http_mthd", "ct_src_ltm", "ct_srv_dst", "is_sm_ips_ports", "attack_cat", "label",
]
CATEGORICAL = ("proto", "service", "state")
LABEL = "label"
ATTACK_CAT = "attack_cat"
REFERENCE_FEATURES = ["synack", "ct_state_ttl", "sbytes", "smean"]

OFFICIAL_TEST_ROWS = 82_332
OFFICIAL_TRAIN_ROWS = 175_341
SPLIT_SIZES = {"train": 67_512, "val": 14_820, "test": 175_341}

ENSEMBLE_WEIGHTS = {"rf": 0.35, "mi": 0.35, "l1": 0.30}


class DataError(ValueError):
    pass


@dataclass
class RawDataset:
    features: pd.DataFrame
    label: np.ndarray  # 1 attack, 0 benign
    attack_cat: np.ndarray | None = None
    encodings: dict = field(default_factory=dict)
    dropped_rows: int = 0

    def __len__(self) -> int:
        return len(self.label)

    @property
    def columns(self) -> list[str]:
        return list(self.features.columns)

    def take(self, idx) -> "RawDataset":
        idx = np.asarray(idx)
        return RawDataset(
            self.features.iloc[idx].reset_index(drop=True),
            self.label[idx],
            None if self.attack_cat is None else self.attack_cat[idx],
            self.encodings,
        )

    def matrix(self, columns: list[str] | None = None) -> np.ndarray:
        cols = columns or self.columns
        return self.features[cols].to_numpy(dtype=float)


# --- CSV I/O -----------------------------------------------------------------


def load_csv(paths, *, schema: str = "unsw", encodings: dict | None = None) -> RawDataset:
    """Read one or more CSV files into a single dataset.

    ``schema="unsw"`` requires every official column; ``"generic"`` only needs
    a ``label`` column and treats every other non-``attack_cat`` column as a
    feature. Categorical columns are label-encoded; the mapping is extended
    in sorted order and returned in ``encodings``. Rows with unparseable
    numeric cells are dropped and reported by line number.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    frames = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise DataError(f"no such file: {p}")
        try:
            df = pd.read_csv(p, dtype=str, keep_default_na=False, encoding="utf-8")
        except pd.errors.EmptyDataError:
            raise DataError(f"{p}: no rows") from None
        df.columns = [c.strip() for c in df.columns]
        if len(df) == 0:
            raise DataError(f"{p}: no rows")
        required = UNSW_COLUMNS if schema == "unsw" else [LABEL]
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise DataError(f"{p}: missing columns {missing}")
        df["__line__"] = np.arange(len(df)) + 2
        df["__file__"] = str(p)
        frames.append(df)
    df = pd.concat(frames, ignore_index=True)

    encodings = {k: dict(v) for k, v in (encodings or {}).items()}
    feat_cols = [c for c in df.columns if c not in (LABEL, ATTACK_CAT, "__line__", "__file__")]
    cat_cols = [c for c in feat_cols if c in CATEGORICAL] if schema == "unsw" else []
    out = pd.DataFrame(index=df.index)
    bad = np.zeros(len(df), dtype=bool)
    for c in feat_cols:
        if c in cat_cols:
            mapping = encodings.setdefault(c, {})
            for v in sorted(set(df[c]) - set(mapping)):
                mapping[v] = len(mapping)
            out[c] = df[c].map(mapping).astype(float)
        else:
            raw = df[c].str.strip()
            ok = pd.to_numeric(raw, errors="coerce").notna().to_numpy()
            col = np.full(len(raw), np.nan)
            col[ok] = raw[ok].to_numpy().astype(float)  # exact decimal parse
            bad |= ~ok
            out[c] = col
    lab = pd.to_numeric(df[LABEL].str.strip(), errors="coerce")
    bad |= ~lab.isin([0, 1]).to_numpy()
    if bad.any():
        where = df.loc[bad, ["__file__", "__line__"]].head(20).itertuples(index=False)
        log.warning("dropped %d unparseable rows, first at %s", int(bad.sum()),
                    ", ".join(f"{f}:{l}" for f, l in where))
    keep = ~bad
    if not keep.any():
        raise DataError("no rows left after parsing")
    return RawDataset(
        out[keep].reset_index(drop=True),
        lab[keep].to_numpy().astype(int),
        df.loc[keep, ATTACK_CAT].to_numpy() if ATTACK_CAT in df.columns else None,
        encodings,
        int(bad.sum()),
    )


def write_csv(ds: RawDataset, path) -> None:
    df = ds.features.copy()
    if ds.attack_cat is not None:
        df[ATTACK_CAT] = ds.attack_cat
    df[LABEL] = ds.label
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# --- synthetic data ----------------------------------------------------------


@dataclass
class MixtureComponent:
    weight: float
    mean: list[float]
    scale: list[float]


@dataclass
class SyntheticSpec:
    """Per-class Gaussian mixtures over ``feature_names`` plus pure-noise
    nuisance columns."""

    attack: list[MixtureComponent]
    benign: list[MixtureComponent]
    attack_fraction: float = 0.5
    n_nuisance: int = 0
    feature_names: list[str] = field(default_factory=lambda: list(REFERENCE_FEATURES))

    @classmethod
    def two_class(cls, separation: float, n_features: int = 4, n_nuisance: int = 0) -> "SyntheticSpec":
        names = REFERENCE_FEATURES if n_features == 4 else [f"f{i}" for i in range(n_features)]
        half = separation / 2
        return cls(
            attack=[MixtureComponent(1.0, [half] * n_features, [1.0] * n_features)],
            benign=[MixtureComponent(1.0, [-half] * n_features, [1.0] * n_features)],
            n_nuisance=n_nuisance,
            feature_names=list(names),
        )

    @classmethod
    def bimodal(cls) -> "SyntheticSpec":
        """Two-mode attack class with correlated coordinates; benign unimodal."""
        return cls(
            attack=[
                MixtureComponent(0.6, [-1.5, -1.0, 1.0, 0.5], [0.5, 0.4, 0.6, 0.5]),
                MixtureComponent(0.4, [1.5, 1.0, -0.5, -1.0], [0.4, 0.5, 0.5, 0.6]),
            ],
            benign=[MixtureComponent(1.0, [0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0])],
        )

    def validate(self) -> None:
        d = len(self.feature_names)
        for cls_name, comps in (("attack", self.attack), ("benign", self.benign)):
            if not comps:
                raise DataError(f"{cls_name}: no mixture components")
            w = np.array([c.weight for c in comps], dtype=float)
            if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
                raise DataError(f"{cls_name}: mixture weights must be non-negative and sum to 1, got {w.tolist()}")
            for c in comps:
                if len(c.mean) != d or len(c.scale) != d or min(c.scale) < 0:
                    raise DataError(f"{cls_name}: component shape does not match {d} features")
        if not 0.0 <= self.attack_fraction <= 1.0:
            raise DataError("attack_fraction must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        comps = lambda lst: [MixtureComponent(**c) for c in lst]
        return cls(comps(d["attack"]), comps(d["benign"]), d.get("attack_fraction", 0.5),
                   d.get("n_nuisance", 0), d.get("feature_names", list(REFERENCE_FEATURES)))


def _sample_mixture(comps, n, rng) -> np.ndarray:
    w = np.array([c.weight for c in comps])
    which = rng.choice(len(comps), size=n, p=w / w.sum())
    means = np.array([c.mean for c in comps])[which]
    scales = np.array([c.scale for c in comps])[which]
    return means + scales * rng.standard_normal(means.shape)


def generate_synthetic(spec: SyntheticSpec, n: int, seed: int) -> RawDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    label = (rng.random(n) < spec.attack_fraction).astype(int)
    X = np.empty((n, len(spec.feature_names)))
    n_att = int(label.sum())
    X[label == 1] = _sample_mixture(spec.attack, n_att, rng)
    X[label == 0] = _sample_mixture(spec.benign, n - n_att, rng)
    df = pd.DataFrame(X, columns=spec.feature_names)
    for j in range(spec.n_nuisance):
        df[f"noise_{j}"] = rng.standard_normal(n)
    return RawDataset(df, label)


# --- stage 1 -----------------------------------------------------------------


@dataclass
class FeatureScores:
    names: list[str]
    rf: np.ndarray
    mi: np.ndarray
    l1: np.ndarray
    ensemble: np.ndarray

    def ranking(self) -> list[str]:
        order = np.argsort(-self.ensemble, kind="stable")
        return [self.names[i] for i in order]

    def to_dict(self) -> dict:
        return {n: {"rf": float(a), "mi": float(b), "l1": float(c), "ensemble": float(e)}
                for n, a, b, c, e in zip(self.names, self.rf, self.mi, self.l1, self.ensemble)}


def minmax(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    lo, hi = s.min(), s.max()
    return np.zeros_like(s) if hi - lo <= 0 else (s - lo) / (hi - lo)


def equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    edges = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def mutual_information(x: np.ndarray, y: np.ndarray, bins: int = 32) -> float:
    """Plug-in MI (nats) between an equal-frequency-binned feature and labels."""
    bx = equal_frequency_bins(x, bins)
    _, by = np.unique(y, return_inverse=True)
    joint = np.zeros((bx.max() + 1, by.max() + 1))
    np.add.at(joint, (bx, by), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))


def standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return np.where(sd > 0, (X - mu) / np.where(sd > 0, sd, 1.0), 0.0)


def l1_logistic(X: np.ndarray, y: np.ndarray, lam: float, w0=None, b0=None, n_iter: int = 300):
    """Proximal gradient (ISTA) for mean logistic loss + lam * ||w||_1."""
    n, d = X.shape
    L = (np.linalg.norm(X, 2) ** 2 / n + 1.0) / 4.0
    step = 1.0 / L
    w = np.zeros(d) if w0 is None else w0.copy()
    b = float(np.log(y.mean() / (1 - y.mean()))) if b0 is None else b0
    for _ in range(n_iter):
        p = 0.5 * (1.0 + np.tanh(0.5 * (X @ w + b)))
        r = p - y
        w = w - step * (X.T @ r) / n
        b = b - step * r.mean()
        w = np.sign(w) * np.maximum(np.abs(w) - step * lam, 0.0)
    return w, b


def l1_scores(X: np.ndarray, y: np.ndarray, target_fraction: float = 0.5, n_search: int = 16) -> np.ndarray:
    """|coef| of L1 logistic regression on standardized features, with the
    penalty tuned by bisection so about ``target_fraction`` of coefficients
    are nonzero."""
    Z = standardize(X)
    n, d = Z.shape
    target = max(1, int(np.ceil(target_fraction * d)))
    lam_max = np.max(np.abs(Z.T @ (y - y.mean()))) / n
    if lam_max <= 0:
        return np.zeros(d)
    lo, hi = np.log(lam_max * 1e-4), np.log(lam_max)
    best = None
    w, b = None, None
    for _ in range(n_search):
        mid = 0.5 * (lo + hi)
        w, b = l1_logistic(Z, y, np.exp(mid), w, b)
        nnz = int(np.count_nonzero(w))
        if best is None or abs(nnz - target) < abs(best[0] - target) or (nnz == target):
            best = (nnz, w.copy())
        if nnz == target:
            break
        if nnz > target:
            lo = mid
        else:
            hi = mid
    return np.abs(best[1])


def stage1_screen(ds: RawDataset, *, top_k: int = 8, n_trees: int = 50, max_depth: int = 8,
                  mi_bins: int = 32, max_rows: int | None = 20_000, seed: int = 0):
    """Score every feature by RF Gini importance, binned MI and L1 logistic
    |coef|; min-max normalize each view and combine 0.35/0.35/0.30.

    Returns ``(FeatureScores, top_k_names)``.
    """
    if len(np.unique(ds.label)) < 2:
        raise DataError("stage-1 screening needs both classes")
    X = ds.matrix()
    y = ds.label.astype(int)
    if max_rows is not None and len(y) > max_rows:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(y), max_rows, replace=False))
        X, y = X[idx], y[idx]
    const = X.std(axis=0) == 0
    rf = RandomForest(n_trees=n_trees, max_depth=max_depth, seed=seed).fit(X, y).feature_importances_
    mi = np.array([0.0 if const[j] else mutual_information(X[:, j], y, mi_bins) for j in range(X.shape[1])])
    l1 = l1_scores(X, y)
    for s in (rf, mi, l1):
        s[const] = 0.0
    rf_n, mi_n, l1_n = minmax(rf), minmax(mi), minmax(l1)
    ens = ENSEMBLE_WEIGHTS["rf"] * rf_n + ENSEMBLE_WEIGHTS["mi"] * mi_n + ENSEMBLE_WEIGHTS["l1"] * l1_n
    scores = FeatureScores(ds.columns, rf_n, mi_n, l1_n, ens)
    return scores, scores.ranking()[:top_k]


# --- stage 2 -----------------------------------------------------------------


def stage2_pca_select(X, names: list[str], *, k: int = 4, corr_threshold: float = 0.9,
                      standardize_first: bool = True, exclude=("id",)) -> list[str]:
    """Pick ``k`` complementary features.

    Walk the principal components in order of explained variance and take,
    from each, the eligible feature with the largest absolute loading. A
    feature is ineligible if already chosen or if its |Pearson r| with a chosen
    feature exceeds ``corr_threshold``. Passes repeat until ``k`` are chosen.
    A rank-deficient covariance falls back to variance ranking (same filter).
    """
    X = np.asarray(X, dtype=float)
    keep = [i for i, n in enumerate(names) if n not in exclude]
    X = X[:, keep]
    names = [names[i] for i in keep]
    d = len(names)
    if d < k:
        raise DataError(f"need at least {k} candidate features, got {d}")
    Z = standardize(X) if standardize_first else X - X.mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.nan_to_num(np.corrcoef(X, rowvar=False), nan=0.0)
    cov = np.cov(Z, rowvar=False)

    chosen: list[int] = []

    def eligible(j):
        return j not in chosen and all(abs(corr[j, c]) <= corr_threshold for c in chosen)

    if np.linalg.matrix_rank(cov) < d:
        warnings.warn("stage2: rank-deficient covariance, falling back to variance ranking", RuntimeWarning)
        for j in np.argsort(-np.diag(cov), kind="stable"):
            if len(chosen) < k and eligible(j):
                chosen.append(int(j))
    else:
        evals, evecs = np.linalg.eigh(cov)
        comp_order = np.argsort(-evals, kind="stable")
        for _ in range(d):
            progressed = False
            for c in comp_order:
                if len(chosen) == k:
                    break
                load = np.abs(evecs[:, c])
                for j in np.argsort(-load, kind="stable"):
                    if eligible(j):
                        chosen.append(int(j))
                        progressed = True
                        break
            if len(chosen) == k or not progressed:
                break
    if len(chosen) < k:
        warnings.warn("stage2: correlation filter left too few features; filling by variance", RuntimeWarning)
        for j in np.argsort(-np.diag(cov), kind="stable"):
            if len(chosen) < k and j not in chosen:
                chosen.append(int(j))
    return [names[j] for j in chosen]


# --- quantile transform ------------------------------------------------------


@dataclass
class QuantileTransform:
    """Per-feature empirical-CDF map to [-1, 1], fit on training rows only."""

    quantiles: np.ndarray | None = None  # (n_q, d)
    references: np.ndarray | None = None  # (n_q,)
    n_quantiles: int = 1001

    def fit(self, X) -> "QuantileTransform":
        X = np.asarray(X, dtype=float)
        if len(X) < 10:
            raise DataError(f"quantile transform needs at least 10 training rows, got {len(X)}")
        nq = min(self.n_quantiles, len(X))
        nq -= (nq + 1) % 2  # odd count keeps 0.5 on the reference grid
        self.references = np.linspace(0.0, 1.0, nq)
        self.quantiles = np.quantile(X, self.references, axis=0)
        return self

    def transform(self, X) -> np.ndarray:
        if self.quantiles is None:
            raise DataError("transform is not fitted")
        X = np.asarray(X, dtype=float)
        out = np.empty_like(X)
        r = self.references
        for j in range(X.shape[1]):
            q = self.quantiles[:, j]
            # average of forward and reverse interpolation handles repeated quantiles
            u = 0.5 * (np.interp(X[:, j], q, r) - np.interp(-X[:, j], -q[::-1], -r[::-1]))
            out[:, j] = 2.0 * u - 1.0
        return out

    def to_dict(self) -> dict:
        return {"n_quantiles": self.n_quantiles, "references": self.references.tolist(),
                "quantiles": self.quantiles.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileTransform":
        return cls(np.array(d["quantiles"], dtype=float), np.array(d["references"], dtype=float),
                   d["n_quantiles"])


def fit_apply_quantile(train, *others):
    qt = QuantileTransform().fit(train)
    return qt, [qt.transform(train)] + [qt.transform(o) for o in others]


# --- splits ------------------------------------------------------------------


def stratified_indices(labels: np.ndarray, first_size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split indices into (first, rest) with ``first_size`` rows, stratified by label."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    n = len(labels)
    classes = np.unique(labels)
    quota = {c: (labels == c).sum() * first_size / n for c in classes}
    take = {c: int(np.floor(q)) for c, q in quota.items()}
    short = first_size - sum(take.values())
    for c in sorted(classes, key=lambda c: -(quota[c] - take[c]))[:short]:
        take[c] += 1
    first = []
    for c in classes:
        idx = rng.permutation(np.nonzero(labels == c)[0])
        first.append(idx[: take[c]])
    first = np.sort(np.concatenate(first))
    rest = np.setdiff1d(np.arange(n), first)
    return first, rest


def split_unsw(official_test: RawDataset, official_train: RawDataset, seed: int) -> dict[str, RawDataset]:
    """Train/val from the 82,332-row file (stratified), test = the 175,341-row file."""
    if len(official_test) != OFFICIAL_TEST_ROWS or len(official_train) != OFFICIAL_TRAIN_ROWS:
        raise DataError(
            f"expected source sizes {OFFICIAL_TEST_ROWS} (testing file) and {OFFICIAL_TRAIN_ROWS} "
            f"(training file), got {len(official_test)} and {len(official_train)}"
        )
    tr, va = stratified_indices(official_test.label, SPLIT_SIZES["train"], seed)
    return {"train": official_test.take(tr), "val": official_test.take(va), "test": official_train}


def desk_dataset(n: int = 2000, seed: int = 7, val_fraction: float = 0.2):
    """Attack-only bimodal synthetic rows, quantile scaled: ``(train, val, transform)``."""
    spec = SyntheticSpec.bimodal()
    spec.attack_fraction = 1.0
    parts = split_fractions(generate_synthetic(spec, n, seed), val_fraction, 0.0, seed)
    qt, (tr, va) = fit_apply_quantile(parts["train"].matrix(), parts["val"].matrix())
    return tr, va, qt


def split_fractions(ds: RawDataset, val_fraction: float, test_fraction: float, seed: int) -> dict[str, RawDataset]:
    n = len(ds)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    rest, test = stratified_indices(ds.label, n - n_test, seed)
    sub = ds.take(rest)
    tr, va = stratified_indices(sub.label, len(rest) - n_val, seed + 1)
    return {"train": sub.take(tr), "val": sub.take(va), "test": ds.take(test)}
