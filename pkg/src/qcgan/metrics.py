"""Sample-based distribution distances between real and generated flows."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import pdist, cdist

KL_BINS = 50
KL_EPS = 1e-6


class MetricError(ValueError):
    pass


def _as2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def median_bandwidth(X: np.ndarray, Y: np.ndarray) -> float:
    d = pdist(np.vstack([X, Y]))
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def mmd_squared(X, Y, bandwidth: float | None = None) -> float:
    """Unbiased MMD^2 with a Gaussian kernel ``exp(-d^2 / (2 h^2))``."""
    X, Y = _as2d(X), _as2d(Y)
    if len(X) < 2 or len(Y) < 2:
        raise MetricError("mmd needs at least 2 rows in each sample")
    if X.shape[1] != Y.shape[1]:
        raise MetricError(f"width mismatch {X.shape[1]} vs {Y.shape[1]}")
    h = median_bandwidth(X, Y) if bandwidth is None else bandwidth
    gamma = 0.5 / h**2
    m, n = len(X), len(Y)
    kxx = np.exp(-gamma * pdist(X, "sqeuclidean")).sum() * 2.0 / (m * (m - 1))
    kyy = np.exp(-gamma * pdist(Y, "sqeuclidean")).sum() * 2.0 / (n * (n - 1))
    kxy = float(np.exp(-gamma * cdist(X, Y, "sqeuclidean")).sum()) / (m * n)
    return float(kxx + kyy - 2.0 * kxy)


def mmd(X, Y, bandwidth: float | None = None) -> float:
    """sqrt(max(MMD^2, 0)) with the median-distance bandwidth by default."""
    return float(np.sqrt(max(mmd_squared(X, Y, bandwidth), 0.0)))


def mmd_permutation_test(X, Y, n_permutations: int = 200, seed: int = 0) -> tuple[float, np.ndarray]:
    """Observed MMD and its null distribution under label permutation."""
    X, Y = _as2d(X), _as2d(Y)
    Z = np.vstack([X, Y])
    h = median_bandwidth(X, Y)
    rng = np.random.default_rng(seed)
    null = np.empty(n_permutations)
    for i in range(n_permutations):
        idx = rng.permutation(len(Z))
        null[i] = mmd(Z[idx[: len(X)]], Z[idx[len(X) :]], h)
    return mmd(X, Y, h), null


def _match_rows(X: np.ndarray, Y: np.ndarray, rng: np.random.Generator | None):
    if len(X) == len(Y):
        return X, Y
    rng = rng or np.random.default_rng(0)
    k = min(len(X), len(Y))
    if len(X) > k:
        X = X[np.sort(rng.choice(len(X), k, replace=False))]
    else:
        Y = Y[np.sort(rng.choice(len(Y), k, replace=False))]
    return X, Y


def wasserstein_per_feature(X, Y, rng: np.random.Generator | None = None) -> float:
    """Mean over features of the 1-D Wasserstein-1 distance (sorted pairing)."""
    X, Y = _as2d(X), _as2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise MetricError(f"width mismatch {X.shape[1]} vs {Y.shape[1]}")
    if len(X) == 0 or len(Y) == 0:
        raise MetricError("empty input")
    X, Y = _match_rows(X, Y, rng)
    return float(np.mean(np.abs(np.sort(X, axis=0) - np.sort(Y, axis=0))))


def mse_quantile_paired(X_gen, Y_real, rng: np.random.Generator | None = None) -> float:
    """Per-feature MSE between sorted columns, averaged over features."""
    X, Y = _as2d(X_gen), _as2d(Y_real)
    if len(X) == 0 or len(Y) == 0:
        raise MetricError("empty input")
    if X.shape[1] != Y.shape[1]:
        raise MetricError(f"width mismatch {X.shape[1]} vs {Y.shape[1]}")
    X, Y = _match_rows(X, Y, rng)
    return float(np.mean((np.sort(X, axis=0) - np.sort(Y, axis=0)) ** 2))


def _hist_probs(col: np.ndarray, bins: int, eps: float) -> np.ndarray:
    counts, _ = np.histogram(np.clip(col, -1.0, 1.0), bins=bins, range=(-1.0, 1.0))
    p = counts / max(len(col), 1) + eps
    return p / p.sum()


def kl_histogram(real, gen, bins: int = KL_BINS, eps: float = KL_EPS) -> float:
    """KL(P_real || Q_gen) from smoothed equal-width histograms on [-1, 1],
    averaged over features. Note the direction: real is the reference."""
    X, Y = _as2d(real), _as2d(gen)
    if X.shape[1] != Y.shape[1]:
        raise MetricError(f"width mismatch {X.shape[1]} vs {Y.shape[1]}")
    kls = []
    for j in range(X.shape[1]):
        p = _hist_probs(X[:, j], bins, eps)
        q = _hist_probs(Y[:, j], bins, eps)
        kls.append(float(np.sum(p * np.log(p / q))))
    return float(np.mean(kls))


def histogram_export(series: dict[str, np.ndarray], feature_names: list[str], bins: int = 50,
                     value_range: tuple[float, float] = (-1.0, 1.0)) -> list[dict]:
    """Per-feature normalized bin masses for each named series (e.g. "real",
    "classical", ...). Returns CSV-ready rows."""
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    rows = []
    for name, X in series.items():
        X = _as2d(X)
        if X.shape[1] != len(feature_names):
            raise MetricError(f"series {name!r} has {X.shape[1]} features, expected {len(feature_names)}")
        for j, feat in enumerate(feature_names):
            counts, _ = np.histogram(np.clip(X[:, j], *value_range), bins=edges)
            dens = counts / max(counts.sum(), 1)
            for b in range(bins):
                rows.append({
                    "series": name, "feature": feat, "bin": b,
                    "left": float(edges[b]), "right": float(edges[b + 1]), "density": float(dens[b]),
                })
    return rows


@dataclass
class MetricReport:
    mmd: float
    mse: float
    wd_mean: float
    wd_std: float
    kl_mean: float
    kl_std: float
    batch_count: int
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(real, gen, *, batch_size: int = 2000, mmd_rows: int = 2000, seed: int = 0) -> MetricReport:
    """Full metric report.

    WD and KL are computed per batch of ``batch_size`` real rows (paired with as
    many generated rows) and summarized as mean and std. MMD uses a seeded
    subsample of at most ``mmd_rows`` rows per side.
    """
    X, Y = _as2d(real), _as2d(gen)
    rng = np.random.default_rng(seed)
    Y = Y[rng.permutation(len(Y))]
    n_batches = max(len(X) // batch_size, 1)
    size = min(batch_size, len(X))
    if n_batches < 2:
        raise MetricError("at least 2 test batches are needed for std fields")
    wds, kls = [], []
    for b in range(n_batches):
        xb = X[b * size : (b + 1) * size]
        yb = Y[(b * size) % len(Y) :][:size]
        if len(yb) < size:
            yb = np.vstack([yb, Y[: size - len(yb)]])
        wds.append(wasserstein_per_feature(xb, yb))
        kls.append(kl_histogram(xb, yb))
    xs = X[np.sort(rng.choice(len(X), min(mmd_rows, len(X)), replace=False))]
    ys = Y[np.sort(rng.choice(len(Y), min(mmd_rows, len(Y)), replace=False))]
    return MetricReport(
        mmd=mmd(xs, ys),
        mse=mse_quantile_paired(Y, X, rng),
        wd_mean=float(np.mean(wds)),
        wd_std=float(np.std(wds, ddof=1)),
        kl_mean=float(np.mean(kls)),
        kl_std=float(np.std(kls, ddof=1)),
        batch_count=n_batches,
        config={"kernel": "rbf-median", "kl_bins": KL_BINS, "kl_eps": KL_EPS,
                "batch_size": batch_size, "mmd_rows": mmd_rows, "seed": seed},
    )
