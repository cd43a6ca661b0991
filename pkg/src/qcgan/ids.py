"""Surrogate intrusion detectors and the evasion evaluation protocol.

Labels are 1 for attack and 0 for benign. Every model exposes
``predict_proba(X)`` (probability of attack) and ``predict(X)``; the decision
threshold is 0.5 with ties going to "attack".
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .neural import AdamState, adam_step

THRESHOLD = 0.5


class IDSError(ValueError):
    pass


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or len(X) != len(y):
        raise IDSError(f"bad shapes X={X.shape} y={y.shape}")
    if len(np.unique(y)) < 2:
        raise IDSError("training data must contain both classes")
    return X, y


def _decide(p: np.ndarray) -> np.ndarray:
    return (p >= THRESHOLD).astype(int)


# --- CART classification tree ----------------------------------------------


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # attack fraction at the node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]

    @property
    def node_count(self) -> int:
        return len(self.feature)


def _gini_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best threshold on one feature. Returns (impurity_decrease_weighted, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    pos_left = np.cumsum(ys)[:-1]
    n_left = np.arange(1, n)
    n_right = n - n_left
    pos_right = ys.sum() - pos_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not np.any(valid):
        return None
    pl = pos_left / n_left
    pr = pos_right / n_right
    gini_l = 2.0 * pl * (1.0 - pl)
    gini_r = 2.0 * pr * (1.0 - pr)
    child = (n_left * gini_l + n_right * gini_r)
    child = np.where(valid, child, np.inf)
    k = int(np.argmin(child))
    p = ys.mean()
    parent = n * 2.0 * p * (1.0 - p)
    return parent - child[k], 0.5 * (xs[k] + xs[k + 1])


def fit_tree(X: np.ndarray, y: np.ndarray, *, max_depth: int, max_features: int | None,
             rng: np.random.Generator, min_samples_leaf: int = 1, importances: np.ndarray | None = None) -> Tree:
    d = X.shape[1]
    feat, thr, left, right, val = [], [], [], [], []

    def new_node(idx):
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(float(y[idx].mean()))
        return len(feat) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        if depth >= max_depth or len(idx) < 2 * min_samples_leaf or yi.min() == yi.max():
            continue
        cands = rng.permutation(d)[:max_features] if max_features else np.arange(d)
        best = None
        for f in cands:
            res = _gini_split(X[idx, f], yi, min_samples_leaf)
            if res is not None and (best is None or res[0] > best[0]):
                best = (res[0], f, res[1])
        if best is None or best[0] <= 0:
            continue
        gain, f, t = best
        if importances is not None:
            importances[f] += gain
        mask = X[idx, f] <= t
        li, ri = idx[mask], idx[~mask]
        feat[node], thr[node] = int(f), float(t)
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feat), np.array(thr), np.array(left), np.array(right), np.array(val))


@dataclass
class RandomForest:
    n_trees: int = 100
    max_depth: int = 12
    max_features: str | int = "sqrt"
    bootstrap: bool = True
    min_samples_leaf: int = 1
    seed: int = 0
    trees: list = field(default_factory=list, repr=False)
    feature_importances_: np.ndarray | None = field(default=None, repr=False)

    def fit(self, X, y) -> "RandomForest":
        X, y = _check_xy(X, y)
        rng = np.random.default_rng(self.seed)
        d = X.shape[1]
        mf = max(1, int(np.sqrt(d))) if self.max_features == "sqrt" else (self.max_features or d)
        self.trees = []
        imp = np.zeros(d)
        for _ in range(self.n_trees):
            idx = rng.integers(0, len(y), len(y)) if self.bootstrap else np.arange(len(y))
            ti = np.zeros(d)
            tree = fit_tree(X[idx], y[idx], max_depth=self.max_depth, max_features=mf, rng=rng,
                            min_samples_leaf=self.min_samples_leaf, importances=ti)
            if ti.sum() > 0:
                imp += ti / ti.sum()
            self.trees.append(tree)
        self.feature_importances_ = imp / imp.sum() if imp.sum() > 0 else imp
        return self

    def predict_votes(self, X) -> np.ndarray:
        """Fraction of trees voting attack."""
        X = np.asarray(X, dtype=float)
        votes = np.zeros(len(X))
        for tree in self.trees:
            votes += _decide(tree.predict_proba(X))
        return votes / len(self.trees)

    predict_proba = predict_votes

    def predict(self, X) -> np.ndarray:
        return _decide(self.predict_votes(X))


def train_random_forest(X, y, **params) -> RandomForest:
    return RandomForest(**params).fit(X, y)


# --- second-order gradient boosting ---------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class RegTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    predict = Tree.predict_proba


def fit_newton_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, orders: list[np.ndarray], *,
                    max_depth: int, reg_lambda: float, min_child_weight: float = 1e-3) -> RegTree:
    """Exact greedy regression tree on gradient/hessian statistics with leaf
    weights ``-G / (H + lambda)``. ``orders`` are per-feature argsorts of X."""
    n, d = X.shape
    feat, thr, left, right, val = [], [], [], [], []
    node_of = np.zeros(n, dtype=int)

    def new_node(G, H):
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(-G / (H + reg_lambda))
        return len(feat) - 1

    new_node(g.sum(), h.sum())
    frontier = [0]
    for _depth in range(max_depth):
        next_frontier = []
        for node in frontier:
            member = node_of == node
            G, H = g[member].sum(), h[member].sum()
            base = G * G / (H + reg_lambda)
            best = (0.0, None, None)
            for f in range(d):
                o = orders[f][member[orders[f]]]
                xs = X[o, f]
                gl = np.cumsum(g[o])[:-1]
                hl = np.cumsum(h[o])[:-1]
                gr, hr = G - gl, H - hl
                ok = (xs[1:] > xs[:-1]) & (hl >= min_child_weight) & (hr >= min_child_weight)
                if not np.any(ok):
                    continue
                gain = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - base
                gain = np.where(ok, gain, -np.inf)
                k = int(np.argmax(gain))
                if gain[k] > best[0] + 1e-12:
                    best = (gain[k], f, 0.5 * (xs[k] + xs[k + 1]))
            if best[1] is None:
                continue
            _, f, t = best
            go_left = member & (X[:, f] <= t)
            go_right = member & ~(X[:, f] <= t)
            feat[node], thr[node] = int(f), float(t)
            left[node] = new_node(g[go_left].sum(), h[go_left].sum())
            right[node] = new_node(g[go_right].sum(), h[go_right].sum())
            node_of[go_left] = left[node]
            node_of[go_right] = right[node]
            next_frontier += [left[node], right[node]]
        frontier = next_frontier
        if not frontier:
            break
    return RegTree(np.array(feat), np.array(thr), np.array(left), np.array(right), np.array(val))


@dataclass
class BoostedTrees:
    n_rounds: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    trees: list = field(default_factory=list, repr=False)
    base_margin: float = 0.0
    train_loss_: list = field(default_factory=list, repr=False)

    def fit(self, X, y) -> "BoostedTrees":
        X, y = _check_xy(X, y)
        prior = y.mean()
        self.base_margin = float(np.log(prior / (1 - prior)))
        margin = np.full(len(y), self.base_margin)
        orders = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
        self.trees = []
        self.train_loss_ = [log_loss(y, _sigmoid(margin))]
        for _ in range(self.n_rounds):
            p = _sigmoid(margin)
            g, h = p - y, p * (1 - p)
            tree = fit_newton_tree(X, g, h, orders, max_depth=self.max_depth, reg_lambda=self.reg_lambda)
            self.trees.append(tree)
            margin = margin + self.learning_rate * tree.predict(X)
            self.train_loss_.append(log_loss(y, _sigmoid(margin)))
        return self

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        m = np.full(len(X), self.base_margin)
        for tree in self.trees:
            m += self.learning_rate * tree.predict(X)
        return m

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return _decide(self.predict_proba(X))


def train_boosted_trees(X, y, **params) -> BoostedTrees:
    return BoostedTrees(**params).fit(X, y)


# --- 1-D convolutional network ---------------------------------------------


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid cross-correlation, one input channel.

    x: (B, T); w: (C, K); b: (C,). Returns (B, C, T-K+1) with
    ``out[:, c, t] = sum_k w[c, k] x[:, t+k] + b[c]``.
    """
    K = w.shape[1]
    T_out = x.shape[1] - K + 1
    windows = np.stack([x[:, k : k + T_out] for k in range(K)], axis=-1)  # (B, T_out, K)
    return np.einsum("btk,ck->bct", windows, w) + b[None, :, None]


def conv1d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    """Returns (dw, db, dx) for ``conv1d_forward``."""
    K = w.shape[1]
    T_out = grad_out.shape[2]
    windows = np.stack([x[:, k : k + T_out] for k in range(K)], axis=-1)
    dw = np.einsum("bct,btk->ck", grad_out, windows)
    db = grad_out.sum(axis=(0, 2))
    dx = np.zeros_like(x)
    for k in range(K):
        dx[:, k : k + T_out] += np.einsum("bct,c->bt", grad_out, w[:, k])
    return dw, db, dx


@dataclass
class CNN1D:
    channels: int = 16
    kernel: int = 2
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-2
    seed: int = 0
    params: list = field(default_factory=list, repr=False)
    loss_trace_: list = field(default_factory=list, repr=False)

    def init(self, rng: np.random.Generator) -> None:
        lim = np.sqrt(6.0 / (self.kernel + self.channels))
        self.params = [
            rng.uniform(-lim, lim, (self.channels, self.kernel)),
            np.zeros(self.channels),
            rng.uniform(-np.sqrt(6.0 / (self.channels + 1)), np.sqrt(6.0 / (self.channels + 1)), self.channels),
            np.zeros(1),
        ]

    def _forward(self, X, params=None):
        cw, cb, dw, db = params if params is not None else self.params
        c = conv1d_forward(X, cw, cb)
        r = np.maximum(c, 0.0)
        pooled = r.mean(axis=2)
        logit = pooled @ dw + db[0]
        return logit, (X, c, r, pooled)

    def logits(self, X, params=None) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=float), params)[0]

    def loss_and_grads(self, X, y, params=None):
        """Mean binary cross-entropy and gradients w.r.t. (conv_w, conv_b, dense_w, dense_b)."""
        params = params if params is not None else self.params
        cw, cb, dw, db = params
        logit, (Xc, c, r, pooled) = self._forward(X, params)
        p = _sigmoid(logit)
        loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
        dlogit = (p - y) / len(y)
        g_dw = pooled.T @ dlogit
        g_db = np.array([dlogit.sum()])
        d_pooled = np.outer(dlogit, dw)
        d_r = np.repeat(d_pooled[:, :, None], r.shape[2], axis=2) / r.shape[2]
        d_c = d_r * (c > 0)
        g_cw, g_cb, _ = conv1d_backward(Xc, cw, d_c)
        return loss, [g_cw, g_cb, g_dw, g_db]

    def fit(self, X, y) -> "CNN1D":
        X, y = _check_xy(X, y)
        rng = np.random.default_rng(self.seed)
        self.init(rng)
        opt = AdamState(lr=self.lr, beta1=0.9, beta2=0.999)
        self.loss_trace_ = []
        for _ in range(self.epochs):
            perm = rng.permutation(len(y))
            total = 0.0
            for s in range(0, len(y), self.batch_size):
                idx = perm[s : s + self.batch_size]
                loss, grads = self.loss_and_grads(X[idx], y[idx].astype(float))
                if not np.isfinite(loss):
                    raise IDSError(f"CNN1D diverged; loss trace {self.loss_trace_}")
                self.params = adam_step(self.params, grads, opt)
                total += loss * len(idx)
            self.loss_trace_.append(total / len(y))
        return self

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.logits(X))

    def predict(self, X) -> np.ndarray:
        return _decide(self.predict_proba(X))


def train_cnn1d(X, y, **params) -> CNN1D:
    return CNN1D(**params).fit(X, y)


# --- serialization ------------------------------------------------------------

MODEL_FORMAT = "qcgan-ids-model"
MODEL_VERSION = 1


def _tree_dict(t) -> dict:
    return {k: getattr(t, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}


def _tree_from(d: dict, cls):
    return cls(np.array(d["feature"], dtype=int), np.array(d["threshold"], dtype=float),
               np.array(d["left"], dtype=int), np.array(d["right"], dtype=int),
               np.array(d["value"], dtype=float))


def model_to_dict(model) -> dict:
    """JSON-ready snapshot of a fitted RandomForest, BoostedTrees or CNN1D."""
    head = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": type(model).__name__}
    if isinstance(model, RandomForest):
        hp = {k: getattr(model, k) for k in ("n_trees", "max_depth", "max_features", "bootstrap", "min_samples_leaf", "seed")}
        return {**head, "params": hp, "trees": [_tree_dict(t) for t in model.trees],
                "feature_importances": model.feature_importances_.tolist()}
    if isinstance(model, BoostedTrees):
        hp = {k: getattr(model, k) for k in ("n_rounds", "max_depth", "learning_rate", "reg_lambda")}
        return {**head, "params": hp, "base_margin": model.base_margin,
                "trees": [_tree_dict(t) for t in model.trees]}
    if isinstance(model, CNN1D):
        hp = {k: getattr(model, k) for k in ("channels", "kernel", "epochs", "batch_size", "lr", "seed")}
        return {**head, "params": hp, "weights": [w.tolist() for w in model.params]}
    raise IDSError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict):
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise IDSError("not a supported IDS model file")
    kind = d["kind"]
    if kind == "RandomForest":
        m = RandomForest(**d["params"])
        m.trees = [_tree_from(t, Tree) for t in d["trees"]]
        m.feature_importances_ = np.array(d["feature_importances"])
    elif kind == "BoostedTrees":
        m = BoostedTrees(**d["params"])
        m.base_margin = d["base_margin"]
        m.trees = [_tree_from(t, RegTree) for t in d["trees"]]
    elif kind == "CNN1D":
        m = CNN1D(**d["params"])
        m.params = [np.array(w, dtype=float) for w in d["weights"]]
    else:
        raise IDSError(f"unknown model kind {kind!r}")
    return m


# --- evasion protocol --------------------------------------------------------


@dataclass
class EvasionResult:
    classifier: str
    dr: float
    asr: float
    f1: float
    tp: int
    fn: int
    fp: int
    tn: int

    def to_dict(self) -> dict:
        return asdict(self)


def f1_from_confusion(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def evaluate_evasion(models: dict, generated_attacks, real_benign) -> list[EvasionResult]:
    """DR over generated attacks, ASR = 1 - DR, and F1 (attack positive) on the
    combined generated-attack + real-benign set."""
    A = np.asarray(generated_attacks, dtype=float)
    N = np.asarray(real_benign, dtype=float)
    if len(A) == 0 or len(N) == 0:
        raise IDSError("evaluate_evasion needs non-empty generated and benign sets")
    out = []
    for name, model in models.items():
        pa = np.asarray(model.predict(A)).astype(int)
        pn = np.asarray(model.predict(N)).astype(int)
        tp = int(pa.sum())
        fn = len(A) - tp
        fp = int(pn.sum())
        tn = len(N) - fp
        dr = tp / len(A)
        out.append(EvasionResult(name, dr, 1.0 - dr, f1_from_confusion(tp, fp, fn), tp, fn, fp, tn))
    return out


@dataclass
class EvasionProtocol:
    n_per_class: int = 8000
    seed: int = 0

    def build(self, X, y, generated):
        """Balanced real training set and the generated-attack / real-benign
        evaluation pair. Benign evaluation rows are disjoint from training rows
        when enough benign rows exist."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(int)
        rng = np.random.default_rng(self.seed)
        k = self.n_per_class
        att = np.nonzero(y == 1)[0]
        ben = rng.permutation(np.nonzero(y == 0)[0])
        if len(att) == 0 or len(ben) == 0:
            raise IDSError("need both attack and benign rows")
        att_idx = rng.choice(att, k, replace=len(att) < k)
        if len(ben) >= 2 * k:
            ben_train, ben_eval = ben[:k], ben[k : 2 * k]
        else:
            ben_train = rng.choice(ben, k, replace=len(ben) < k)
            ben_eval = rng.choice(ben, k, replace=len(ben) < k)
        Xtr = np.vstack([X[att_idx], X[ben_train]])
        ytr = np.concatenate([np.ones(k, int), np.zeros(k, int)])
        G = np.asarray(generated, dtype=float)
        gen_eval = G[rng.choice(len(G), k, replace=len(G) < k)]
        return (Xtr, ytr), gen_eval, X[ben_eval]


def train_all(X, y, *, seed: int = 0, rf: dict | None = None, boost: dict | None = None,
              cnn: dict | None = None) -> dict:
    return {
        "RF": train_random_forest(X, y, seed=seed, **(rf or {})),
        "XGBoost": train_boosted_trees(X, y, **(boost or {})),
        "CNN1D": train_cnn1d(X, y, seed=seed, **(cnn or {})),
    }
