"""Feed-forward dense networks with hand-written reverse mode, Adam, and
spectral normalization.

Weights are stored ``(in, out)`` and inputs are row batches, so a layer
computes ``x @ W + b``. Besides parameter and input gradients, scalar-output
networks also expose the parameter gradient of the gradient-penalty term
``mean((||dD/dx|| - 1)^2)``, which needs second-order terms.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "leaky_relu", "relu", "tanh", "sigmoid")


class NetworkError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


def _act(name: str, z: np.ndarray, slope: float):
    """Return (phi(z), phi'(z), phi''(z))."""
    if name == "identity":
        return z, np.ones_like(z), np.zeros_like(z)
    if name == "leaky_relu":
        d = np.where(z > 0, 1.0, slope)
        return z * d, d, np.zeros_like(z)
    if name == "relu":
        d = (z > 0).astype(float)
        return z * d, d, np.zeros_like(z)
    if name == "tanh":
        t = np.tanh(z)
        d = 1.0 - t * t
        return t, d, -2.0 * t * d
    if name == "sigmoid":
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        d = s * (1.0 - s)
        return s, d, d * (1.0 - 2.0 * s)
    raise NetworkError(f"unknown activation {name!r}")


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    slope: float = 0.2
    spectral_norm: bool = False
    dropout: float = 0.0
    # power-iteration estimates of the top singular vectors (out-space, in-space)
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise NetworkError("dropout rate must be in [0, 1)")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    def sigma(self) -> float:
        if not self.spectral_norm:
            return 1.0
        if self.u is None or self.v is None:
            raise NetworkError("spectral norm estimate not initialised")
        s = float(self.v @ self.weight @ self.u)
        return s if s > 0 else 1.0

    def effective_weight(self) -> np.ndarray:
        return self.weight / self.sigma()


def spectral_normalize(layer: Dense, n_iter: int = 1, rng: np.random.Generator | None = None) -> Dense:
    """Advance the power iteration for ``layer`` in place and return it."""
    w = layer.weight
    if not np.any(w):
        warnings.warn("spectral_normalize: zero weight matrix, skipping", RuntimeWarning, stacklevel=2)
        return layer
    if layer.u is None:
        rng = rng or np.random.default_rng(0)
        layer.u = rng.standard_normal(w.shape[1])
        layer.u /= np.linalg.norm(layer.u)
    for _ in range(n_iter):
        v = w @ layer.u
        layer.v = v / max(np.linalg.norm(v), 1e-12)
        u = w.T @ layer.v
        layer.u = u / max(np.linalg.norm(u), 1e-12)
    return layer


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list  # z_l
    post: list  # a_l
    dphi: list  # phi'(z_l) * mask_l
    d2phi: list  # phi''(z_l) * mask_l
    weights: list  # effective weights used
    version: int


class DiffNet:
    def __init__(self, layers: list[Dense]):
        for a, b in zip(layers, layers[1:]):
            if a.fan_out != b.fan_in:
                raise NetworkError(f"layer widths do not chain: {a.fan_out} -> {b.fan_in}")
        self.layers = layers
        self._version = 0

    # -- parameters ----------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise NetworkError("parameter list length mismatch")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise NetworkError("parameter shape mismatch")
            layer.weight = np.array(w, dtype=float)
            layer.bias = np.array(b, dtype=float)
        self._version += 1

    def parameter_count(self) -> int:
        return sum(l.fan_in * l.fan_out + l.fan_out for l in self.layers)

    @property
    def in_features(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_features(self) -> int:
        return self.layers[-1].fan_out

    def spectral_step(self, n_iter: int = 1) -> None:
        for layer in self.layers:
            if layer.spectral_norm:
                spectral_normalize(layer, n_iter)
        self._version += 1

    # -- passes --------------------------------------------------------------

    def forward(self, x, mode: str = "eval", rng: np.random.Generator | None = None):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise NetworkError(f"expected input of width {self.in_features}, got shape {x.shape}")
        if mode not in ("train", "eval"):
            raise NetworkError(f"unknown mode {mode!r}")
        a = x
        cache = ForwardCache(x, [], [], [], [], [], self._version)
        for layer in self.layers:
            w = layer.effective_weight()
            z = a @ w + layer.bias
            a, d1, d2 = _act(layer.activation, z, layer.slope)
            if mode == "train" and layer.dropout > 0:
                if rng is None:
                    raise NetworkError("train-mode dropout needs an rng")
                keep = 1.0 - layer.dropout
                mask = (rng.random(z.shape) < keep) / keep
                a, d1, d2 = a * mask, d1 * mask, d2 * mask
            cache.pre.append(z)
            cache.post.append(a)
            cache.dphi.append(d1)
            cache.d2phi.append(d2)
            cache.weights.append(w)
        return a, cache

    def __call__(self, x, mode: str = "eval", rng=None) -> np.ndarray:
        return self.forward(x, mode, rng)[0]

    def _check_cache(self, cache: ForwardCache) -> None:
        if cache.version != self._version:
            raise NetworkError("stale forward cache: parameters changed since forward()")

    def backward(self, cache: ForwardCache, output_grad):
        """Reverse pass. Returns (param_grads, input_grad)."""
        self._check_cache(cache)
        g = np.asarray(output_grad, dtype=float)
        eff_grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dz = g * cache.dphi[i]
            a_prev = cache.x if i == 0 else cache.post[i - 1]
            eff_grads[i] = (a_prev.T @ dz, dz.sum(axis=0))
            g = dz @ cache.weights[i].T
        return self._to_raw_grads(eff_grads), g

    def _to_raw_grads(self, eff_grads) -> list[np.ndarray]:
        out = []
        for layer, (gw, gb) in zip(self.layers, eff_grads):
            if layer.spectral_norm and np.any(layer.weight):
                sigma = layer.sigma()
                w_eff = layer.weight / sigma
                gw = (gw - np.sum(gw * w_eff) * np.outer(layer.v, layer.u)) / sigma
            out += [gw, gb]
        return out

    def input_gradient(self, x, mode: str = "eval", rng=None) -> np.ndarray:
        """dD/dx per row for a scalar-output network."""
        if self.out_features != 1:
            raise NetworkError("input_gradient needs a scalar-output network")
        out, cache = self.forward(x, mode, rng)
        return self.backward(cache, np.ones_like(out))[1]

    def gradient_penalty(self, x, mode: str = "eval", rng=None):
        """Penalty ``mean((||dD/dx|| - 1)^2)`` and its parameter gradients.

        Returns ``(penalty, param_grads, input_grads)``. Differentiates through
        the backward pass itself (double backprop).
        """
        if self.out_features != 1:
            raise NetworkError("gradient_penalty needs a scalar-output network")
        _, c = self.forward(x, mode, rng)
        L = len(self.layers)
        W = c.weights
        s = c.dphi
        # backward pass for dD/dx, keeping every delta
        deltas = [None] * L
        deltas[L - 1] = s[L - 1]
        for l in range(L - 2, -1, -1):
            deltas[l] = (deltas[l + 1] @ W[l + 1].T) * s[l]
        g = deltas[0] @ W[0].T
        norms = np.linalg.norm(g, axis=1)
        B = g.shape[0]
        penalty = float(np.mean((norms - 1.0) ** 2))
        g_bar = (2.0 * (norms - 1.0) / np.maximum(norms, 1e-12) / B)[:, None] * g

        w_bar = [np.zeros_like(w) for w in W]
        b_bar = [np.zeros(w.shape[1]) for w in W]
        s_bar = [None] * L
        # reverse through the backward pass
        d_bar = g_bar @ W[0]
        w_bar[0] += g_bar.T @ deltas[0]
        for l in range(L - 1):
            t = deltas[l + 1] @ W[l + 1].T
            t_bar = d_bar * s[l]
            s_bar[l] = d_bar * t
            w_bar[l + 1] += t_bar.T @ deltas[l + 1]
            d_bar = t_bar @ W[l + 1]
        s_bar[L - 1] = d_bar
        # reverse through the forward pass; the penalty does not read D itself
        a_bar = np.zeros_like(c.post[L - 1])
        for l in range(L - 1, -1, -1):
            z_bar = a_bar * s[l] + s_bar[l] * c.d2phi[l]
            a_prev = c.x if l == 0 else c.post[l - 1]
            w_bar[l] += a_prev.T @ z_bar
            b_bar[l] += z_bar.sum(axis=0)
            a_bar = z_bar @ W[l].T
        return penalty, self._to_raw_grads(list(zip(w_bar, b_bar))), g

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "weight": l.weight.tolist(),
                    "bias": l.bias.tolist(),
                    "activation": l.activation,
                    "slope": l.slope,
                    "spectral_norm": l.spectral_norm,
                    "dropout": l.dropout,
                    "u": None if l.u is None else l.u.tolist(),
                    "v": None if l.v is None else l.v.tolist(),
                }
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffNet":
        layers = []
        for ld in d["layers"]:
            layers.append(
                Dense(
                    weight=np.array(ld["weight"], dtype=float),
                    bias=np.array(ld["bias"], dtype=float),
                    activation=ld["activation"],
                    slope=ld["slope"],
                    spectral_norm=ld["spectral_norm"],
                    dropout=ld["dropout"],
                    u=None if ld["u"] is None else np.array(ld["u"], dtype=float),
                    v=None if ld["v"] is None else np.array(ld["v"], dtype=float),
                )
            )
        return cls(layers)


def mlp(widths: list[int], activations: list[str], rng: np.random.Generator, *, slope: float = 0.2,
        spectral_norm: bool = False, dropout: float = 0.0) -> DiffNet:
    """Dense chain with Glorot-uniform weights and zero biases.

    ``dropout`` applies to hidden layers only.
    """
    if len(activations) != len(widths) - 1:
        raise NetworkError("need one activation per layer")
    layers = []
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        lim = np.sqrt(6.0 / (fi + fo))
        layer = Dense(
            weight=rng.uniform(-lim, lim, size=(fi, fo)),
            bias=np.zeros(fo),
            activation=activations[i],
            slope=slope,
            spectral_norm=spectral_norm,
            dropout=dropout if i < len(widths) - 2 else 0.0,
        )
        if spectral_norm:
            spectral_normalize(layer, 1, rng)
        layers.append(layer)
    return DiffNet(layers)


def make_critic(rng, in_features: int = 4, hidden=(128, 64), *, spectral_norm: bool = True,
                dropout: float = 0.0, head: str = "linear", slope: float = 0.2) -> DiffNet:
    """4 -> 128 -> 64 -> 1 critic. ``head="sigmoid"`` gives the vanilla-GAN variant."""
    head_act = {"linear": "identity", "sigmoid": "sigmoid"}[head]
    widths = [in_features, *hidden, 1]
    acts = ["leaky_relu"] * len(hidden) + [head_act]
    return mlp(widths, acts, rng, slope=slope, spectral_norm=spectral_norm, dropout=dropout)


def make_postprocessor(rng, features: int = 4, hidden: int = 32) -> DiffNet:
    return mlp([features, hidden, features], ["leaky_relu", "tanh"], rng)


def make_classical_generator(rng, latent: int = 4, hidden: int = 33, features: int = 4) -> DiffNet:
    return mlp([latent, hidden, hidden, features], ["leaky_relu", "leaky_relu", "tanh"], rng)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step,
            "m": [np.asarray(a).tolist() for a in self.m],
            "v": [np.asarray(a).tolist() for a in self.v],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(d["lr"], d["beta1"], d["beta2"], d["eps"], d["step"],
                   [np.array(a, dtype=float) for a in d["m"]], [np.array(a, dtype=float) for a in d["v"]])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Bias-corrected Adam update; returns new parameter arrays."""
    if len(params) != len(grads):
        raise NetworkError("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise NetworkError(f"shape mismatch at parameter {i}: {np.shape(p)} vs {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradient(f"parameter {i}: {bad} non-finite gradient entries; step aborted")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=float) for p in params]
        state.v = [np.zeros_like(p, dtype=float) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out
