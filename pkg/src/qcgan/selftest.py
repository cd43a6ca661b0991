"""Fast analytic oracle checks, run by ``qcgan selftest``."""
from __future__ import annotations

import numpy as np

from . import ids, metrics, qgen, qsim
from .neural import make_critic


def _kraus_completeness():
    rng = np.random.default_rng(0)
    worst = 0.0
    for ch in ("depolarizing", "bitflip", "amplitude_damping"):
        for p in rng.random(20):
            ks = qsim.kraus_operators(ch, float(p))
            worst = max(worst, np.abs(sum(k.conj().T @ k for k in ks) - np.eye(2)).max())
    return worst <= 1e-12, f"max |sum K^dag K - I| = {worst:.2e}"


def _encoding():
    z = np.linspace(-1, 1, 9)
    state = qgen.encode(qsim.init_ground(1, batch_shape=(9,)), z[:, None])
    err = np.abs(qsim.expect_z(state, 0) - np.cos(np.pi * z)).max()
    return err <= 1e-10, f"max |<Z> - cos(pi z)| = {err:.2e}"


def _backend_agreement():
    rng = np.random.default_rng(1)
    cfg = qgen.CircuitConfig()
    worst = 0.0
    for _ in range(5):
        theta = rng.uniform(-np.pi, np.pi, cfg.num_params)
        z = rng.uniform(-1, 1, cfg.num_qubits)
        states = [qsim.init_ground(cfg.num_qubits, b) for b in ("pure", "mixed")]
        for op in qgen.circuit_ops(cfg, theta, z):
            states = [qsim.apply_gate(s, op) for s in states]
        worst = max(worst, np.abs(qsim.expect_z_all(states[0]) - qsim.expect_z_all(states[1])).max())
    return worst <= 1e-9, f"max pure/mixed gap = {worst:.2e}"


def _parameter_shift():
    rng = np.random.default_rng(2)
    cfg = qgen.CircuitConfig()
    theta = rng.uniform(-np.pi, np.pi, cfg.num_params)
    z = rng.uniform(-1, 1, cfg.num_qubits)
    noise = qgen.NoiseSpec.default_hardware()
    jac = qgen.parameter_shift_jacobian(cfg, theta, z, noise)
    h = 1e-5
    fd = np.empty_like(jac)
    for k in range(cfg.num_params):
        e = np.zeros_like(theta)
        e[k] = h
        fd[:, k] = (qgen.generate(cfg, theta + e, z, noise) - qgen.generate(cfg, theta - e, z, noise)) / (2 * h)
    rel = np.abs(jac - fd).max() / max(np.abs(fd).max(), 1e-12)
    return rel <= 1e-5, f"relative shift-vs-FD gap = {rel:.2e}"


def _budgets():
    n = make_critic(np.random.default_rng(0)).parameter_count()
    p = qgen.CircuitConfig().num_params
    return n == 8961 and p == 48, f"critic {n}, circuit {p}"


def _metric_identities():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (400, 4))
    Y = X[rng.permutation(400)]
    vals = (metrics.wasserstein_per_feature(X, Y), metrics.mse_quantile_paired(X, Y),
            metrics.kl_histogram(X, Y), metrics.mmd(X, Y))
    ok = vals[0] == 0 and vals[1] == 0 and vals[2] <= 1e-6 and vals[3] <= 0.01
    return ok, "WD %.1e MSE %.1e KL %.1e MMD %.1e" % vals


def _confusion():
    class Always:
        def __init__(self, v):
            self.v = v

        def predict(self, X):
            return np.full(len(X), self.v)

    A, N = np.zeros((100, 4)), np.ones((100, 4))
    r1, r0 = ids.evaluate_evasion({"a": Always(1), "b": Always(0)}, A, N)
    ok = (r1.dr, r1.asr, r0.dr, r0.asr, r0.f1) == (1.0, 0.0, 0.0, 1.0, 0.0) and abs(r1.f1 - 2 / 3) < 1e-12
    return ok, f"always-attack F1 {r1.f1:.6f}"


CHECKS = [
    ("kraus completeness", _kraus_completeness),
    ("encoding <Z> = cos(pi z)", _encoding),
    ("pure vs mixed backend", _backend_agreement),
    ("parameter shift vs finite differences", _parameter_shift),
    ("parameter budgets", _budgets),
    ("metric identities", _metric_identities),
    ("degenerate classifiers", _confusion),
]


def run(out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
