"""Variational quantum generator with successive data injection.

The circuit is ``K`` blocks; each block re-encodes the latent vector with
``RY(pi z_i)`` on every qubit and then runs ``L`` variational layers (local
rotations followed by a CNOT ring). The readout is the vector of per-qubit
``<Z>`` values.

Parameter layout is block-major, then layer, then qubit, then rotation kind,
i.e. ``theta.reshape(K, L, N, r)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, Literal

import numpy as np

from . import qsim
from .qsim import GateOp, QuantumState

ROTATION_SETS = {"rx_rz": ("RX", "RZ"), "ry_rz": ("RY", "RZ"), "ry_only": ("RY",)}
SHIFT = np.pi / 2


@dataclass(frozen=True)
class NoiseSpec:
    """Per-qubit channel strengths applied after each variational layer."""

    p_depolarizing: float = 0.0
    p_bitflip: float = 0.0
    gamma_amplitude_damping: float = 0.0
    insertion_point: Literal["after_each_variational_layer"] = "after_each_variational_layer"

    def __post_init__(self):
        for name in ("p_depolarizing", "p_bitflip", "gamma_amplitude_damping"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise qsim.ConfigurationError(f"{name} must be in [0, 1], got {v}")
        if self.insertion_point != "after_each_variational_layer":
            raise qsim.ConfigurationError(f"unsupported insertion point {self.insertion_point!r}")

    @classmethod
    def default_hardware(cls) -> "NoiseSpec":
        return cls(p_depolarizing=0.01, p_bitflip=0.005, gamma_amplitude_damping=0.01)

    @property
    def is_zero(self) -> bool:
        return self.p_depolarizing == 0 and self.p_bitflip == 0 and self.gamma_amplitude_damping == 0

    def superoperator(self) -> np.ndarray:
        """depolarizing, then bit-flip, then amplitude damping, as one map."""
        return qsim.compose_superoperators(
            qsim.superoperator(qsim.kraus_operators("depolarizing", self.p_depolarizing)),
            qsim.superoperator(qsim.kraus_operators("bitflip", self.p_bitflip)),
            qsim.superoperator(qsim.kraus_operators("amplitude_damping", self.gamma_amplitude_damping)),
        )


NOISELESS = NoiseSpec()


@dataclass(frozen=True)
class CircuitConfig:
    num_qubits: int = 4
    num_blocks: int = 3
    layers_per_block: int = 2
    rotations_per_layer: Literal["rx_rz", "ry_rz", "ry_only"] = "rx_rz"
    entangler: Literal["ring"] = "ring"

    def __post_init__(self):
        if not 1 <= self.num_qubits <= qsim.MAX_QUBITS:
            raise qsim.ConfigurationError(f"num_qubits must be in [1, {qsim.MAX_QUBITS}]")
        if self.num_blocks < 0 or self.layers_per_block < 0:
            raise qsim.ConfigurationError("num_blocks and layers_per_block must be >= 0")
        if self.rotations_per_layer not in ROTATION_SETS:
            raise qsim.ConfigurationError(f"unknown rotation set {self.rotations_per_layer!r}")
        if self.entangler != "ring":
            raise qsim.ConfigurationError(f"unknown entangler {self.entangler!r}")

    @classmethod
    def compact16(cls) -> "CircuitConfig":
        return cls(num_qubits=4, num_blocks=2, layers_per_block=1, rotations_per_layer="rx_rz")

    @property
    def rotations(self) -> tuple[str, ...]:
        return ROTATION_SETS[self.rotations_per_layer]

    @property
    def params_per_layer(self) -> int:
        return self.num_qubits * len(self.rotations)

    @property
    def num_params(self) -> int:
        return self.num_blocks * self.layers_per_block * self.params_per_layer

    def to_dict(self) -> dict:
        return asdict(self)


def ring_pairs(n: int) -> list[tuple[int, int]]:
    """(control, target) pairs of the CNOT ring, in application order."""
    if n < 2:
        return []
    return [(i, (i + 1) % n) for i in range(n)]


def init_params(config: CircuitConfig, rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=config.num_params)


def normalize_latent(z: np.ndarray, scale: float = 3.0) -> np.ndarray:
    """Map standard-normal draws into [-1, 1] by ``clamp(z / scale)``."""
    return np.clip(np.asarray(z, dtype=float) / scale, -1.0, 1.0)


def sample_latent(rng: np.random.Generator, n: int, num_qubits: int, scale: float = 3.0) -> np.ndarray:
    return normalize_latent(rng.standard_normal((n, num_qubits)), scale)


# --- circuit construction ---------------------------------------------------


@dataclass(frozen=True)
class NoiseOp:
    qubit: int


def encode_ops(z: np.ndarray) -> list[GateOp]:
    z = np.asarray(z, dtype=float)
    return [GateOp("RY", i, angle=np.pi * z[..., i], tag="encode") for i in range(z.shape[-1])]


def layer_ops(config: CircuitConfig, layer_params: np.ndarray) -> list[GateOp]:
    """Local rotations then the CNOT ring. ``layer_params`` has last axis N*r."""
    return [op for op, _ in _layer_ops_indexed(config, layer_params, 0)]


def _layer_ops_indexed(config: CircuitConfig, layer_params: np.ndarray, offset: int) -> list[tuple]:
    layer_params = np.asarray(layer_params, dtype=float)
    if layer_params.shape[-1] != config.params_per_layer:
        raise qsim.SimulatorError(
            f"layer expects {config.params_per_layer} parameters, got {layer_params.shape[-1]}"
        )
    r = len(config.rotations)
    ops = []
    for q in range(config.num_qubits):
        for j, kind in enumerate(config.rotations):
            ops.append((GateOp(kind, q, angle=layer_params[..., q * r + j]), offset + q * r + j))
    ops.extend((GateOp("CNOT", t, control=c), None) for c, t in ring_pairs(config.num_qubits))
    return ops


def _indexed_ops(config: CircuitConfig, theta: np.ndarray, z: np.ndarray, noisy: bool) -> Iterator[tuple]:
    # yields (op, index of the trainable angle it carries or None)
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    if theta.shape[-1] != config.num_params:
        raise qsim.SimulatorError(f"expected {config.num_params} parameters, got {theta.shape[-1]}")
    if z.shape[-1] != config.num_qubits:
        raise qsim.SimulatorError(f"latent length {z.shape[-1]} != num_qubits {config.num_qubits}")
    p = config.params_per_layer
    for k in range(config.num_blocks):
        for op in encode_ops(z):
            yield op, None
        for l in range(config.layers_per_block):
            start = (k * config.layers_per_block + l) * p
            yield from _layer_ops_indexed(config, theta[..., start : start + p], start)
            if noisy:
                for q in range(config.num_qubits):
                    yield NoiseOp(q), None


def circuit_ops(config: CircuitConfig, theta: np.ndarray, z: np.ndarray, noisy: bool = False) -> Iterator:
    """Yield the generator's operations in application order.

    ``theta`` has last axis ``num_params`` and ``z`` last axis ``N``; leading
    axes broadcast against each other.
    """
    for op, _ in _indexed_ops(config, theta, z, noisy):
        yield op


def encode(state: QuantumState, z) -> QuantumState:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != state.num_qubits:
        raise qsim.SimulatorError(f"latent length {z.shape[-1]} != num_qubits {state.num_qubits}")
    for op in encode_ops(z):
        state = qsim.apply_gate(state, op)
    return state


def apply_variational_layer(state: QuantumState, layer_params, config: CircuitConfig | None = None) -> QuantumState:
    config = config or CircuitConfig(num_qubits=state.num_qubits)
    for op in layer_ops(config, layer_params):
        state = qsim.apply_gate(state, op)
    return state


def _run(config: CircuitConfig, theta: np.ndarray, z: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    batch = np.broadcast_shapes(theta.shape[:-1], z.shape[:-1])
    noisy = not noise.is_zero
    state = qsim.init_ground(config.num_qubits, "mixed" if noisy else "pure", batch)
    sop = noise.superoperator() if noisy else None
    for op in circuit_ops(config, theta, z, noisy=noisy):
        if isinstance(op, NoiseOp):
            state = qsim.apply_superoperator(state, sop, op.qubit)
        else:
            state = qsim.apply_gate(state, op)
    return qsim.expect_z_all(state)


def generate(config: CircuitConfig, params, z, noise: NoiseSpec = NOISELESS) -> np.ndarray:
    """Measurement vector ``(<Z_0>, ..., <Z_{N-1}>)`` for latent ``z``.

    ``z`` may be a single vector of length N or a batch ``(B, N)``. Any nonzero
    noise routes the run through the density-matrix backend.
    """
    return _run(config, params, z, noise)


def parameter_shift_jacobian(config: CircuitConfig, params, z, noise: NoiseSpec = NOISELESS,
                             method: str = "cached") -> np.ndarray:
    """d<Z_i>/d theta_j by the two-term shift rule,
    ``[<Z_i>(theta_j + pi/2) - <Z_i>(theta_j - pi/2)] / 2``.

    ``method="direct"`` simulates all 2P shifted circuits from scratch.
    ``method="cached"`` evaluates the same shifted expectations exactly as
    ``Tr(O_suffix G_shifted[rho_prefix])``, reusing one forward pass of states
    and one backward (Heisenberg) pass of the Z observables.

    Returns shape ``(*batch, N, P)`` where batch comes from ``z``.
    """
    plus, minus = shifted_expectations(config, params, z, noise, method=method)
    return np.swapaxes(0.5 * (plus - minus), -1, -2)


def shifted_expectations(config: CircuitConfig, params, z, noise: NoiseSpec = NOISELESS,
                         method: str = "cached") -> tuple[np.ndarray, np.ndarray]:
    """<Z> at theta_j +/- pi/2 for every j; each of shape ``(*batch, P, N)``."""
    params = np.asarray(params, dtype=float)
    z = np.asarray(z, dtype=float)
    P = config.num_params
    if method == "direct":
        shifts = np.concatenate([np.eye(P), -np.eye(P)]) * SHIFT
        ev = _run(config, params + shifts, z[..., None, :], noise)  # (*batch, 2P, N)
        return ev[..., :P, :], ev[..., P:, :]
    if method != "cached":
        raise ValueError(f"unknown method {method!r}")
    batch = z.shape[:-1]
    plus, minus = _cached_shifts(config, params, z.reshape(-1, config.num_qubits), noise)
    return plus.reshape(*batch, P, config.num_qubits), minus.reshape(*batch, P, config.num_qubits)


def _cached_shifts(config: CircuitConfig, params: np.ndarray, z: np.ndarray, noise: NoiseSpec):
    n = config.num_qubits
    B = z.shape[0]
    dim = 2**n
    noisy = not noise.is_zero
    sop = noise.superoperator() if noisy else None
    ops = list(_indexed_ops(config, params, z, noisy))

    # forward: remember the state right before every trainable gate
    state = qsim.init_ground(n, "mixed" if noisy else "pure", (B,))
    before = {}
    for op, j in ops:
        if j is not None:
            before[j] = state
        state = qsim.apply_gate(state, op) if not isinstance(op, NoiseOp) else qsim.apply_superoperator(state, sop, op.qubit)

    # backward: Z_i observables, batch axes (N, B)
    signs = 1.0 - 2.0 * ((np.arange(dim)[None, :] >> np.arange(n)[:, None]) & 1)  # (N, dim)
    obs = np.zeros((n, B, dim, dim), dtype=complex)
    obs[..., np.arange(dim), np.arange(dim)] = signs[:, None, :]
    obs = qsim.QuantumState("mixed", n, obs)
    adj = qsim.adjoint_superoperator(sop) if noisy else None

    plus = np.zeros((B, config.num_params, n))
    minus = np.zeros((B, config.num_params, n))
    for op, j in reversed(ops):
        if isinstance(op, NoiseOp):
            obs = qsim.apply_superoperator(obs, adj, op.qubit)
            continue
        if j is not None:
            for sign, out in ((1.0, plus), (-1.0, minus)):
                shifted = qsim.apply_gate(before[j], GateOp(op.kind, op.target, angle=op.angle + sign * SHIFT))
                out[:, j, :] = _expect(obs.data, shifted).T
        obs = qsim.apply_gate(obs, _inverse(op))
    return plus, minus


def _inverse(op: GateOp) -> GateOp:
    if op.kind == "CNOT":
        return op
    return GateOp(op.kind, op.target, op.control, -np.asarray(op.angle), op.tag)


def _expect(obs: np.ndarray, state: QuantumState) -> np.ndarray:
    # obs: (N, B, d, d); returns Tr(O rho) with shape (N, B)
    if state.backend == "pure":
        psi = state.data
        return np.einsum("bi,nbij,bj->nb", psi.conj(), obs, psi).real
    return np.einsum("nbji,bij->nb", obs, state.data).real


def parameter_shift_grad(config: CircuitConfig, params, z, noise: NoiseSpec = NOISELESS, downstream_grad=None) -> np.ndarray:
    """Vector-Jacobian product ``downstream_grad . d<Z>/d theta``.

    For a batch of latents, ``downstream_grad`` has shape ``(B, N)`` and the
    per-sample products are summed.
    """
    jac = parameter_shift_jacobian(config, params, z, noise)
    g = np.asarray(downstream_grad, dtype=float)
    if g.shape != jac.shape[:-1]:
        raise qsim.SimulatorError(f"downstream grad shape {g.shape} != output shape {jac.shape[:-1]}")
    return np.einsum("bi,bij->j", g.reshape(-1, g.shape[-1]), jac.reshape(-1, *jac.shape[-2:]))


def count_ops(config: CircuitConfig, noisy: bool = False) -> dict[str, int]:
    """Census of the circuit by gate kind; encoding rotations count as ENCODE_RY."""
    counts: dict[str, int] = {}
    for op in circuit_ops(config, np.zeros(config.num_params), np.zeros(config.num_qubits), noisy=noisy):
        if isinstance(op, NoiseOp):
            key = "NOISE"
        else:
            key = "ENCODE_RY" if op.tag == "encode" else op.kind
        counts[key] = counts.get(key, 0) + 1
    return counts
