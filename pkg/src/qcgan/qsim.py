"""Small dense N-qubit simulator with a pure (statevector) and a mixed
(density-matrix) backend.

Qubit 0 is the least-significant bit of the computational-basis index, so
basis state ``|q_{N-1} ... q_1 q_0>`` sits at index ``sum(q_i << i)``.

Every kernel accepts states with arbitrary leading batch axes. Rotation
angles may be scalars or arrays broadcastable to the batch shape, which is
what lets the generator evaluate thousands of shifted circuits in one pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Backend = Literal["pure", "mixed"]

MAX_QUBITS = 10

_I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class SimulatorError(ValueError):
    """Invalid use of the simulator (bad index, wrong backend, ...)."""


class ConfigurationError(SimulatorError):
    """Invalid simulator configuration (e.g. unsupported qubit count)."""


@dataclass
class QuantumState:
    """Pure or mixed N-qubit state, possibly batched.

    ``data`` has shape ``(*batch, 2**N)`` for the pure backend and
    ``(*batch, 2**N, 2**N)`` for the mixed backend.
    """

    backend: Backend
    num_qubits: int
    data: np.ndarray

    @property
    def batch_shape(self) -> tuple[int, ...]:
        trailing = 1 if self.backend == "pure" else 2
        return self.data.shape[: self.data.ndim - trailing]

    @property
    def amplitudes(self) -> np.ndarray:
        if self.backend != "pure":
            raise SimulatorError("mixed state has no amplitude vector")
        return self.data

    @property
    def density(self) -> np.ndarray:
        if self.backend == "mixed":
            return self.data
        return np.einsum("...i,...j->...ij", self.data, self.data.conj())

    def to_mixed(self) -> "QuantumState":
        if self.backend == "mixed":
            return self
        return QuantumState("mixed", self.num_qubits, self.density)

    def copy(self) -> "QuantumState":
        return QuantumState(self.backend, self.num_qubits, self.data.copy())


@dataclass(frozen=True)
class GateOp:
    kind: Literal["RX", "RY", "RZ", "CNOT"]
    target: int
    control: int | None = None
    angle: float | np.ndarray = 0.0
    tag: str = ""


def init_ground(num_qubits: int, backend: Backend = "pure", batch_shape: tuple[int, ...] = ()) -> QuantumState:
    if not isinstance(num_qubits, (int, np.integer)) or not 1 <= num_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits!r}")
    dim = 2**num_qubits
    if backend == "pure":
        data = np.zeros((*batch_shape, dim), dtype=complex)
        data[..., 0] = 1.0
    elif backend == "mixed":
        data = np.zeros((*batch_shape, dim, dim), dtype=complex)
        data[..., 0, 0] = 1.0
    else:
        raise ConfigurationError(f"unknown backend {backend!r}")
    return QuantumState(backend, int(num_qubits), data)


def rotation_matrix(kind: str, angle) -> np.ndarray:
    """2x2 rotation ``exp(-i angle/2 P)``; returns shape ``(*angle.shape, 2, 2)``."""
    t = np.asarray(angle, dtype=float) / 2.0
    c, s = np.cos(t), np.sin(t)
    out = np.zeros((*t.shape, 2, 2), dtype=complex)
    if kind == "RX":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
    elif kind == "RY":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
    elif kind == "RZ":
        out[..., 0, 0] = np.exp(-1j * t)
        out[..., 1, 1] = np.exp(1j * t)
    else:
        raise SimulatorError(f"unknown rotation {kind!r}")
    return out


def _check_qubit(state: QuantumState, q: int) -> None:
    if not 0 <= q < state.num_qubits:
        raise SimulatorError(f"qubit index {q} out of range for {state.num_qubits} qubits")


def _mix(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Act with ``u`` on axis 2 of ``v`` (shape ``(M, A, 2, C)``).

    ``u`` is ``(2, 2)`` or per-row ``(M, 2, 2)``.
    """
    if u.ndim == 3:
        u = u[:, None, :, :, None]
        u00, u01, u10, u11 = u[..., 0, 0, :], u[..., 0, 1, :], u[..., 1, 0, :], u[..., 1, 1, :]
    else:
        u00, u01, u10, u11 = u[0, 0], u[0, 1], u[1, 0], u[1, 1]
    v0, v1 = v[:, :, 0, :], v[:, :, 1, :]
    out = np.empty_like(v)
    out[:, :, 0, :] = u00 * v0 + u01 * v1
    out[:, :, 1, :] = u10 * v0 + u11 * v1
    return out


def _flat_u(u: np.ndarray, batch: tuple[int, ...]) -> np.ndarray:
    if u.ndim == 2:
        return u
    return np.broadcast_to(u, (*batch, 2, 2)).reshape(-1, 2, 2)


def _apply_1q_vec(psi: np.ndarray, u: np.ndarray, q: int, n: int) -> np.ndarray:
    batch = psi.shape[:-1]
    hi, lo = 2 ** (n - 1 - q), 2**q
    v = psi.reshape(-1, hi, 2, lo)
    return _mix(v, _flat_u(u, batch)).reshape(psi.shape)


def _apply_1q_rho(rho: np.ndarray, u: np.ndarray, q: int, n: int) -> np.ndarray:
    # U rho U^dagger: U on the row index, conj(U) on the column index
    batch = rho.shape[:-2]
    dim = 2**n
    hi, lo = 2 ** (n - 1 - q), 2**q
    uf = _flat_u(u, batch)
    r = _mix(rho.reshape(-1, hi, 2, lo * dim), uf)
    r = _mix(r.reshape(-1, dim * hi, 2, lo), uf.conj())
    return r.reshape(rho.shape)


def _apply_diag(data: np.ndarray, phases: np.ndarray, q: int, n: int, mixed: bool) -> np.ndarray:
    # phases: (*angle_shape, 2) diagonal of a Z rotation
    batch = data.shape[:-2] if mixed else data.shape[:-1]
    bits = (np.arange(2**n) >> q) & 1
    ph = np.broadcast_to(phases, (*batch, 2))
    d = ph[..., bits]  # (*batch, dim)
    if mixed:
        return data * d[..., :, None] * d.conj()[..., None, :]
    return data * d


def _cnot_perm(control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(2**n)
    flip = (idx >> control) & 1
    return idx ^ (flip << target)


def apply_gate(state: QuantumState, gate: GateOp) -> QuantumState:
    """Apply a rotation or CNOT; returns a new state."""
    n = state.num_qubits
    _check_qubit(state, gate.target)
    if gate.kind == "CNOT":
        if gate.control is None:
            raise SimulatorError("CNOT needs a control qubit")
        _check_qubit(state, gate.control)
        if gate.control == gate.target:
            raise SimulatorError("CNOT control and target must differ")
        perm = _cnot_perm(gate.control, gate.target, n)
        if state.backend == "pure":
            data = state.data[..., perm]
        else:
            dim = 2**n
            flat = (perm[:, None] * dim + perm[None, :]).ravel()
            data = state.data.reshape(*state.batch_shape, dim * dim)[..., flat].reshape(state.data.shape)
        return QuantumState(state.backend, n, data)
    if gate.control is not None:
        raise SimulatorError(f"{gate.kind} takes no control qubit")
    if gate.kind == "RZ":
        t = np.asarray(gate.angle, dtype=float)[..., None] / 2.0
        phases = np.exp(np.array([-1j, 1j]) * t)
        data = _apply_diag(state.data, phases, gate.target, n, state.backend == "mixed")
        return QuantumState(state.backend, n, data)
    u = rotation_matrix(gate.kind, gate.angle)
    if state.backend == "pure":
        data = _apply_1q_vec(state.data, u, gate.target, n)
    else:
        data = _apply_1q_rho(state.data, u, gate.target, n)
    return QuantumState(state.backend, n, data)


# --- noise channels -------------------------------------------------------


def kraus_operators(channel: str, p: float) -> list[np.ndarray]:
    """Kraus set of a single-qubit channel.

    depolarizing(p):       rho -> (1-p) rho + p I/2
    bitflip(p):            rho -> (1-p) rho + p X rho X
    amplitude_damping(g):  K0 = [[1,0],[0,sqrt(1-g)]], K1 = [[0,sqrt(g)],[0,0]]
    """
    if not 0.0 <= p <= 1.0:
        raise SimulatorError(f"{channel} probability must be in [0, 1], got {p}")
    if channel == "depolarizing":
        return [
            np.sqrt(1.0 - 0.75 * p) * _I2,
            np.sqrt(p / 4.0) * PAULI_X,
            np.sqrt(p / 4.0) * PAULI_Y,
            np.sqrt(p / 4.0) * PAULI_Z,
        ]
    if channel == "bitflip":
        return [np.sqrt(1.0 - p) * _I2, np.sqrt(p) * PAULI_X]
    if channel == "amplitude_damping":
        return [
            np.array([[1, 0], [0, np.sqrt(1.0 - p)]], dtype=complex),
            np.array([[0, np.sqrt(p)], [0, 0]], dtype=complex),
        ]
    raise SimulatorError(f"unknown channel {channel!r}")


def superoperator(kraus: list[np.ndarray]) -> np.ndarray:
    """Channel as a (2,2,2,2) tensor S with rho'[i,j] = S[i,j,k,l] rho[k,l]."""
    return sum(np.einsum("ik,jl->ijkl", k, k.conj()) for k in kraus)


def compose_superoperators(*ops: np.ndarray) -> np.ndarray:
    """Superoperator of applying ``ops[0]`` first, then ``ops[1]``, ..."""
    out = ops[0]
    for s in ops[1:]:
        out = np.einsum("ijkl,klmn->ijmn", s, out)
    return out


def apply_superoperator(state: QuantumState, sop: np.ndarray, qubit: int) -> QuantumState:
    if state.backend != "mixed":
        raise SimulatorError("noise channels need the mixed backend")
    _check_qubit(state, qubit)
    n = state.num_qubits
    hi, lo = 2 ** (n - 1 - qubit), 2**qubit
    r = state.data.reshape(-1, hi, 2, lo, hi, 2, lo)
    blocks = {(k, l): r[:, :, k, :, :, l, :] for k in range(2) for l in range(2)}
    out = np.empty_like(r)
    for i in range(2):
        for j in range(2):
            acc = None
            for (k, l), blk in blocks.items():
                c = sop[i, j, k, l]
                if c == 0:
                    continue
                acc = c * blk if acc is None else acc + c * blk
            out[:, :, i, :, :, j, :] = 0.0 if acc is None else acc
    return QuantumState("mixed", n, out.reshape(state.data.shape))


def adjoint_superoperator(sop: np.ndarray) -> np.ndarray:
    """Heisenberg-picture map: Tr(O S[rho]) == Tr(S_adj[O] rho)."""
    return np.transpose(sop, (3, 2, 1, 0))


def apply_channel(state: QuantumState, channel: str, p: float, qubit: int) -> QuantumState:
    """Apply ``rho -> sum_k K rho K^dagger`` on one qubit.

    With ``p == 0`` this is a no-op on either backend; otherwise the state must
    be mixed.
    """
    kraus = kraus_operators(channel, p)
    _check_qubit(state, qubit)
    if p == 0.0:
        return state
    if state.backend != "mixed":
        raise SimulatorError(
            f"{channel}(p={p}) cannot act on a pure state; use the 'mixed' backend"
        )
    return apply_superoperator(state, superoperator(kraus), qubit)


def expect_z(state: QuantumState, qubit: int) -> np.ndarray | float:
    """<Z_qubit>; a float for an unbatched state, else an array over the batch."""
    _check_qubit(state, qubit)
    return _z_values(state)[..., qubit] if state.batch_shape else float(_z_values(state)[qubit])


def expect_z_all(state: QuantumState) -> np.ndarray:
    """Vector of <Z_i> for every qubit, shape ``(*batch, N)``."""
    return _z_values(state)


def _z_values(state: QuantumState) -> np.ndarray:
    n = state.num_qubits
    if state.backend == "pure":
        probs = np.abs(state.data) ** 2
    else:
        diag = np.diagonal(state.data, axis1=-2, axis2=-1)
        if np.max(np.abs(diag.imag), initial=0.0) > 1e-10:
            raise SimulatorError("density matrix has a complex diagonal")
        probs = diag.real
    signs = 1.0 - 2.0 * ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1)
    return probs @ signs
