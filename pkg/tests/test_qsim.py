import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcgan import qsim
from qcgan.qsim import GateOp

CHANNELS = ("depolarizing", "bitflip", "amplitude_damping")
angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def _z_oracle(psi, q):
    # direct sum over basis states; qubit q is bit q of the index
    idx = np.arange(len(psi))
    sign = 1 - 2 * ((idx >> q) & 1)
    return float(np.sum(sign * np.abs(psi) ** 2))


def random_circuit(rng, n, depth=12):
    ops = []
    for _ in range(depth):
        if n > 1 and rng.random() < 0.3:
            c, t = rng.choice(n, 2, replace=False)
            ops.append(GateOp("CNOT", int(t), int(c)))
        else:
            ops.append(GateOp(str(rng.choice(["RX", "RY", "RZ"])), int(rng.integers(n)), angle=float(rng.uniform(-np.pi, np.pi))))
    return ops


def run(ops, n, backend):
    s = qsim.init_ground(n, backend)
    for op in ops:
        s = qsim.apply_gate(s, op)
    return s


def test_ground_states():
    assert np.array_equal(qsim.init_ground(1).amplitudes, [1, 0])
    assert np.array_equal(qsim.init_ground(2, "mixed").density, np.diag([1, 0, 0, 0]))
    psi = qsim.init_ground(4).amplitudes
    assert psi.shape == (16,) and np.isclose(np.linalg.norm(psi), 1)


@pytest.mark.parametrize("n", [0, 11])
def test_qubit_range(n):
    with pytest.raises(qsim.ConfigurationError):
        qsim.init_ground(n)


def test_ry_pi_flips():
    s = qsim.apply_gate(qsim.init_ground(1), GateOp("RY", 0, angle=np.pi))
    assert np.allclose(s.amplitudes, [0, 1], atol=1e-15)


@given(angles)
def test_rz_keeps_z(theta):
    s = qsim.apply_gate(qsim.init_ground(1), GateOp("RZ", 0, angle=theta))
    assert abs(qsim.expect_z(s, 0) - 1.0) < 1e-12


def test_cnot_propagates_flip():
    s = qsim.apply_gate(qsim.init_ground(2), GateOp("RY", 0, angle=np.pi))
    s = qsim.apply_gate(s, GateOp("CNOT", 1, 0))
    assert abs(s.amplitudes[3]) == pytest.approx(1.0, abs=1e-15)


def test_gate_validation():
    s = qsim.init_ground(2)
    with pytest.raises(qsim.SimulatorError):
        qsim.apply_gate(s, GateOp("RX", 2, angle=0.1))
    with pytest.raises(qsim.SimulatorError):
        qsim.apply_gate(s, GateOp("CNOT", 1, 1))


@pytest.mark.parametrize("z,expected", [(0.5, 0.0), (0.0, 1.0), (1.0, -1.0), (0.25, np.cos(np.pi / 4))])
def test_expect_after_ry(z, expected):
    s = qsim.apply_gate(qsim.init_ground(1), GateOp("RY", 0, angle=np.pi * z))
    assert abs(qsim.expect_z(s, 0) - expected) < 1e-10


def test_ground_expectation():
    assert np.all(qsim.expect_z_all(qsim.init_ground(4, "mixed")) == 1.0)


def test_rotation_matrix_against_closed_form():
    t = 0.7
    c, s = np.cos(t / 2), np.sin(t / 2)
    assert np.allclose(qsim.rotation_matrix("RY", t), [[c, -s], [s, c]])
    assert np.allclose(qsim.rotation_matrix("RX", t), [[c, -1j * s], [-1j * s, c]])
    assert np.allclose(qsim.rotation_matrix("RZ", t), np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)]))


@pytest.mark.parametrize("seed", range(10))
def test_pure_matches_explicit_unitary(seed):
    # compare against full 2^n x 2^n Kronecker products
    rng = np.random.default_rng(seed)
    n = 3
    ops = random_circuit(rng, n)
    U = np.eye(2**n, dtype=complex)
    for op in ops:
        if op.kind == "CNOT":
            M = np.zeros((2**n, 2**n))
            for i in range(2**n):
                j = i ^ (1 << op.target) if (i >> op.control) & 1 else i
                M[j, i] = 1
        else:
            M = np.array([[1.0]])
            for q in reversed(range(n)):
                M = np.kron(M, qsim.rotation_matrix(op.kind, op.angle) if q == op.target else np.eye(2))
        U = M @ U
    psi = U[:, 0]
    s = run(ops, n, "pure")
    assert np.allclose(s.amplitudes, psi, atol=1e-12)
    for q in range(n):
        assert abs(qsim.expect_z(s, q) - _z_oracle(psi, q)) < 1e-12


def test_backend_equivalence_100_circuits():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        ops = random_circuit(rng, n)
        a = qsim.expect_z_all(run(ops, n, "pure"))
        b = qsim.expect_z_all(run(ops, n, "mixed"))
        worst = max(worst, np.abs(a - b).max())
    assert worst < 1e-9


@given(st.integers(0, 2**31), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_norm_trace_and_hermiticity(seed, n):
    rng = np.random.default_rng(seed)
    ops = random_circuit(rng, n, depth=8)
    psi = run(ops, n, "pure").amplitudes
    assert abs(np.vdot(psi, psi).real - 1) < 1e-9
    s = run(ops, n, "mixed")
    for q in range(n):
        s = qsim.apply_channel(s, CHANNELS[q % 3], float(rng.random()), q)
    rho = s.density
    assert abs(np.trace(rho).real - 1) < 1e-9
    assert np.abs(rho - rho.conj().T).max() < 1e-12
    assert np.linalg.eigvalsh(rho).min() > -1e-10
    z = qsim.expect_z_all(s)
    assert np.all(np.abs(z) <= 1 + 1e-9)


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_inverse_angle_restores_state(seed):
    rng = np.random.default_rng(seed)
    ops = [op for op in random_circuit(rng, 3) if op.kind != "CNOT"]
    s0 = run(random_circuit(rng, 3), 3, "pure")
    s = s0
    for op in ops:
        s = qsim.apply_gate(s, op)
    for op in reversed(ops):
        s = qsim.apply_gate(s, GateOp(op.kind, op.target, angle=-op.angle))
    assert np.abs(s.amplitudes - s0.amplitudes).max() < 1e-10


def test_kraus_completeness_sweep():
    rng = np.random.default_rng(7)
    for ch in CHANNELS:
        for p in np.concatenate([[0.0, 1.0], rng.random(100)]):
            ks = qsim.kraus_operators(ch, float(p))
            assert np.abs(sum(k.conj().T @ k for k in ks) - np.eye(2)).max() <= 1e-12


def _single_qubit_rho(theta, phi):
    s = qsim.init_ground(1, "mixed")
    s = qsim.apply_gate(s, GateOp("RY", 0, angle=theta))
    return qsim.apply_gate(s, GateOp("RZ", 0, angle=phi))


@given(angles, angles)
def test_full_depolarization(theta, phi):
    s = qsim.apply_channel(_single_qubit_rho(theta, phi), "depolarizing", 1.0, 0)
    assert abs(qsim.expect_z(s, 0)) < 1e-12
    assert np.allclose(s.density, np.eye(2) / 2, atol=1e-12)


def test_zero_bitflip_is_exact_identity():
    s = _single_qubit_rho(0.3, 1.1)
    assert np.array_equal(qsim.apply_channel(s, "bitflip", 0.0, 0).density, s.density)


def test_full_amplitude_damping():
    s = qsim.apply_gate(qsim.init_ground(1, "mixed"), GateOp("RY", 0, angle=np.pi))
    s = qsim.apply_channel(s, "amplitude_damping", 1.0, 0)
    assert np.allclose(s.density, [[1, 0], [0, 0]], atol=1e-15)
    assert qsim.expect_z(s, 0) == pytest.approx(1.0)


def test_channel_on_pure_backend():
    s = qsim.init_ground(2)
    assert qsim.apply_channel(s, "bitflip", 0.0, 1) is s
    with pytest.raises(qsim.SimulatorError, match="mixed"):
        qsim.apply_channel(s, "bitflip", 0.1, 1)


def test_channel_matches_kraus_sum_on_two_qubits(rng):
    s = run(random_circuit(rng, 2), 2, "mixed")
    for ch, p in [("depolarizing", 0.3), ("bitflip", 0.2), ("amplitude_damping", 0.4)]:
        for q in range(2):
            expected = sum(
                (np.kron(k, np.eye(2)) if q == 1 else np.kron(np.eye(2), k)) @ s.density
                @ (np.kron(k, np.eye(2)) if q == 1 else np.kron(np.eye(2), k)).conj().T
                for k in qsim.kraus_operators(ch, p)
            )
            assert np.allclose(qsim.apply_channel(s, ch, p, q).density, expected, atol=1e-14)


def test_adjoint_superoperator_duality(rng):
    sop = qsim.superoperator(qsim.kraus_operators("amplitude_damping", 0.37))
    A = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    rho = A @ A.conj().T
    rho /= np.trace(rho)
    O = rng.standard_normal((2, 2))
    O = O + O.T
    fwd = np.einsum("ijkl,kl->ij", sop, rho)
    adj = np.einsum("ijkl,kl->ij", qsim.adjoint_superoperator(sop), O)
    assert np.trace(O @ fwd) == pytest.approx(np.trace(adj @ rho), abs=1e-14)


def test_batched_state_matches_loop(rng):
    thetas = rng.uniform(-np.pi, np.pi, 5)
    s = qsim.init_ground(2, "mixed", batch_shape=(5,))
    s = qsim.apply_gate(s, GateOp("RY", 1, angle=thetas))
    z = qsim.expect_z_all(s)
    assert z.shape == (5, 2)
    assert np.allclose(z[:, 1], np.cos(thetas), atol=1e-12)
