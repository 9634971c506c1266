import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qldm.statevector import (
    ContractViolation,
    Gate,
    Observable,
    StateVector,
    apply_gate,
    apply_gates,
    expectation,
    gate_matrix,
    measure_all,
    rotate,
)


def random_gate(rng, n):
    kind = rng.choice(["RX", "RY", "RZ", "CNOT"] if n > 1 else ["RX", "RY", "RZ"])
    if kind == "CNOT":
        c, t = rng.choice(n, 2, replace=False)
        return Gate.cx(int(c), int(t))
    return Gate(str(kind), int(rng.integers(n)), angle=float(rng.uniform(-2 * np.pi, 2 * np.pi)))


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v))


def test_rx_pi_flips():
    out = apply_gate(StateVector.zero(1), Gate.rx(0, np.pi))
    np.testing.assert_allclose(out.amplitudes, [0, -1j], atol=1e-15)
    assert expectation(out, Observable("Z", 0)) == pytest.approx(-1.0, abs=1e-15)


def test_rx_zero_is_identity():
    psi = random_state(np.random.default_rng(0), 3)
    out = apply_gate(psi, Gate.rx(1, 0.0))
    np.testing.assert_array_equal(out.amplitudes, psi.amplitudes)


def test_bell_preparation():
    s = 1 / np.sqrt(2)
    psi = StateVector(2, [s, 0, s, 0])  # (|00> + |10>)/√2
    out = apply_gate(psi, Gate.cx(0, 1))
    np.testing.assert_allclose(out.amplitudes, [s, 0, 0, s], atol=1e-15)


def test_apply_gate_leaves_input_untouched():
    psi = StateVector.zero(2)
    apply_gate(psi, Gate.ry(0, 1.0))
    np.testing.assert_array_equal(psi.amplitudes, [1, 0, 0, 0])


@pytest.mark.parametrize(
    "gate",
    [Gate.rx(2, 0.1), Gate.cx(0, 3), Gate.rz(-1, 0.1)],
)
def test_index_out_of_range(gate):
    with pytest.raises(ContractViolation):
        apply_gate(StateVector.zero(2), gate)


def test_gate_construction_contracts():
    with pytest.raises(ContractViolation):
        Gate("CNOT", 0, control=0)
    with pytest.raises(ContractViolation):
        Gate("RX", 0)
    with pytest.raises(ContractViolation):
        Gate("H", 0, angle=0.0)


def test_expectation_basics():
    zero = StateVector.zero(1)
    assert expectation(zero, Observable("Z", 0)) == 1.0
    assert expectation(zero, Observable("X", 0)) == 0.0
    out = apply_gate(zero, Gate.rx(0, 0.7))
    assert expectation(out, Observable("Z", 0)) == pytest.approx(np.cos(0.7), abs=1e-14)
    assert np.cos(0.7) == pytest.approx(0.7648, abs=1e-4)


def test_measure_all_basics():
    zero = StateVector.zero(4)
    np.testing.assert_array_equal(measure_all(zero, "Z"), np.ones(4))
    np.testing.assert_array_equal(measure_all(zero, "X"), np.zeros(4))


def dense_expectation(psi, basis, q, n):
    pauli = {"Z": np.diag([1.0, -1.0]), "X": np.array([[0.0, 1.0], [1.0, 0.0]])}[basis]
    ops = [np.eye(2)] * n
    ops[q] = pauli
    m = ops[0]
    for op in ops[1:]:
        m = np.kron(m, op)
    return float(np.real(np.conj(psi) @ m @ psi))


def test_bell_pair_measurement_matches_dense_oracle():
    bell = apply_gates(StateVector.zero(2), [Gate.ry(0, np.pi / 2), Gate.cx(0, 1)])
    for basis in "ZX":
        got = measure_all(bell, basis)
        want = [dense_expectation(bell.amplitudes, basis, q, 2) for q in range(2)]
        np.testing.assert_allclose(got, want, atol=1e-14)
    np.testing.assert_allclose(measure_all(bell, "Z"), [0.0, 0.0], atol=1e-15)


def test_random_states_measure_like_dense_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 5))
        psi = random_state(rng, n)
        for basis in "ZX":
            want = [dense_expectation(psi.amplitudes, basis, q, n) for q in range(n)]
            np.testing.assert_allclose(measure_all(psi, basis), want, atol=1e-12)


def test_random_circuits_match_kronecker_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 4))
        psi = random_state(rng, n)
        vec = psi.amplitudes.copy()
        for _ in range(int(rng.integers(1, 21))):
            g = random_gate(rng, n)
            psi = apply_gate(psi, g)
            vec = gate_matrix(g, n) @ vec
        np.testing.assert_allclose(psi.amplitudes, vec, atol=1e-10, rtol=0)


def test_norm_preserved_over_random_circuits():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        psi = StateVector.zero(n)
        for _ in range(20):
            psi = apply_gate(psi, random_gate(rng, n))
            assert abs(psi.norm() - 1.0) < 1e-12


@settings(deadline=None, max_examples=60)
@given(
    seed=st.integers(0, 2**32 - 1),
    a=st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
    b=st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
)
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    g = random_gate(rng, n)
    # unnormalized inputs go straight to the kernels; StateVector does not check norms
    p1 = StateVector(n, rng.normal(size=2**n) + 1j * rng.normal(size=2**n))
    p2 = StateVector(n, rng.normal(size=2**n) + 1j * rng.normal(size=2**n))
    lhs = apply_gate(StateVector(n, a * p1.amplitudes + b * p2.amplitudes), g).amplitudes
    rhs = a * apply_gate(p1, g).amplitudes + b * apply_gate(p2, g).amplitudes
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


def test_batched_rotation_uses_per_row_angles():
    rng = np.random.default_rng(5)
    angles = rng.uniform(-3, 3, 6)
    psi = np.tile(random_state(rng, 3).amplitudes, (6, 1))
    single = [apply_gate(StateVector(3, row), Gate.rx(1, a)).amplitudes for row, a in zip(psi, angles)]
    rotate(psi, 3, "RX", 1, angles)
    np.testing.assert_allclose(psi, np.array(single), atol=1e-15)


def test_non_contiguous_rejected():
    psi = np.zeros((4, 8), dtype=complex)[:, ::2]
    with pytest.raises(ContractViolation):
        rotate(psi, 2, "RX", 0, 0.1)


def test_bad_shapes():
    with pytest.raises(ContractViolation):
        StateVector(2, [1, 0, 0])
    with pytest.raises(ContractViolation):
        StateVector(15)
    with pytest.raises(ContractViolation):
        Observable("Y", 0)
