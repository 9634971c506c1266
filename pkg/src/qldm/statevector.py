"""Dense statevector simulation for RX/RY/RZ/CNOT circuits.

Qubit 0 is the most significant bit of the basis index, so ``|q0 q1 ... q_{n-1}>``
maps to ``amplitudes[int("q0q1...", 2)]`` and the dense unitary of a
single-qubit gate on qubit ``q`` is ``I ⊗ ... ⊗ U ⊗ ... ⊗ I`` with ``U`` in
slot ``q``.

Two layers live here. The batched kernels (``rotate``, ``cnot``,
``expect_z``, ``expect_x``) work in place on arrays of shape ``(..., 2**n)`` and
accept per-row angles; the circuit and training code drives them directly.
The ``StateVector``/``Gate`` API on top has value semantics.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MAX_QUBITS = 14
ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CNOT",)
BASES = ("Z", "X")


class ContractViolation(ValueError):
    """Raised when an operation is called outside its documented domain."""


def _split(psi: np.ndarray, n_qubits: int, qubit: int) -> tuple[np.ndarray, np.ndarray]:
    """Views onto the amplitude pairs differing only in ``qubit``."""
    if not psi.flags.c_contiguous:
        raise ContractViolation("in-place kernels need a C-contiguous amplitude array")
    lead = psi.shape[:-1]
    view = psi.reshape(lead + (1 << qubit, 2, 1 << (n_qubits - qubit - 1)))
    return view[..., 0, :], view[..., 1, :]


def _angle_column(angle, lead: tuple[int, ...]) -> np.ndarray:
    a = np.asarray(angle, dtype=np.float64)
    a = np.broadcast_to(a, lead) if a.ndim == 0 else a
    return a.reshape(a.shape + (1, 1))


def rotate(psi: np.ndarray, n_qubits: int, kind: str, qubit: int, angle) -> None:
    """Apply ``kind(angle)`` on ``qubit`` in place. ``angle`` broadcasts over batch rows."""
    a0, a1 = _split(psi, n_qubits, qubit)
    half = 0.5 * _angle_column(angle, psi.shape[:-1])
    if kind == "RZ":
        a0 *= np.exp(-1j * half)
        a1 *= np.exp(1j * half)
        return
    c, s = np.cos(half), np.sin(half)
    x0 = a0.copy()
    if kind == "RX":
        # [[c, -is], [-is, c]]
        a0 *= c
        a0 -= 1j * s * a1
        a1 *= c
        a1 -= 1j * s * x0
    elif kind == "RY":
        # [[c, -s], [s, c]]
        a0 *= c
        a0 -= s * a1
        a1 *= c
        a1 += s * x0
    else:
        raise ContractViolation(f"unknown rotation {kind!r}")


def cnot(psi: np.ndarray, n_qubits: int, control: int, target: int) -> None:
    """Flip ``target`` on the control=1 half of the state, in place."""
    if not psi.flags.c_contiguous:
        raise ContractViolation("in-place kernels need a C-contiguous amplitude array")
    lead = psi.shape[:-1]
    shape = lead + (2,) * n_qubits
    view = psi.reshape(shape)
    k = len(lead)
    sel = [slice(None)] * len(shape)
    sel[k + control] = 1
    sub = view[tuple(sel)]
    # target axis index shifts down by one if it sat after the removed control axis
    t_axis = k + target - (1 if target > control else 0)
    sub[...] = np.flip(sub, axis=t_axis).copy()


def expect_z(psi: np.ndarray, n_qubits: int, qubit: int) -> np.ndarray:
    a0, a1 = _split(psi, n_qubits, qubit)
    p = np.abs(a0) ** 2 - np.abs(a1) ** 2
    return p.sum(axis=(-2, -1))


def expect_x(psi: np.ndarray, n_qubits: int, qubit: int) -> np.ndarray:
    a0, a1 = _split(psi, n_qubits, qubit)
    return 2.0 * np.real(np.conj(a0) * a1).sum(axis=(-2, -1))


def measure_batch(psi: np.ndarray, n_qubits: int, basis: str) -> np.ndarray:
    """Per-qubit expectations, shape ``(..., n_qubits)``."""
    if basis == "Z":
        fn = expect_z
    elif basis == "X":
        fn = expect_x
    else:
        raise ContractViolation(f"basis must be one of {BASES}, got {basis!r}")
    return np.stack([fn(psi, n_qubits, q) for q in range(n_qubits)], axis=-1)


def zero_states(n_qubits: int, lead: tuple[int, ...] = ()) -> np.ndarray:
    psi = np.zeros(lead + (1 << n_qubits,), dtype=np.complex128)
    psi[..., 0] = 1.0
    return psi


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: Optional[int] = None
    angle: Optional[float] = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ContractViolation(f"gate kind must be one of {GATE_KINDS}, got {self.kind!r}")
        if self.kind == "CNOT":
            if self.control is None or self.angle is not None:
                raise ContractViolation("CNOT takes a control and no angle")
            if self.control == self.target:
                raise ContractViolation("CNOT control and target must differ")
        elif self.angle is None or self.control is not None:
            raise ContractViolation(f"{self.kind} takes an angle and no control")

    @classmethod
    def rx(cls, target: int, angle: float) -> "Gate":
        return cls("RX", target, angle=float(angle))

    @classmethod
    def ry(cls, target: int, angle: float) -> "Gate":
        return cls("RY", target, angle=float(angle))

    @classmethod
    def rz(cls, target: int, angle: float) -> "Gate":
        return cls("RZ", target, angle=float(angle))

    @classmethod
    def cx(cls, control: int, target: int) -> "Gate":
        return cls("CNOT", target, control=control)


@dataclass(frozen=True)
class Observable:
    basis: str
    qubit: int

    def __post_init__(self):
        if self.basis not in BASES:
            raise ContractViolation(f"basis must be one of {BASES}, got {self.basis!r}")


class StateVector:
    """An n-qubit pure state. Operations return fresh states."""

    __slots__ = ("n_qubits", "amplitudes")

    def __init__(self, n_qubits: int, amplitudes: Optional[np.ndarray] = None):
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ContractViolation(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits}")
        if amplitudes is None:
            amplitudes = zero_states(n_qubits)
        else:
            amplitudes = np.array(amplitudes, dtype=np.complex128)
            if amplitudes.shape != (1 << n_qubits,):
                raise ContractViolation(
                    f"expected {1 << n_qubits} amplitudes, got shape {amplitudes.shape}"
                )
        self.n_qubits = n_qubits
        self.amplitudes = amplitudes

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        return cls(n_qubits)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())

    def _check_qubit(self, q: int) -> None:
        if not 0 <= q < self.n_qubits:
            raise ContractViolation(f"qubit index {q} out of range for {self.n_qubits} qubits")

    def __repr__(self) -> str:
        return f"StateVector(n_qubits={self.n_qubits}, amplitudes={self.amplitudes!r})"


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    state._check_qubit(gate.target)
    out = state.copy()
    if gate.kind == "CNOT":
        state._check_qubit(gate.control)
        cnot(out.amplitudes, out.n_qubits, gate.control, gate.target)
    else:
        rotate(out.amplitudes, out.n_qubits, gate.kind, gate.target, gate.angle)
    return out


def apply_gates(state: StateVector, gates) -> StateVector:
    for g in gates:
        state = apply_gate(state, g)
    return state


def expectation(state: StateVector, obs: Observable) -> float:
    state._check_qubit(obs.qubit)
    fn = expect_z if obs.basis == "Z" else expect_x
    return float(fn(state.amplitudes, state.n_qubits, obs.qubit))


def measure_all(state: StateVector, basis: str) -> np.ndarray:
    return measure_batch(state.amplitudes, state.n_qubits, basis)


def gate_matrix(gate: Gate, n_qubits: int) -> np.ndarray:
    """Explicit ``2**n x 2**n`` unitary built from Kronecker products.

    Independent of the strided kernels above; used as a test oracle.
    """
    eye = np.eye(2, dtype=np.complex128)
    if gate.kind == "CNOT":
        p0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
        p1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)
        xm = np.array([[0, 1], [1, 0]], dtype=np.complex128)
        off = [eye] * n_qubits
        on = [eye] * n_qubits
        off[gate.control] = p0
        on[gate.control] = p1
        on[gate.target] = xm
        return _kron_all(off) + _kron_all(on)
    c, s = np.cos(gate.angle / 2), np.sin(gate.angle / 2)
    if gate.kind == "RX":
        u = np.array([[c, -1j * s], [-1j * s, c]])
    elif gate.kind == "RY":
        u = np.array([[c, -s], [s, c]], dtype=np.complex128)
    else:
        u = np.diag([np.exp(-0.5j * gate.angle), np.exp(0.5j * gate.angle)])
    ops = [eye] * n_qubits
    ops[gate.target] = u
    return _kron_all(ops)


def _kron_all(ops) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out
