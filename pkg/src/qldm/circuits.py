"""Angle-encoded hardware-efficient ansatz circuits and their shift-rule gradients.

A circuit is: ``|0...0>`` -> one encoding rotation per qubit (angle = input value)
-> ``depth`` layers of (rotation block, CNOT block) -> per-qubit expectation of
Z or X. Parameters are stored layer-major, then qubit, then rotation slot.

All evaluation goes through :func:`evaluate_batch`, which runs many
(params, input) rows through the simulator at once with per-row angles. The
shift-rule Jacobians build every shifted copy of a row up front and push them
through in one pass.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numba
import numpy as np

from ._fused import encode_program, run_program
from .statevector import ContractViolation, Gate, cnot, measure_batch, rotate, zero_states

ENCODING_AXIS = "RY"
SHIFT = np.pi / 2

ANSATZ_SLOTS = {"basic": ("RX",), "expressive": ("RX", "RZ", "RX")}
ENTANGLEMENTS = ("linear", "circular")

# amplitudes held in memory per strided simulator pass (complex128 -> 16 bytes each)
_MAX_AMPLITUDES = 1 << 22


def _n_threads() -> int:
    try:
        return max(1, int(os.environ.get("QLDM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    ansatz: str = "expressive"
    depth: int = 3
    observable_basis: str = "Z"
    entanglement: str = "circular"

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ContractViolation("n_qubits must be >= 1")
        if self.depth < 1:
            raise ContractViolation("depth must be >= 1")
        if self.ansatz not in ANSATZ_SLOTS:
            raise ContractViolation(f"ansatz must be one of {tuple(ANSATZ_SLOTS)}")
        if self.observable_basis not in ("Z", "X"):
            raise ContractViolation("observable_basis must be 'Z' or 'X'")
        if self.entanglement not in ENTANGLEMENTS:
            raise ContractViolation(f"entanglement must be one of {ENTANGLEMENTS}")

    @property
    def slots(self) -> tuple[str, ...]:
        return ANSATZ_SLOTS[self.ansatz]

    @property
    def n_params(self) -> int:
        return len(self.slots) * self.n_qubits * self.depth

    def param_index(self, layer: int, qubit: int, slot: int = 0) -> int:
        return (layer * self.n_qubits + qubit) * len(self.slots) + slot

    def cnot_pairs(self) -> list[tuple[int, int]]:
        n = self.n_qubits
        pairs = [(i, i + 1) for i in range(n - 1)]
        if self.entanglement == "circular" and n > 2:
            pairs.append((n - 1, 0))
        return pairs

    @cached_property
    def program(self) -> tuple[tuple, ...]:
        """Flat op list: ("enc", kind, qubit, input_idx), ("rot", kind, qubit, param_idx), ("cx", c, t)."""
        ops = [("enc", ENCODING_AXIS, q, q) for q in range(self.n_qubits)]
        for layer in range(self.depth):
            for q in range(self.n_qubits):
                for s, kind in enumerate(self.slots):
                    ops.append(("rot", kind, q, self.param_index(layer, q, s)))
            ops.extend(("cx", c, t) for c, t in self.cnot_pairs())
        return tuple(ops)

    def gates(self, params, inputs) -> list[Gate]:
        """Concrete gate list for a single (params, input) pair."""
        params, inputs = _check_row(self, params, inputs)
        out = []
        for op in self.program:
            if op[0] == "cx":
                out.append(Gate.cx(op[1], op[2]))
            else:
                angle = inputs[op[3]] if op[0] == "enc" else params[op[3]]
                out.append(Gate(op[1], op[2], angle=float(angle)))
        return out


def n_params(spec: CircuitSpec) -> int:
    return spec.n_params


def report_depth(spec: CircuitSpec) -> int:
    """Cumulative circuit depth as quoted for the two ansatz families."""
    n, layers = spec.n_qubits, spec.depth
    if spec.ansatz == "basic":
        return 1 + (1 + n) * layers
    return 1 + 3 * n * layers


def _check_row(spec, params, inputs):
    params = np.asarray(params, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    if params.shape[-1:] != (spec.n_params,):
        raise ContractViolation(f"expected {spec.n_params} parameters, got shape {params.shape}")
    if inputs.shape[-1:] != (spec.n_qubits,):
        raise ContractViolation(f"expected {spec.n_qubits} inputs, got shape {inputs.shape}")
    return params, inputs


def _simulate_strided(spec: CircuitSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    n = spec.n_qubits
    psi = zero_states(n, (params.shape[0],))
    for op in spec.program:
        if op[0] == "cx":
            cnot(psi, n, op[1], op[2])
        elif op[0] == "enc":
            rotate(psi, n, op[1], op[2], inputs[:, op[3]])
        else:
            rotate(psi, n, op[1], op[2], params[:, op[3]])
    return measure_batch(psi, n, spec.observable_basis)


def _simulate_fused(spec: CircuitSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    numba.set_num_threads(min(_n_threads(), numba.config.NUMBA_NUM_THREADS))
    return run_program(
        _program_table(spec),
        np.ascontiguousarray(params),
        np.ascontiguousarray(inputs),
        spec.n_qubits,
        spec.observable_basis == "X",
    )


@lru_cache(maxsize=None)
def _program_table(spec: CircuitSpec) -> np.ndarray:
    return encode_program(spec.program, spec.n_qubits)


def evaluate_batch(spec: CircuitSpec, params, inputs, backend: str = "fused") -> np.ndarray:
    """Evaluate rows of (params, inputs); leading dims broadcast. Returns ``(..., n_qubits)``.

    ``backend="strided"`` runs the numpy gate kernels instead of the fused
    per-row kernel; both give the same numbers.
    """
    params, inputs = _check_row(spec, params, inputs)
    lead = np.broadcast_shapes(params.shape[:-1], inputs.shape[:-1])
    p = np.broadcast_to(params, lead + params.shape[-1:]).reshape(-1, spec.n_params)
    x = np.broadcast_to(inputs, lead + inputs.shape[-1:]).reshape(-1, spec.n_qubits)
    if backend == "fused":
        out = _simulate_fused(spec, p, x)
    elif backend == "strided":
        chunk = max(1, _MAX_AMPLITUDES >> spec.n_qubits)
        parts = [
            _simulate_strided(spec, p[s:s + chunk], x[s:s + chunk])
            for s in range(0, p.shape[0], chunk)
        ]
        out = np.concatenate(parts, axis=0) if parts else np.empty((0, spec.n_qubits))
    else:
        raise ContractViolation(f"unknown backend {backend!r}")
    return out.reshape(lead + (spec.n_qubits,))


def evaluate(spec: CircuitSpec, params, inputs) -> np.ndarray:
    params, inputs = _check_row(spec, params, inputs)
    if params.ndim != 1 or inputs.ndim != 1:
        raise ContractViolation("evaluate takes one parameter vector and one input vector")
    return evaluate_batch(spec, params, inputs)


def _shift_table(size: int) -> np.ndarray:
    eye = np.eye(size)
    return np.concatenate([SHIFT * eye, -SHIFT * eye], axis=0)


def jacobians(spec: CircuitSpec, params, inputs, wrt_params: bool = True, wrt_inputs: bool = False):
    """Outputs and shift-rule Jacobians for a batch of rows.

    ``params`` is ``(B, P)`` or ``(P,)``; ``inputs`` is ``(B, n)``. Returns
    ``(values (B, n), d_params (B, n, P) or None, d_inputs (B, n, n) or None)``.
    The unshifted row and every shifted copy go through one simulator pass.
    """
    params, inputs = _check_row(spec, params, inputs)
    inputs = np.atleast_2d(inputs)
    batch = inputs.shape[0]
    params = np.broadcast_to(params, (batch, spec.n_params))
    n, n_p = spec.n_qubits, spec.n_params

    p_rows = [params[:, None, :]]
    x_rows = [inputs[:, None, :]]
    if wrt_params:
        p_rows.append(params[:, None, :] + _shift_table(n_p)[None])
        x_rows.append(np.broadcast_to(inputs[:, None, :], (batch, 2 * n_p, n)))
    if wrt_inputs:
        p_rows.append(np.broadcast_to(params[:, None, :], (batch, 2 * n, n_p)))
        x_rows.append(inputs[:, None, :] + _shift_table(n)[None])
    out = evaluate_batch(spec, np.concatenate(p_rows, axis=1), np.concatenate(x_rows, axis=1))

    values = out[:, 0]
    pos = 1
    d_params = d_inputs = None
    if wrt_params:
        plus, minus = out[:, pos:pos + n_p], out[:, pos + n_p:pos + 2 * n_p]
        d_params = 0.5 * np.swapaxes(plus - minus, 1, 2)
        pos += 2 * n_p
    if wrt_inputs:
        plus, minus = out[:, pos:pos + n], out[:, pos + n:pos + 2 * n]
        d_inputs = 0.5 * np.swapaxes(plus - minus, 1, 2)
    return values, d_params, d_inputs


def param_shift_grad(spec: CircuitSpec, params, inputs) -> np.ndarray:
    """``(n_outputs, n_params)`` Jacobian, entry (i, j) = ½[f_i(θ_j+π/2) − f_i(θ_j−π/2)]."""
    params, inputs = _check_row(spec, params, inputs)
    _, jac, _ = jacobians(spec, params, inputs[None, :])
    return jac[0]


def input_shift_grad(spec: CircuitSpec, params, inputs) -> np.ndarray:
    """``(n_outputs, n_inputs)`` Jacobian with respect to the encoded values."""
    params, inputs = _check_row(spec, params, inputs)
    _, _, jac = jacobians(spec, params, inputs[None, :], wrt_params=False, wrt_inputs=True)
    return jac[0]
