"""Dense state-vector simulation of small qubit registers.

Wire 0 is the most significant bit of the amplitude index, so for two qubits
index 2 (binary ``10``) is the state with wire 0 set and wire 1 clear.

Gate angles may be plain floats or 1-D arrays of length ``n``. Array angles
describe a batch of ``n`` circuits that share their gate layout; they are
simulated together by :func:`simulate_batch`, which is how the trainer
evaluates all perturbed parameter vectors of a finite-difference gradient in
one pass.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import InvalidArgumentError

MAX_QUBITS = 20

Angle = Union[float, np.ndarray]


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating))


@dataclass(frozen=True)
class RX:
    wire: int
    theta: Angle

    def matrix(self) -> np.ndarray:
        if _is_scalar(self.theta):
            c, s = math.cos(self.theta / 2), math.sin(self.theta / 2)
            return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
        c, s = np.cos(self.theta / 2), np.sin(self.theta / 2)
        return _stack2x2(c, -1j * s, -1j * s, c)


@dataclass(frozen=True)
class RY:
    wire: int
    theta: Angle

    def matrix(self) -> np.ndarray:
        if _is_scalar(self.theta):
            c, s = math.cos(self.theta / 2), math.sin(self.theta / 2)
            return np.array([[c, -s], [s, c]], dtype=complex)
        c, s = np.cos(self.theta / 2), np.sin(self.theta / 2)
        return _stack2x2(c, -s, s, c)


@dataclass(frozen=True)
class RZ:
    wire: int
    theta: Angle

    def matrix(self) -> np.ndarray:
        if _is_scalar(self.theta):
            p = cmath.exp(0.5j * self.theta)
            return np.array([[p.conjugate(), 0], [0, p]], dtype=complex)
        p = np.exp(0.5j * np.asarray(self.theta))
        return _stack2x2(p.conj(), 0, 0, p)


@dataclass(frozen=True)
class CNOT:
    control: int
    target: int

    def matrix(self) -> np.ndarray:
        """Matrix applied to the target when the control is set."""
        return np.array([[0, 1], [1, 0]], dtype=complex)


@dataclass(frozen=True)
class CU3:
    control: int
    target: int
    theta: Angle
    phi: Angle
    lam: Angle

    def matrix(self) -> np.ndarray:
        """U3(theta, phi, lam), applied to the target when the control is set."""
        return u3_matrix(self.theta, self.phi, self.lam)


Gate = Union[RX, RY, RZ, CNOT, CU3]
Circuit = Sequence[Gate]


def u3_matrix(theta: Angle, phi: Angle, lam: Angle) -> np.ndarray:
    if _is_scalar(theta) and _is_scalar(phi) and _is_scalar(lam):
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        return np.array(
            [
                [c, -cmath.exp(1j * lam) * s],
                [cmath.exp(1j * phi) * s, cmath.exp(1j * (phi + lam)) * c],
            ],
            dtype=complex,
        )
    theta, phi, lam = (np.asarray(a, dtype=float) for a in (theta, phi, lam))
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    e_lam, e_phi = np.exp(1j * lam), np.exp(1j * phi)
    return _stack2x2(c, -e_lam * s, e_phi * s, e_phi * e_lam * c)


def _stack2x2(a, b, c, d) -> np.ndarray:
    shape = np.broadcast_shapes(*(x.shape for x in (a, b, c, d) if isinstance(x, np.ndarray)))
    out = np.empty(shape + (2, 2), dtype=complex)
    out[..., 0, 0] = a
    out[..., 0, 1] = b
    out[..., 1, 0] = c
    out[..., 1, 1] = d
    return out


@dataclass
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.num_qubits,):
            raise InvalidArgumentError(
                f"expected {2**self.num_qubits} amplitudes for {self.num_qubits} qubits, "
                f"got shape {self.amplitudes.shape}"
            )

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def new_zero_state(q: int) -> StateVector:
    if not 1 <= q <= MAX_QUBITS:
        raise InvalidArgumentError(f"qubit count must be in [1, {MAX_QUBITS}], got {q}")
    amps = np.zeros(2**q, dtype=complex)
    amps[0] = 1.0
    return StateVector(q, amps)


def gate_wires(gate: Gate) -> tuple[int, ...]:
    if isinstance(gate, (CNOT, CU3)):
        return (gate.control, gate.target)
    return (gate.wire,)


def check_gate(gate: Gate, num_qubits: int) -> None:
    wires = gate_wires(gate)
    for w in wires:
        if not 0 <= w < num_qubits:
            raise InvalidArgumentError(
                f"{type(gate).__name__} wire {w} out of range for {num_qubits} qubits"
            )
    if len(wires) == 2 and wires[0] == wires[1]:
        raise InvalidArgumentError(f"{type(gate).__name__} control equals target ({wires[0]})")


@lru_cache(maxsize=None)
def _pair_index(axis: int) -> tuple[tuple, tuple]:
    return (slice(None),) * axis + (0,), (slice(None),) * axis + (1,)


def _apply_inplace(psi: np.ndarray, gate: Gate) -> None:
    """Apply ``gate`` to ``psi`` of shape ``(n, 2, ..., 2)`` in place.

    Indexing one tensor axis at 0 and 1 yields the two halves of every
    amplitude pair the gate mixes; both halves are views into ``psi``.
    """
    if isinstance(gate, (CNOT, CU3)):
        # Fix the control axis at 1; the target axis shifts left if it came after.
        sub = psi[(slice(None),) * (1 + gate.control) + (1,)]
        axis = gate.target + (1 if gate.target < gate.control else 0)
    else:
        sub = psi
        axis = 1 + gate.wire
    lo, hi = _pair_index(axis)

    if isinstance(gate, CNOT):
        a0 = sub[lo].copy()
        sub[lo] = sub[hi]
        sub[hi] = a0
        return

    m = gate.matrix()
    if m.ndim == 3:
        # batch of matrices: broadcast over the leading batch axis only
        m = m.reshape((m.shape[0],) + (1,) * (sub.ndim - 2) + (2, 2))
    m00, m01, m10, m11 = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    if isinstance(gate, RZ):
        sub[lo] *= m00
        sub[hi] *= m11
        return
    a0 = sub[lo].copy()
    a1 = sub[hi]
    sub[lo] = m00 * a0 + m01 * a1
    sub[hi] = m10 * a0 + m11 * a1


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    check_gate(gate, state.num_qubits)
    q = state.num_qubits
    psi = state.amplitudes.copy().reshape((1,) + (2,) * q)
    _apply_inplace(psi, gate)
    return StateVector(q, psi.reshape(-1))


def _apply_1q(psi: np.ndarray, m: np.ndarray, wire: int) -> None:
    lo, hi = _pair_index(1 + wire)
    if m.ndim == 3:
        m = m.reshape((m.shape[0],) + (1,) * (psi.ndim - 2) + (2, 2))
    a0 = psi[lo].copy()
    a1 = psi[hi]
    psi[lo] = m[..., 0, 0] * a0 + m[..., 0, 1] * a1
    psi[hi] = m[..., 1, 0] * a0 + m[..., 1, 1] * a1


def _run(psi: np.ndarray, circuit: Circuit) -> None:
    """Apply ``circuit`` in place, fusing runs of single-qubit gates per wire.

    Single-qubit gates on different wires commute, so a wire's pending
    product only has to be flushed when a two-qubit gate touches that wire.
    """
    pending: dict[int, np.ndarray] = {}
    for gate in circuit:
        if isinstance(gate, (RX, RY, RZ)):
            m = gate.matrix()
            prev = pending.get(gate.wire)
            pending[gate.wire] = m if prev is None else m @ prev
            continue
        for w in (gate.control, gate.target):
            if w in pending:
                _apply_1q(psi, pending.pop(w), w)
        _apply_inplace(psi, gate)
    for w in sorted(pending):
        _apply_1q(psi, pending[w], w)


def apply_circuit(state: StateVector, circuit: Circuit) -> StateVector:
    for gate in circuit:
        check_gate(gate, state.num_qubits)
    q = state.num_qubits
    psi = state.amplitudes.copy().reshape((1,) + (2,) * q)
    _run(psi, circuit)
    return StateVector(q, psi.reshape(-1))


def simulate_batch(num_qubits: int, circuit: Circuit, batch: int) -> np.ndarray:
    """Run ``batch`` circuits sharing one layout from ``|0...0>``.

    Array-valued angles must have length ``batch``. Returns amplitudes of
    shape ``(batch, 2**num_qubits)``.
    """
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise InvalidArgumentError(f"qubit count must be in [1, {MAX_QUBITS}], got {num_qubits}")
    for gate in circuit:
        check_gate(gate, num_qubits)
    psi = np.zeros((batch, 2**num_qubits), dtype=complex)
    psi[:, 0] = 1.0
    psi = psi.reshape((batch,) + (2,) * num_qubits)
    _run(psi, circuit)
    return psi.reshape(batch, -1)


def z_expectations(amplitudes: np.ndarray, num_qubits: int) -> np.ndarray:
    """Per-wire Pauli-Z expectations for amplitudes of shape ``(..., 2**q)``."""
    lead = amplitudes.shape[:-1]
    probs = (amplitudes.real**2 + amplitudes.imag**2).reshape(lead + (2,) * num_qubits)
    k = len(lead)
    out = np.empty(lead + (num_qubits,))
    for w in range(num_qubits):
        others = tuple(k + a for a in range(num_qubits) if a != w)
        marginal = probs.sum(axis=others)
        out[..., w] = marginal[..., 0] - marginal[..., 1]
    return np.clip(out, -1.0, 1.0)


def expectation_z(state: StateVector, wire: int) -> float:
    if not 0 <= wire < state.num_qubits:
        raise InvalidArgumentError(f"wire {wire} out of range for {state.num_qubits} qubits")
    return float(z_expectations(state.amplitudes, state.num_qubits)[wire])


def expectation_z_all(state: StateVector) -> np.ndarray:
    return z_expectations(state.amplitudes, state.num_qubits)
