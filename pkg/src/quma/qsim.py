"""Qubit physics backend.

Pulses act as equatorial-axis rotations whose axis picks up the
single-sideband carrier phase at the pulse start time.  Idle time relaxes the
qubit with time constant T1; measurement projects (sampling) or dephases
(expectation).

Two state representations are used:

* :class:`QubitState` / :class:`TwoQubitRegister`: pure states for sampling
  runs (quantum trajectories, one outcome per shot);
* :class:`DensityRegister`: density matrices for expectation runs, so the
  result is the exact shot average.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

__all__ = [
    "F_QUBIT_HZ",
    "F_RESONATOR_HZ",
    "F_SSB_HZ",
    "DEFAULT_T1_NS",
    "QsimError",
    "Gate",
    "IDENTITY",
    "CZ_GATE",
    "MEASURE_GATE",
    "Carrier",
    "rotation_matrix",
    "QubitState",
    "TwoQubitRegister",
    "DensityRegister",
    "apply_rotation",
    "apply_pulse_event",
    "relax",
    "measure",
    "apply_cz",
    "fidelity",
    "SubstreamRNG",
    "QuantumBackend",
]

# Device constants of the measured qubit.  Only the sideband frequency has a
# dynamical role here; the qubit and resonator frequencies belong to the
# analog chain, which is not simulated.
F_QUBIT_HZ = 6.466e9
F_RESONATOR_HZ = 6.850e9
F_SSB_HZ = -50e6
DEFAULT_T1_NS = 20000.0

class QsimError(RuntimeError):
    pass


class Gate(NamedTuple):
    """Gate semantics of a stored pulse.  ``kind`` is one of
    ``rotation``, ``identity``, ``cz``, ``measure``."""

    kind: str
    axis: float = 0.0
    angle: float = 0.0


IDENTITY = Gate("identity")
CZ_GATE = Gate("cz")
MEASURE_GATE = Gate("measure")


class Carrier:
    """SSB carrier phase, computed exactly from integer cycle counts.

    ``turns`` returns the carrier phase in periods (in ``[0, 1)``), so that
    long runs (10^11 ns and more) do not lose phase accuracy.
    """

    def __init__(self, freq_hz: float, cycle_ns: float = 5):
        self.freq_hz = freq_hz
        self.cycle_ns = cycle_ns
        self._f = Fraction(freq_hz)
        per_cycle = self._f * Fraction(cycle_ns) / 10**9
        self._num = per_cycle.numerator
        self._den = per_cycle.denominator
        self._offsets: dict = {}

    def _offset(self, shift_ns, ref_ns) -> Fraction:
        key = (shift_ns, ref_ns)
        off = self._offsets.get(key)
        if off is None:
            off = (self._f * (Fraction(shift_ns) - Fraction(ref_ns)) / 10**9) % 1
            self._offsets[key] = off
        return off

    def turns(self, start_cycle: int, shift_ns: float = 0, ref_ns: float = 0) -> float:
        base = (self._num * start_cycle) % self._den
        if not shift_ns and not ref_ns:
            return base / self._den
        off = self._offset(shift_ns, ref_ns)
        if not off:
            return base / self._den
        return float((Fraction(base, self._den) + off) % 1)

    def turns_at(self, t_ns: float, ref_ns: float = 0) -> float:
        """Phase in periods at an arbitrary time in ns."""
        return float((self._f * (Fraction(t_ns) - Fraction(ref_ns)) / 10**9) % 1)

    def phase(self, start_cycle: int, shift_ns: float = 0, ref_ns: float = 0) -> float:
        return 2 * math.pi * self.turns(start_cycle, shift_ns, ref_ns)


def rotation_matrix(axis: float, angle: float) -> np.ndarray:
    """exp(-i angle/2 (cos(axis) X + sin(axis) Y))."""
    c = math.cos(angle / 2)
    s = math.sin(angle / 2)
    e = cmath.exp(1j * axis)
    return np.array([[c, -1j * s * e.conjugate()], [-1j * s * e, c]], dtype=complex)


# ---------------------------------------------------------------------------
# Pure single qubit


@dataclass
class QubitState:
    alpha: complex = 1.0 + 0j
    beta: complex = 0j
    t_last_ns: float = 0.0
    t1_ns: float = DEFAULT_T1_NS
    t_ref_ns: float = 0.0

    @property
    def p1(self) -> float:
        b = self.beta
        return b.real * b.real + b.imag * b.imag

    @property
    def norm2(self) -> float:
        return abs(self.alpha) ** 2 + abs(self.beta) ** 2

    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=complex)

    def _rotate(self, axis: float, angle: float) -> None:
        c = math.cos(angle / 2)
        s = math.sin(angle / 2)
        e = cmath.exp(1j * axis)
        a, b = self.alpha, self.beta
        self.alpha = c * a - 1j * s * e.conjugate() * b
        self.beta = -1j * s * e * a + c * b


def apply_rotation(state, axis: float, angle: float, qubit: int = 0):
    """Rotate by ``angle`` about the equatorial axis at azimuth ``axis``."""
    if isinstance(state, QubitState):
        state._rotate(axis, angle)
        return state
    state.apply_1q(rotation_matrix(axis, angle), qubit)
    return state


def apply_pulse_event(state: QubitState, event, carrier: Carrier) -> QubitState:
    """Apply a pulse on a single qubit, honouring the carrier phase at its start.

    ``event`` needs ``gate``, ``start_cycle``, ``shift_ns``, ``start_ns`` and
    ``duration_ns`` attributes (see :class:`quma.adi.PulseEvent`).
    """
    start = event.start_ns
    if start < state.t_last_ns - 1e-9:
        raise QsimError(f"pulse at {start} ns starts before the previous event ended ({state.t_last_ns} ns)")
    gate = event.gate
    if gate.kind == "rotation":
        turns = carrier.turns(event.start_cycle, event.shift_ns, state.t_ref_ns)
        state._rotate(gate.axis + 2 * math.pi * turns, gate.angle)
    elif gate.kind != "identity":
        raise QsimError(f"{gate.kind} pulse cannot act on a single qubit state")
    state.t_last_ns = start + event.duration_ns
    return state


# ---------------------------------------------------------------------------
# Registers


class TwoQubitRegister:
    """Pure state over two qubits; amplitude index = 2*b0 + b1."""

    n = 2

    def __init__(self, psi=None):
        self.psi = np.array([1, 0, 0, 0], dtype=complex) if psi is None else np.asarray(psi, dtype=complex).copy()
        if self.psi.shape != (4,):
            raise ValueError("two-qubit register needs 4 amplitudes")

    @classmethod
    def from_qubits(cls, q0: QubitState, q1: QubitState) -> "TwoQubitRegister":
        return cls(np.kron(q0.vector(), q1.vector()))

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.psi, self.psi).real)

    def _view(self) -> np.ndarray:
        return self.psi.reshape(2, 2)

    def apply_1q(self, u: np.ndarray, k: int) -> None:
        t = self._view()
        t = np.tensordot(u, t, axes=([1], [k]))
        if k == 1:
            t = t.T
        self.psi = np.ascontiguousarray(t).reshape(4)

    def apply_cz(self) -> None:
        self.psi[3] = -self.psi[3]

    def p1(self, k: int) -> float:
        t = np.abs(self._view()) ** 2
        return float(t[1, :].sum() if k == 0 else t[:, 1].sum())

    def _mask(self, k: int, bit: int) -> np.ndarray:
        idx = np.arange(4)
        return ((idx >> (1 - k)) & 1) == bit

    def project(self, k: int, bit: int) -> None:
        self.psi[~self._mask(k, bit)] = 0
        nrm = math.sqrt(self.norm2)
        if nrm == 0:
            raise QsimError("projection onto a zero-probability outcome")
        self.psi /= nrm

    def relax(self, k: int, t_ns: float, t1_ns: float, rng) -> None:
        if t_ns <= 0:
            return
        p1 = self.p1(k)
        if p1 == 0:
            return
        gamma = math.exp(-t_ns / t1_ns)
        if rng.random() < p1 * (1 - gamma):
            # jump: lower qubit k
            new = np.zeros(4, dtype=complex)
            ones = np.nonzero(self._mask(k, 1))[0]
            shift = 1 << (1 - k)
            new[ones - shift] = self.psi[ones]
            self.psi = new / math.sqrt(np.vdot(new, new).real)
        else:
            self.psi[self._mask(k, 1)] *= math.sqrt(gamma)
            self.psi /= math.sqrt(self.norm2)


class DensityRegister:
    """Density matrix over one or two qubits (qubit 0 is the high bit)."""

    def __init__(self, n: int = 1, rho=None, t1_ns: float = DEFAULT_T1_NS):
        if n not in (1, 2):
            raise ValueError("DensityRegister supports 1 or 2 qubits")
        self.n = n
        dim = 2**n
        if rho is None:
            rho = np.zeros((dim, dim), dtype=complex)
            rho[0, 0] = 1
        self.rho = np.asarray(rho, dtype=complex).copy()
        self.t1_ns = t1_ns

    @classmethod
    def from_state(cls, psi) -> "DensityRegister":
        psi = np.asarray(psi, dtype=complex)
        return cls(int(round(math.log2(psi.size))), np.outer(psi, psi.conj()))

    def merge(self, other: "DensityRegister") -> "DensityRegister":
        if self.n + other.n > 2:
            raise QsimError("registers beyond two qubits are not supported")
        return DensityRegister(2, np.kron(self.rho, other.rho), self.t1_ns)

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    def _lift(self, op: np.ndarray, k: int) -> np.ndarray:
        if self.n == 1:
            return op
        eye = np.eye(2, dtype=complex)
        return np.kron(op, eye) if k == 0 else np.kron(eye, op)

    def apply_1q(self, u: np.ndarray, k: int = 0) -> None:
        full = self._lift(u, k)
        self.rho = full @ self.rho @ full.conj().T

    def apply_cz(self) -> None:
        if self.n != 2:
            raise QsimError("CZ needs a two-qubit register")
        d = np.array([1, 1, 1, -1], dtype=complex)
        self.rho = self.rho * np.outer(d, d)

    def p1(self, k: int = 0) -> float:
        proj = self._lift(np.diag([0, 1]).astype(complex), k)
        return float(np.trace(proj @ self.rho).real)

    def dephase(self, k: int = 0) -> None:
        p0 = self._lift(np.diag([1, 0]).astype(complex), k)
        p1 = self._lift(np.diag([0, 1]).astype(complex), k)
        self.rho = p0 @ self.rho @ p0 + p1 @ self.rho @ p1

    def relax(self, k: int, t_ns: float, t1_ns: float) -> None:
        if t_ns <= 0:
            return
        gamma = math.exp(-t_ns / t1_ns)
        k0 = self._lift(np.array([[1, 0], [0, math.sqrt(gamma)]], dtype=complex), k)
        k1 = self._lift(np.array([[0, math.sqrt(1 - gamma)], [0, 0]], dtype=complex), k)
        self.rho = k0 @ self.rho @ k0.conj().T + k1 @ self.rho @ k1.conj().T


def apply_cz(register):
    """diag(1, 1, 1, -1) on a two-qubit register."""
    register.apply_cz()
    return register


def relax(state, t_ns: float, rng=None):
    """Idle for ``t_ns``.

    Pure states follow a quantum trajectory (needs ``rng``): the excitation
    decays with probability ``p1 (1 - exp(-t/T1))``, otherwise the excited
    amplitude shrinks by ``exp(-t/2T1)`` and the state is renormalised.
    Density matrices get the exact amplitude-damping channel.
    """
    if t_ns < 0:
        raise QsimError("negative idle time")
    if isinstance(state, QubitState):
        if t_ns == 0:
            return state
        p1 = state.p1
        if p1 == 0:
            return state
        if rng is None:
            raise ValueError("sampling relaxation needs an rng")
        gamma = math.exp(-t_ns / state.t1_ns)
        if rng.random() < p1 * (1 - gamma):
            state.alpha, state.beta = 1.0 + 0j, 0j
        else:
            a = state.alpha
            b = state.beta * math.sqrt(gamma)
            nrm = math.sqrt(abs(a) ** 2 + abs(b) ** 2)
            state.alpha, state.beta = a / nrm, b / nrm
        return state
    if isinstance(state, DensityRegister):
        if state.n != 1:
            raise ValueError("use DensityRegister.relax(k, ...) for two qubits")
        state.relax(0, t_ns, state.t1_ns)
        return state
    raise TypeError(f"cannot relax {type(state).__name__}")


def measure(state, rng=None, levels=(0.0, 1.0), qubit: int = 0):
    """Measure in the computational basis.

    Returns ``(result, state, mu)``.  Pure states are sampled and projected
    (``result`` is the outcome bit).  Density matrices return ``result = p1``
    and are dephased, which is the shot average of projection.  ``mu`` is the
    readout level handed to the discrimination path.
    """
    mu0, mu1 = levels
    if isinstance(state, QubitState):
        if rng is None:
            raise ValueError("sampling measurement needs an rng")
        outcome = 1 if rng.random() < state.p1 else 0
        state.alpha, state.beta = (0j, 1.0 + 0j) if outcome else (1.0 + 0j, 0j)
        return outcome, state, (mu1 if outcome else mu0)
    if isinstance(state, TwoQubitRegister):
        if rng is None:
            raise ValueError("sampling measurement needs an rng")
        outcome = 1 if rng.random() < state.p1(qubit) else 0
        state.project(qubit, outcome)
        return outcome, state, (mu1 if outcome else mu0)
    if isinstance(state, DensityRegister):
        p1 = min(max(state.p1(qubit), 0.0), 1.0)
        state.dephase(qubit)
        return p1, state, p1 * mu1 + (1 - p1) * mu0
    raise TypeError(f"cannot measure {type(state).__name__}")


def fidelity(a, b) -> float:
    """|<a|b>| for pure state vectors (global phase ignored)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return float(abs(np.vdot(a, b)))


# ---------------------------------------------------------------------------
# Backend used by the machine


class SubstreamRNG:
    """Seeded generator split into substreams, one per block of measurements.

    Block ``b`` draws from ``numpy.random.default_rng([seed, b])`` so blocks
    (AllXY rounds, when the block size is K) are reproducible independently.
    """

    def __init__(self, seed: int, block_size: int = 1024, block_offset: int = 0):
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        self.seed = seed
        self.block_size = block_size
        self.block_offset = block_offset
        self._block = None
        self._rng = None

    def for_index(self, index: int) -> np.random.Generator:
        block = index // self.block_size + self.block_offset
        if block != self._block:
            self._block = block
            self._rng = np.random.default_rng([self.seed, block])
        return self._rng


class QuantumBackend:
    """Holds the state of every qubit touched by a program.

    Qubits start as independent single-qubit states and are merged into a
    two-qubit register on their first CZ.
    """

    def __init__(self, mode: str = "sample", t1_ns: float = DEFAULT_T1_NS, carrier: Carrier | None = None,
                 rng: SubstreamRNG | None = None, t_ref_ns: float = 0.0, allow_overlap: bool = False):
        if mode not in ("sample", "expectation"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.t1_ns = t1_ns
        self.carrier = carrier or Carrier(F_SSB_HZ)
        self.rng = rng or SubstreamRNG(0)
        self.t_ref_ns = t_ref_ns
        # overlapping events are applied back to back in start order (fault injection)
        self.allow_overlap = allow_overlap
        self.measurements = 0
        self._cluster: dict = {}  # qubit -> (state, qubit tuple)
        self._t_last: dict = {}

    def _new_single(self):
        if self.mode == "sample":
            return QubitState(t1_ns=self.t1_ns, t_ref_ns=self.t_ref_ns)
        return DensityRegister(1, t1_ns=self.t1_ns)

    def _get(self, q: int):
        entry = self._cluster.get(q)
        if entry is None:
            st = self._new_single()
            entry = (st, (q,))
            self._cluster[q] = entry
            self._t_last[q] = 0.0
        return entry

    def _rng(self):
        return self.rng.for_index(self.measurements)

    def _idle(self, q: int, t_ns: float) -> None:
        last = self._t_last[q]
        if t_ns < last - 1e-9:
            if self.allow_overlap:
                return
            raise QsimError(f"event on q{q} at {t_ns} ns precedes the end of its previous event ({last} ns)")
        idle = t_ns - last
        if idle <= 0:
            return
        st, qubits = self._cluster[q]
        if isinstance(st, QubitState):
            relax(st, idle, self._rng())
        elif isinstance(st, TwoQubitRegister):
            st.relax(qubits.index(q), idle, self.t1_ns, self._rng())
        else:
            st.relax(qubits.index(q), idle, self.t1_ns)

    def apply_pulse(self, event) -> None:
        self.apply_gate(event.gate, event.qubits, event.start_cycle, event.shift_ns, event.start_ns,
                        event.duration_ns)

    def apply_gate(self, gate: Gate, qubits: tuple, start_cycle: int, shift_ns: float, start: float,
                   duration_ns: float) -> None:
        """Play a pulse starting at ``start`` ns (cycle ``start_cycle`` plus ``shift_ns``)."""
        if gate.kind == "cz":
            if len(qubits) != 2:
                raise QsimError("CZ pulse needs exactly two qubits")
            qa, qb = qubits
            self._get(qa)
            self._get(qb)
            self._idle(qa, start)
            self._idle(qb, start)
            reg, _ = self._merge(qa, qb)
            reg.apply_cz()
            self._t_last[qa] = self._t_last[qb] = start + duration_ns
            return
        kind = gate.kind
        if kind == "rotation":
            axis = gate.axis + 2 * math.pi * self.carrier.turns(start_cycle, shift_ns, self.t_ref_ns)
        elif kind != "identity":
            raise QsimError(f"{kind} pulse cannot be applied as a single-qubit gate")
        t_last = self._t_last
        end = start + duration_ns
        for q in qubits:
            entry = self._cluster.get(q)
            st, members = entry if entry is not None else self._get(q)
            if start != t_last[q]:
                self._idle(q, start)
            if kind == "rotation":
                if type(st) is QubitState:
                    st._rotate(axis, gate.angle)
                    st.t_last_ns = end
                else:
                    st.apply_1q(rotation_matrix(axis, gate.angle), members.index(q))
            t_last[q] = end

    def _merge(self, qa: int, qb: int):
        sa, ta = self._cluster[qa]
        sb, tb = self._cluster[qb]
        if ta == tb:
            if ta != (qa, qb) and ta != (qb, qa):
                raise QsimError("inconsistent register layout")
            return sa, ta
        if len(ta) + len(tb) > 2:
            raise QsimError("registers beyond two qubits are not supported")
        if self.mode == "sample":
            reg = TwoQubitRegister.from_qubits(sa, sb)
        else:
            reg = sa.merge(sb)
        qubits = (qa, qb)
        self._cluster[qa] = self._cluster[qb] = (reg, qubits)
        return reg, qubits

    def measure(self, q: int, t_ns: float, levels=(0.0, 1.0)):
        """Measure qubit ``q`` at ``t_ns``; returns ``(outcome_or_p1, mu)``."""
        st, qubits = self._get(q)
        self._idle(q, t_ns)
        rng = self._rng() if self.mode == "sample" else None
        result, _, mu = measure(st, rng, levels, qubits.index(q))
        self._t_last[q] = t_ns
        self.measurements += 1
        return result, mu

    def state_vector(self, qubits: tuple) -> np.ndarray:
        """Pure joint state of ``qubits`` (sampling mode only)."""
        if self.mode != "sample":
            raise QsimError("state vectors are only kept in sampling mode")
        if len(qubits) == 1:
            st, _ = self._get(qubits[0])
            if isinstance(st, QubitState):
                return st.vector()
            raise QsimError(f"q{qubits[0]} is entangled in a register")
        qa, qb = qubits
        sa, ta = self._get(qa)
        sb, tb = self._get(qb)
        if ta == tb and len(ta) == 2:
            psi = sa.psi
            return psi if ta == (qa, qb) else psi.reshape(2, 2).T.reshape(4)
        return np.kron(sa.vector(), sb.vector())

    def populations(self) -> dict:
        out = {}
        for q, (st, qubits) in sorted(self._cluster.items()):
            if isinstance(st, QubitState):
                out[q] = st.p1
            else:
                out[q] = st.p1(qubits.index(q))
        return out
