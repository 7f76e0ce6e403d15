"""Physical microcode unit and quantum microinstruction buffer.

QIS quantum instructions are expanded into QuMIS through microprograms held
in the Q control store.  The QMB then turns the QuMIS stream into timing-queue
entries and labelled events for the per-kind event queues.

Microprogram files (``.qmp``) reuse the assembly grammar under ``def`` headers::

    def CNOT(qt, qc):
        Pulse {qt}, Ym90
        Wait 4
        ...
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple

from .isa import (
    MD,
    MPG,
    QUMIS_TYPES,
    AsmError,
    ClassicalInstr,
    Formal,
    Imm,
    Pulse,
    QuantumOp,
    Reg,
    Wait,
    parse_line,
    qubit_set,
)

__all__ = [
    "MAX_LABEL",
    "MicrocodeError",
    "Microprogram",
    "QControlStore",
    "parse_control_store",
    "load_control_store",
    "default_control_store",
    "expand",
    "TimePoint",
    "PulseEntry",
    "MPGEntry",
    "MDEntry",
    "LabelAssigner",
    "assign_labels",
]

MAX_LABEL = 2**32 - 1


class MicrocodeError(ValueError):
    pass


@dataclass(frozen=True)
class Microprogram:
    name: str
    params: tuple
    body: tuple

    def __post_init__(self):
        if not self.body:
            raise MicrocodeError(f"microprogram {self.name} has an empty body")
        if len(set(self.params)) != len(self.params):
            raise MicrocodeError(f"microprogram {self.name} repeats a parameter")
        used = set()
        for instr in self.body:
            if not isinstance(instr, QUMIS_TYPES):
                raise MicrocodeError(f"microprogram {self.name}: only QuMIS instructions allowed in a body")
            for name in _formals(instr):
                if name not in self.params:
                    raise MicrocodeError(f"microprogram {self.name}: unknown parameter {name}")
                used.add(name)
        # Two pulses on one qubit need a Wait between them.
        busy: set = set()
        for instr in self.body:
            if isinstance(instr, Wait):
                busy = set()
            elif isinstance(instr, Pulse):
                for qubits, _ in instr.pairs:
                    clash = busy.intersection(qubits)
                    if clash:
                        raise MicrocodeError(
                            f"microprogram {self.name}: pulses collide on {sorted(map(str, clash))} without a Wait"
                        )
                    busy.update(qubits)


def _formals(instr) -> list[str]:
    names = []
    if isinstance(instr, Wait) and isinstance(instr.interval, Formal):
        names.append(instr.interval.name)
    elif isinstance(instr, Pulse):
        for qubits, uop in instr.pairs:
            names += [q.name for q in qubits if isinstance(q, Formal)]
            if isinstance(uop, Formal):
                names.append(uop.name)
    elif isinstance(instr, MPG):
        names += [q.name for q in instr.qubits if isinstance(q, Formal)]
        if isinstance(instr.duration, Formal):
            names.append(instr.duration.name)
    elif isinstance(instr, MD):
        names += [q.name for q in instr.qubits if isinstance(q, Formal)]
        if isinstance(instr.rd, Formal):
            names.append(instr.rd.name)
    return names


@dataclass
class QControlStore:
    programs: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def mnemonics(self) -> frozenset:
        return frozenset(self.programs)

    def __contains__(self, name: str) -> bool:
        return name in self.programs

    def __getitem__(self, name: str) -> Microprogram:
        return self.programs[name]

    def add(self, program: Microprogram) -> None:
        if program.name in self.programs:
            raise MicrocodeError(f"duplicate microprogram {program.name}")
        self.programs[program.name] = program
        self._cache.clear()


_DEF_RE = re.compile(r"^def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(([^)]*)\)\s*:\s*$")


def parse_control_store(text: str) -> QControlStore:
    store = QControlStore()
    current: tuple | None = None
    body: list = []

    def close():
        if current is not None:
            name, params, lineno = current
            try:
                store.add(Microprogram(name, params, tuple(body)))
            except MicrocodeError as exc:
                raise AsmError(str(exc), lineno) from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _DEF_RE.match(line)
        if m:
            close()
            params = tuple(p.strip() for p in m.group(2).split(",") if p.strip())
            current = (m.group(1), params, lineno)
            body = []
            continue
        if current is None:
            raise AsmError("instruction outside a def block", lineno)
        try:
            body.append(parse_line(line, params=frozenset(current[1]), quantum_mnemonics=frozenset()))
        except ValueError as exc:
            raise AsmError(str(exc), lineno) from None
    close()
    return store


def load_control_store(path) -> QControlStore:
    return parse_control_store(Path(path).read_text())


def default_control_store() -> QControlStore:
    text = resources.files("quma").joinpath("data/default.qmp").read_text()
    return parse_control_store(text)


def _bind_qubits(qubits: tuple, env: dict, name: str) -> tuple:
    out = []
    for q in qubits:
        if isinstance(q, Formal):
            actual = env[q.name]
            if not isinstance(actual, int) or isinstance(actual, bool):
                raise MicrocodeError(f"{name}: parameter {q.name} must be a qubit, got {actual!r}")
            out.append(actual)
        else:
            out.append(q)
    try:
        return qubit_set(out)
    except ValueError as exc:
        raise MicrocodeError(f"{name}: {exc}") from None


def _bind(instr, env: dict, name: str):
    if isinstance(instr, Wait):
        if isinstance(instr.interval, Formal):
            actual = env[instr.interval.name]
            if not isinstance(actual, Imm):
                raise MicrocodeError(f"{name}: Wait parameter must be an immediate")
            return Wait(actual.value)
        return instr
    if isinstance(instr, Pulse):
        pairs = []
        for qubits, uop in instr.pairs:
            if isinstance(uop, Formal):
                uop = env[uop.name]
                if not isinstance(uop, str):
                    raise MicrocodeError(f"{name}: micro-operation parameter must be a name, got {uop!r}")
            pairs.append((_bind_qubits(qubits, env, name), uop))
        try:
            return Pulse(tuple(pairs))
        except ValueError as exc:
            raise MicrocodeError(f"{name}: {exc}") from None
    if isinstance(instr, MPG):
        dur = instr.duration
        if isinstance(dur, Formal):
            dur = env[dur.name]
            if not isinstance(dur, Imm):
                raise MicrocodeError(f"{name}: MPG duration parameter must be an immediate")
            dur = dur.value
        return MPG(_bind_qubits(instr.qubits, env, name), dur)
    if isinstance(instr, MD):
        rd = instr.rd
        if isinstance(rd, Formal):
            rd = env[rd.name]
            if not isinstance(rd, Reg):
                raise MicrocodeError(f"{name}: MD destination parameter must be a register")
        return MD(_bind_qubits(instr.qubits, env, name), rd)
    raise MicrocodeError(f"{name}: unexpected body instruction {instr!r}")  # pragma: no cover


def expand(instr, store: QControlStore) -> list:
    """Expand one quantum instruction into QuMIS.  Native QuMIS passes through."""
    if isinstance(instr, QUMIS_TYPES):
        return [instr]
    if isinstance(instr, ClassicalInstr):
        raise MicrocodeError(f"classical instruction {instr.opcode.value} reached the microcode unit")
    if not isinstance(instr, QuantumOp):
        raise MicrocodeError(f"not a quantum instruction: {instr!r}")
    cached = store._cache.get(instr)
    if cached is not None:
        return cached
    if instr.mnemonic not in store.programs:
        raise MicrocodeError(f"unknown quantum instruction {instr.mnemonic!r} (not in Q control store)")
    prog = store.programs[instr.mnemonic]
    if len(instr.operands) != len(prog.params):
        raise MicrocodeError(
            f"{instr.mnemonic} expects {len(prog.params)} operands ({', '.join(prog.params)}), got {len(instr.operands)}"
        )
    env = dict(zip(prog.params, instr.operands))
    out = [_bind(b, env, instr.mnemonic) for b in prog.body]
    store._cache[instr] = out
    return out


# ---------------------------------------------------------------------------
# QMB: timing labels and queue entries


class TimePoint(NamedTuple):
    interval: int
    label: int


class PulseEntry(NamedTuple):
    op: str
    label: int
    qubits: tuple


class MPGEntry(NamedTuple):
    label: int
    qubits: tuple
    duration: int


class MDEntry(NamedTuple):
    rd: int | None
    label: int
    qubits: tuple


class LabelAssigner:
    """Single cursor over the QuMIS stream.  Events issued before any Wait
    carry label 0 and fire at T_D start."""

    def __init__(self):
        self.label = 0

    def assign(self, instr) -> list:
        """Return ``[(kind, entry), ...]`` for one QuMIS instruction."""
        cls = type(instr)
        if cls is Wait:
            if self.label >= MAX_LABEL:
                raise MicrocodeError(f"timing label overflow beyond {MAX_LABEL}")
            self.label += 1
            return [("timing", TimePoint(instr.interval, self.label))]
        if cls is Pulse:
            label = self.label
            pairs = instr.pairs
            if len(pairs) == 1:
                qubits, uop = pairs[0]
                return [("pulse", PulseEntry(uop, label, qubits))]
            return [("pulse", PulseEntry(uop, label, qubits)) for qubits, uop in pairs]
        if cls is MPG:
            return [("mpg", MPGEntry(self.label, instr.qubits, instr.duration))]
        if cls is MD:
            rd = instr.rd.index if instr.rd is not None else None
            return [("md", MDEntry(rd, self.label, instr.qubits))]
        raise MicrocodeError(f"QMB accepts QuMIS only, got {instr!r}")


def assign_labels(stream: Iterable) -> dict:
    """Label a whole QuMIS stream; returns queue contents front-first by kind."""
    qmb = LabelAssigner()
    queues: dict = {"timing": [], "pulse": [], "mpg": [], "md": []}
    for instr in stream:
        for kind, entry in qmb.assign(instr):
            queues[kind].append(entry)
    return queues
