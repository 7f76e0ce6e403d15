"""Instruction set: auxiliary classical instructions, QuMIS microinstructions,
QIS quantum instructions, and the textual assembler/disassembler.

Assembly format (``.qumis``)::

    mov  r15, 40000      # comment
    Outer_Loop:
      QNopReg r15
      Pulse   {q2}, X180
      Wait    4
      MPG     {q2}, 300
      MD      {q2}
      addi    r1, r1, 1
      bne     r1, r2, Outer_Loop
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Union

__all__ = [
    "NUM_REGISTERS",
    "AsmError",
    "Opcode",
    "Reg",
    "Imm",
    "Mem",
    "LabelRef",
    "Formal",
    "ClassicalInstr",
    "Wait",
    "Pulse",
    "MPG",
    "MD",
    "QuantumOp",
    "Program",
    "QUMIS_TYPES",
    "DEFAULT_QUANTUM_MNEMONICS",
    "parse_program",
    "parse_line",
    "disassemble",
    "format_instr",
    "qubit_set",
]

NUM_REGISTERS = 16
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

# QIS quantum mnemonics that are expanded by the microcode unit.  Programs may
# use any other name found in the loaded control store.
DEFAULT_QUANTUM_MNEMONICS = frozenset({"Apply", "Measure", "CNOT"})


class AsmError(ValueError):
    """Assembly diagnostic carrying a 1-based source line number."""

    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        super().__init__(f"{message}, line {line}" if line is not None else message)


# ---------------------------------------------------------------------------
# Operands


@dataclass(frozen=True)
class Reg:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < NUM_REGISTERS:
            raise ValueError(f"register r{self.index} out of range r0-r{NUM_REGISTERS - 1}")

    def __str__(self) -> str:
        return f"r{self.index}"


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Mem:
    """Base register plus immediate word offset, written ``r3[0]``."""

    base: Reg
    offset: int

    def __str__(self) -> str:
        return f"{self.base}[{self.offset}]"


@dataclass(frozen=True)
class LabelRef:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Formal:
    """Unbound microprogram parameter (only legal inside a ``def`` body)."""

    name: str

    def __str__(self) -> str:
        return self.name


# ---------------------------------------------------------------------------
# Instructions


class Opcode(Enum):
    MOV = "mov"
    ADD = "add"
    ADDI = "addi"
    SUB = "sub"
    LOAD = "load"
    STORE = "store"
    BNE = "bne"
    BEQ = "beq"
    JUMP = "jump"
    QNOPREG = "QNopReg"


# operand kinds per opcode: R register, I immediate, M memory, L label,
# RI register-or-immediate
_SIGNATURES: dict[Opcode, tuple[str, ...]] = {
    Opcode.MOV: ("R", "RI"),
    Opcode.ADD: ("R", "R", "R"),
    Opcode.ADDI: ("R", "R", "I"),
    Opcode.SUB: ("R", "R", "R"),
    Opcode.LOAD: ("R", "M"),
    Opcode.STORE: ("R", "M"),
    Opcode.BNE: ("R", "R", "L"),
    Opcode.BEQ: ("R", "R", "L"),
    Opcode.JUMP: ("L",),
    Opcode.QNOPREG: ("R",),
}

# Listings mix ``add`` and ``Add``, with ``Load``/``Store`` capitalised.
_CLASSICAL_MNEMONICS: dict[str, Opcode] = {}
for _op in Opcode:
    if _op is Opcode.QNOPREG:
        _CLASSICAL_MNEMONICS["QNopReg"] = _op
    else:
        _CLASSICAL_MNEMONICS[_op.value] = _op
        _CLASSICAL_MNEMONICS[_op.value.capitalize()] = _op


@dataclass(frozen=True)
class ClassicalInstr:
    opcode: Opcode
    operands: tuple

    def __post_init__(self):
        sig = _SIGNATURES[self.opcode]
        if len(sig) != len(self.operands):
            raise ValueError(f"{self.opcode.value} takes {len(sig)} operands, got {len(self.operands)}")
        for kind, operand in zip(sig, self.operands):
            ok = {
                "R": isinstance(operand, Reg),
                "I": isinstance(operand, Imm),
                "RI": isinstance(operand, (Reg, Imm)),
                "M": isinstance(operand, Mem),
                "L": isinstance(operand, LabelRef),
            }[kind]
            if not ok:
                raise ValueError(f"bad operand {operand!s} for {self.opcode.value}")


def qubit_set(qubits: Iterable) -> tuple:
    """Canonical (sorted, deduplicated) qubit-address set."""
    items = set(qubits)
    if not items:
        raise ValueError("empty qubit set")
    ints = sorted(q for q in items if isinstance(q, int))
    formals = sorted((q for q in items if isinstance(q, Formal)), key=lambda f: f.name)
    return tuple(ints) + tuple(formals)


@dataclass(frozen=True)
class Wait:
    interval: Union[int, Formal]

    def __post_init__(self):
        if isinstance(self.interval, int) and self.interval < 1:
            raise ValueError(f"Wait interval must be >= 1, got {self.interval}")


@dataclass(frozen=True)
class Pulse:
    """Horizontal microinstruction: ``((qubits, uop), ...)``."""

    pairs: tuple

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("Pulse needs at least one (qubits, uop) pair")
        seen: set = set()
        for qubits, _ in self.pairs:
            overlap = seen.intersection(qubits)
            if overlap:
                raise ValueError(f"qubit sets in one Pulse must be disjoint (repeated {sorted(map(str, overlap))})")
            seen.update(qubits)


@dataclass(frozen=True)
class MPG:
    qubits: tuple
    duration: Union[int, Formal]

    def __post_init__(self):
        if isinstance(self.duration, int) and self.duration < 1:
            raise ValueError(f"MPG duration must be >= 1, got {self.duration}")


@dataclass(frozen=True)
class MD:
    qubits: tuple
    rd: Union[Reg, Formal, None] = None


@dataclass(frozen=True)
class QuantumOp:
    """QIS-level quantum instruction, expanded by the Q control store."""

    mnemonic: str
    operands: tuple


QUMIS_TYPES = (Wait, Pulse, MPG, MD)
Instruction = Union[ClassicalInstr, Wait, Pulse, MPG, MD, QuantumOp]


@dataclass(frozen=True)
class Program:
    instructions: tuple
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.instructions:
            raise ValueError("program is empty")
        for name, idx in self.labels.items():
            if not 0 <= idx <= len(self.instructions):
                raise ValueError(f"label {name} points outside program")
        for instr in self.instructions:
            if isinstance(instr, ClassicalInstr):
                for operand in instr.operands:
                    if isinstance(operand, LabelRef) and operand.name not in self.labels:
                        raise ValueError(f"undefined label {operand.name}")

    def __len__(self) -> int:
        return len(self.instructions)


# ---------------------------------------------------------------------------
# Parsing

_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:(.*)$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_REG_RE = re.compile(r"^r(\d+)$")
_QUBIT_RE = re.compile(r"^q(\d+)$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_MEM_RE = re.compile(r"^(r\d+)\s*\[\s*([+-]?\d+)\s*\]$")


def _split_operands(text: str) -> list[str]:
    """Split on top-level commas, keeping ``{...}`` groups intact."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced '}'")
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise ValueError("unbalanced '{'")
    tail = "".join(cur).strip()
    if tail or parts:
        parts.append(tail)
    if any(p == "" for p in parts):
        raise ValueError("empty operand")
    return parts


def _parse_int(tok: str) -> int:
    if not _INT_RE.match(tok):
        raise ValueError(f"expected decimal integer, got {tok!r}")
    value = int(tok)
    if not INT32_MIN <= value <= INT32_MAX:
        raise ValueError(f"immediate {value} does not fit in 32 bits")
    return value


def _parse_reg(tok: str, params: frozenset) -> Union[Reg, Formal]:
    if tok in params:
        return Formal(tok)
    m = _REG_RE.match(tok)
    if not m:
        raise ValueError(f"expected register, got {tok!r}")
    return Reg(int(m.group(1)))


def _parse_qubits(tok: str, params: frozenset) -> tuple:
    if not (tok.startswith("{") and tok.endswith("}")):
        raise ValueError(f"malformed qubit set {tok!r}")
    inner = tok[1:-1].strip()
    if not inner:
        raise ValueError("malformed qubit set: empty")
    qubits = []
    for item in inner.split(","):
        item = item.strip()
        if item in params:
            qubits.append(Formal(item))
            continue
        m = _QUBIT_RE.match(item)
        if not m:
            raise ValueError(f"malformed qubit set {tok!r}")
        qubits.append(int(m.group(1)))
    return qubit_set(qubits)


def _parse_quantum_operand(tok: str, params: frozenset):
    if tok in params:
        return Formal(tok)
    if m := _QUBIT_RE.match(tok):
        return int(m.group(1))
    if m := _REG_RE.match(tok):
        return Reg(int(m.group(1)))
    if _INT_RE.match(tok):
        return Imm(_parse_int(tok))
    if _IDENT_RE.match(tok):
        return tok
    raise ValueError(f"bad operand {tok!r}")


def _parse_classical(opcode: Opcode, ops: list[str]) -> ClassicalInstr:
    sig = _SIGNATURES[opcode]
    if len(ops) != len(sig):
        raise ValueError(f"{opcode.value} takes {len(sig)} operands, got {len(ops)}")
    operands = []
    for kind, tok in zip(sig, ops):
        if kind == "R":
            operands.append(_parse_reg(tok, frozenset()))
        elif kind == "I":
            operands.append(Imm(_parse_int(tok)))
        elif kind == "RI":
            operands.append(Reg(int(tok[1:])) if _REG_RE.match(tok) else Imm(_parse_int(tok)))
        elif kind == "M":
            m = _MEM_RE.match(tok)
            if not m:
                raise ValueError(f"expected memory operand like r3[0], got {tok!r}")
            operands.append(Mem(Reg(int(m.group(1)[1:])), int(m.group(2))))
        else:
            if not _IDENT_RE.match(tok):
                raise ValueError(f"bad label {tok!r}")
            operands.append(LabelRef(tok))
    return ClassicalInstr(opcode, tuple(operands))


def _parse_uop(tok: str, params: frozenset) -> Union[str, Formal]:
    if tok in params:
        return Formal(tok)
    if not _IDENT_RE.match(tok):
        raise ValueError(f"bad micro-operation name {tok!r}")
    return tok


def parse_line(text: str, *, params: frozenset = frozenset(), quantum_mnemonics=DEFAULT_QUANTUM_MNEMONICS):
    """Parse one instruction (no label, no comment). Raises ValueError."""
    fields = text.strip().split(None, 1)
    mnemonic = fields[0]
    rest = fields[1].strip() if len(fields) > 1 else ""
    ops = _split_operands(rest) if rest else []

    if mnemonic in _CLASSICAL_MNEMONICS:
        return _parse_classical(_CLASSICAL_MNEMONICS[mnemonic], ops)
    if mnemonic == "Wait":
        if len(ops) != 1:
            raise ValueError("Wait takes one operand")
        if ops[0] in params:
            return Wait(Formal(ops[0]))
        return Wait(_parse_int(ops[0]))
    if mnemonic == "Pulse":
        if not ops or len(ops) % 2:
            raise ValueError("Pulse takes (qubits, uop) pairs")
        pairs = tuple(
            (_parse_qubits(ops[i], params), _parse_uop(ops[i + 1], params)) for i in range(0, len(ops), 2)
        )
        return Pulse(pairs)
    if mnemonic == "MPG":
        if len(ops) != 2:
            raise ValueError("MPG takes qubits and duration")
        dur = Formal(ops[1]) if ops[1] in params else _parse_int(ops[1])
        return MPG(_parse_qubits(ops[0], params), dur)
    if mnemonic == "MD":
        if len(ops) not in (1, 2):
            raise ValueError("MD takes qubits and optional destination register")
        rd = _parse_reg(ops[1], params) if len(ops) == 2 else None
        return MD(_parse_qubits(ops[0], params), rd)
    if mnemonic in quantum_mnemonics:
        return QuantumOp(mnemonic, tuple(_parse_quantum_operand(t, params) for t in ops))
    raise ValueError(f"unknown mnemonic {mnemonic!r}")


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_program(source: str, *, quantum_mnemonics=DEFAULT_QUANTUM_MNEMONICS) -> Program:
    """Assemble ``.qumis`` text into a :class:`Program`.

    Raises :class:`AsmError` carrying the offending line number.
    """
    instructions: list = []
    labels: dict[str, int] = {}
    label_lines: dict[str, int] = {}
    branch_lines: list[tuple[str, int]] = []

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = _strip_comment(raw)
        while line:
            m = _LABEL_RE.match(line)
            if not m or (m.group(2)[:1] not in ("", " ", "\t")):
                break
            name = m.group(1)
            if name in labels:
                raise AsmError(f"duplicate label {name!r}", lineno)
            labels[name] = len(instructions)
            label_lines[name] = lineno
            line = m.group(2).strip()
        if not line:
            continue
        try:
            instr = parse_line(line, quantum_mnemonics=quantum_mnemonics)
        except ValueError as exc:
            raise AsmError(str(exc), lineno) from None
        if isinstance(instr, ClassicalInstr):
            for operand in instr.operands:
                if isinstance(operand, LabelRef):
                    branch_lines.append((operand.name, lineno))
        instructions.append(instr)

    for name, lineno in branch_lines:
        if name not in labels:
            raise AsmError(f"undefined label {name!r}", lineno)
    if not instructions:
        raise AsmError("program is empty (no instructions)")
    return Program(tuple(instructions), labels)


# ---------------------------------------------------------------------------
# Disassembly


def _fmt_qubits(qubits: tuple) -> str:
    return "{" + ", ".join(f"q{q}" if isinstance(q, int) else str(q) for q in qubits) + "}"


def _fmt_quantum_operand(op) -> str:
    if isinstance(op, bool):
        raise TypeError(op)
    if isinstance(op, int):
        return f"q{op}"
    return str(op)


def format_instr(instr) -> str:
    """Canonical single-line text of one instruction."""
    if isinstance(instr, ClassicalInstr):
        name = instr.opcode.value
        return f"{name} " + ", ".join(str(o) for o in instr.operands)
    if isinstance(instr, Wait):
        return f"Wait {instr.interval}"
    if isinstance(instr, Pulse):
        return "Pulse " + ", ".join(f"{_fmt_qubits(q)}, {u}" for q, u in instr.pairs)
    if isinstance(instr, MPG):
        return f"MPG {_fmt_qubits(instr.qubits)}, {instr.duration}"
    if isinstance(instr, MD):
        if instr.rd is None:
            return f"MD {_fmt_qubits(instr.qubits)}"
        return f"MD {_fmt_qubits(instr.qubits)}, {instr.rd}"
    if isinstance(instr, QuantumOp):
        if not instr.operands:
            return instr.mnemonic
        return f"{instr.mnemonic} " + ", ".join(_fmt_quantum_operand(o) for o in instr.operands)
    raise TypeError(f"not an instruction: {instr!r}")


def disassemble(program: Program) -> str:
    by_index: dict[int, list[str]] = {}
    for name, idx in program.labels.items():
        by_index.setdefault(idx, []).append(name)
    out = []
    for idx, instr in enumerate(program.instructions):
        for name in by_index.get(idx, ()):
            out.append(f"{name}:")
        out.append(format_instr(instr))
    for name in by_index.get(len(program.instructions), ()):
        out.append(f"{name}:")
    return "\n".join(out) + "\n"
