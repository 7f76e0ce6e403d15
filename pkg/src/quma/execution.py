"""Execution controller: runs auxiliary classical instructions and streams
quantum instructions onward in program order.

Classical instructions take no deterministic-domain time.  A read of a
register with an outstanding MD writeback raises :class:`Stall` and leaves the
state untouched; the caller retries once the result has been delivered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .isa import MD, NUM_REGISTERS, ClassicalInstr, Imm, Opcode, Program, Reg, Wait

__all__ = [
    "DEFAULT_MEMORY_WORDS",
    "DEFAULT_STEP_BUDGET",
    "ExecutionFault",
    "BudgetExhausted",
    "Stall",
    "RegisterFile",
    "DataMemory",
    "ExecState",
    "step",
    "run_to_completion",
]

DEFAULT_MEMORY_WORDS = 65536
DEFAULT_STEP_BUDGET = 10**9


class ExecutionFault(RuntimeError):
    def __init__(self, message: str, pc: int | None = None):
        self.pc = pc
        super().__init__(f"{message} (pc={pc})" if pc is not None else message)


class BudgetExhausted(ExecutionFault):
    """Step budget ran out; usually an infinite loop."""


class Stall(Exception):
    """Instruction issue blocked on a pending register."""

    def __init__(self, register: int):
        self.register = register
        super().__init__(f"r{register} pending")


def wrap32(value: int) -> int:
    value &= 0xFFFFFFFF
    return value - 0x100000000 if value & 0x80000000 else value


@dataclass
class RegisterFile:
    values: list = field(default_factory=lambda: [0] * NUM_REGISTERS)
    pending: list = field(default_factory=lambda: [False] * NUM_REGISTERS)

    def read(self, index: int) -> int:
        if self.pending[index]:
            raise Stall(index)
        return self.values[index]

    def write(self, index: int, value: int) -> None:
        self.values[index] = wrap32(value)

    def mark_pending(self, index: int) -> None:
        self.pending[index] = True

    def write_back(self, index: int, value: int) -> None:
        """Deliver an MD result and clear the scoreboard bit."""
        self.values[index] = wrap32(value)
        self.pending[index] = False

    def any_pending(self) -> bool:
        return any(self.pending)


@dataclass
class DataMemory:
    size: int = DEFAULT_MEMORY_WORDS
    words: list = field(default=None)

    def __post_init__(self):
        if self.words is None:
            self.words = [0] * self.size
        elif len(self.words) != self.size:
            raise ValueError("memory image size mismatch")

    def _check(self, addr: int, pc: int | None) -> None:
        if not 0 <= addr < self.size:
            raise ExecutionFault(f"memory address {addr} out of bounds [0, {self.size})", pc)

    def load(self, addr: int, pc: int | None = None) -> int:
        self._check(addr, pc)
        return self.words[addr]

    def store(self, addr: int, value: int, pc: int | None = None) -> None:
        self._check(addr, pc)
        self.words[addr] = wrap32(value)


@dataclass
class ExecState:
    pc: int = 0
    regs: RegisterFile = field(default_factory=RegisterFile)
    mem: DataMemory = field(default_factory=DataMemory)
    halted: bool = False
    steps: int = 0

    def dump(self) -> dict:
        nonzero = {i: w for i, w in enumerate(self.mem.words) if w}
        return {
            "pc": self.pc,
            "halted": self.halted,
            "steps": self.steps,
            "registers": {f"r{i}": v for i, v in enumerate(self.regs.values)},
            "memory": {str(k): v for k, v in nonzero.items()},
        }


def _value(regs: RegisterFile, operand) -> int:
    if isinstance(operand, Imm):
        return operand.value
    return regs.read(operand.index)


def step(state: ExecState, program: Program):
    """Execute the instruction at ``state.pc``.

    Returns the emitted quantum instruction (QuMIS or QIS) or ``None`` for a
    classical one.  ``QNopReg rX`` emits ``Wait <rX>``.
    """
    if state.halted:
        raise ExecutionFault("step on halted state", state.pc)
    instrs = program.instructions
    pc = state.pc
    instr = instrs[pc]
    regs = state.regs
    emitted = None
    next_pc = pc + 1

    if isinstance(instr, ClassicalInstr):
        op = instr.opcode
        a = instr.operands
        if op is Opcode.MOV:
            value = _value(regs, a[1])
            regs.write(a[0].index, value)
        elif op is Opcode.ADD:
            value = regs.read(a[1].index) + regs.read(a[2].index)
            regs.write(a[0].index, value)
        elif op is Opcode.ADDI:
            regs.write(a[0].index, regs.read(a[1].index) + a[2].value)
        elif op is Opcode.SUB:
            value = regs.read(a[1].index) - regs.read(a[2].index)
            regs.write(a[0].index, value)
        elif op is Opcode.LOAD:
            addr = regs.read(a[1].base.index) + a[1].offset
            regs.write(a[0].index, state.mem.load(addr, pc))
        elif op is Opcode.STORE:
            value = regs.read(a[0].index)
            addr = regs.read(a[1].base.index) + a[1].offset
            state.mem.store(addr, value, pc)
        elif op is Opcode.BNE:
            if regs.read(a[0].index) != regs.read(a[1].index):
                next_pc = program.labels[a[2].name]
        elif op is Opcode.BEQ:
            if regs.read(a[0].index) == regs.read(a[1].index):
                next_pc = program.labels[a[2].name]
        elif op is Opcode.JUMP:
            next_pc = program.labels[a[0].name]
        elif op is Opcode.QNOPREG:
            interval = regs.read(a[0].index)
            if interval < 1:
                raise ExecutionFault(f"QNopReg r{a[0].index} holds non-positive interval {interval}", pc)
            emitted = Wait(interval)
        else:  # pragma: no cover
            raise ExecutionFault(f"unhandled opcode {op}", pc)
    else:
        emitted = instr
        # QIS instructions get their MD destinations marked after expansion
        if isinstance(instr, MD) and isinstance(instr.rd, Reg):
            regs.mark_pending(instr.rd.index)

    state.pc = next_pc
    state.steps += 1
    if next_pc >= len(instrs):
        state.halted = True
    return emitted


def run_to_completion(program: Program, budget: int = DEFAULT_STEP_BUDGET, state: ExecState | None = None):
    """Run without a deterministic timing domain attached.

    Returns ``(emitted, state)``.  A stall on a pending register cannot be
    resolved here and is reported as a fault.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    state = state if state is not None else ExecState()
    emitted = []
    while not state.halted:
        if state.steps >= budget:
            raise BudgetExhausted(f"step budget {budget} exhausted", state.pc)
        try:
            out = step(state, program)
        except Stall as exc:
            raise ExecutionFault(f"read of r{exc.register} pending MD writeback with no timing domain", state.pc) from None
        if out is not None:
            emitted.append(out)
    return emitted, state
