import pytest

from quma.execution import (
    BudgetExhausted,
    DataMemory,
    ExecState,
    ExecutionFault,
    RegisterFile,
    Stall,
    run_to_completion,
    step,
)
from quma.isa import MD, Pulse, Reg, Wait, parse_program


def run(src, **kw):
    return run_to_completion(parse_program(src), **kw)


def test_qnopreg_emits_wait_from_register():
    emitted, state = run("mov r15, 40000\nQNopReg r15")
    assert emitted == [Wait(40000)]
    assert state.regs.values[15] == 40000 and state.halted


def test_quantum_instructions_stream_in_order():
    emitted, _ = run("Pulse {q0}, X180\nWait 4\nMPG {q0}, 300\nMD {q0}")
    assert [type(e) for e in emitted] == [Pulse, Wait, type(emitted[2]), MD]


def test_loop_counts():
    src = "mov r1, 0\nmov r2, 5\nL:\nWait 4\naddi r1, r1, 1\nbne r1, r2, L"
    emitted, state = run(src)
    assert len(emitted) == 5 and state.regs.values[1] == 5
    # 2 movs + 5 x (Wait, addi, bne)
    assert state.steps == 17


def test_arithmetic_wraps_to_32_bits():
    _, state = run("mov r1, 2147483647\naddi r1, r1, 1\nmov r2, 0\nsub r3, r2, r1")
    assert state.regs.values[1] == -(2**31)
    assert state.regs.values[3] == -(2**31)


def test_accumulate_loop():
    src = "mov r3, 16\nmov r7, 1\nLoad r9, r3[0]\nAdd r9, r9, r7\nStore r9, r3[0]\nLoad r9, r3[0]\nAdd r9, r9, r7\nStore r9, r3[0]"
    _, state = run(src)
    assert state.mem.words[16] == 2


def test_branches():
    _, state = run("mov r1, 3\nbeq r1, r1, Skip\nmov r2, 9\nSkip:\njump End\nmov r2, 8\nEnd:\nmov r4, 1")
    assert state.regs.values[2] == 0 and state.regs.values[4] == 1


def test_memory_bounds_fault():
    with pytest.raises(ExecutionFault, match="out of bounds"):
        run("mov r1, 70000\nLoad r2, r1[0]")


def test_budget_exhausted():
    with pytest.raises(BudgetExhausted):
        run("L:\njump L", budget=10)


def test_qnopreg_non_positive():
    with pytest.raises(ExecutionFault, match="non-positive"):
        run("QNopReg r15")


def test_md_marks_destination_and_reader_stalls():
    prog = parse_program("MD {q0}, r7\nmov r1, r7")
    state = ExecState()
    assert step(state, prog) == MD((0,), Reg(7))
    assert state.regs.pending[7]
    with pytest.raises(Stall) as exc:
        step(state, prog)
    assert exc.value.register == 7 and state.pc == 1  # state untouched
    state.regs.write_back(7, 1)
    step(state, prog)
    assert state.regs.values[1] == 1


def test_stall_without_timing_domain_is_a_fault():
    with pytest.raises(ExecutionFault, match="pending MD"):
        run("MD {q0}, r7\nmov r1, r7")


def test_dump():
    _, state = run("mov r3, 16\nmov r9, 5\nStore r9, r3[0]")
    d = state.dump()
    assert d["registers"]["r9"] == 5 and d["memory"] == {"16": 5} and d["halted"]


def test_register_file_and_memory_defaults():
    assert RegisterFile().values == [0] * 16
    assert DataMemory(8).words == [0] * 8
