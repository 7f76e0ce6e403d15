import io
import json

import pytest

from quma.config import Config
from quma.isa import parse_program
from quma.machine import Machine, MachineFault, TraceWriter, run_program

TWO_ROUNDS = """
mov r15, 40000
QNopReg r15
Pulse {q2}, I
Wait 4
Pulse {q2}, I
Wait 4
MPG {q2}, 300
MD {q2}, r7
QNopReg r15
Pulse {q2}, X180
Wait 4
Pulse {q2}, X180
Wait 4
MPG {q2}, 300
MD {q2}, r7
"""

QUEUES_AT_0 = {
    "timing": [(40000, 1), (4, 2), (4, 3), (40000, 4), (4, 5), (4, 6)],
    "pulse": [("I", 1), ("I", 2), ("X180", 4), ("X180", 5)],
    "mpg": [3, 6],
    "md": [(7, 3), (7, 6)],
}
QUEUES_AT_40000 = {
    "timing": [(4, 2), (4, 3), (40000, 4), (4, 5), (4, 6)],
    "pulse": [("I", 2), ("X180", 4), ("X180", 5)],
    "mpg": [3, 6],
    "md": [(7, 3), (7, 6)],
}
QUEUES_AT_40008 = {
    "timing": [(40000, 4), (4, 5), (4, 6)],
    "pulse": [("X180", 4), ("X180", 5)],
    "mpg": [6],
    "md": [(7, 6)],
}


def view(snap, depth=None):
    cut = (lambda xs: xs[:depth]) if depth else (lambda xs: xs)
    return {
        "timing": cut([tuple(e) for e in snap["timing"]]),
        "pulse": cut([(e.op, e.label) for e in snap["pulse"]]),
        "mpg": cut([e.label for e in snap["mpg"]]),
        "md": cut([(e.rd, e.label) for e in snap["md"]]),
    }


def traced(src, **kw):
    buf = io.StringIO()
    result = Machine(parse_program(src), kw.pop("config", None), trace=TraceWriter(buf), **kw).run()
    return result, [json.loads(line) for line in buf.getvalue().splitlines()], buf.getvalue()


def test_golden_queue_states():
    m = Machine(parse_program(TWO_ROUNDS), snapshot_at=(0, 40000, 40008))
    res = m.run()
    assert view(res.snapshots[0]) == QUEUES_AT_0
    assert view(res.snapshots[40000]) == QUEUES_AT_40000
    assert view(res.snapshots[40008]) == QUEUES_AT_40008
    assert res.ok and res.cycles == 80016 + 316


def test_trace_timing_of_two_rounds():
    _, recs, _ = traced(TWO_ROUNDS)
    triggers = [(t["cycle"], t["codeword"]) for r in recs if r["queue"] == "pulse" for t in r["payload"]["triggers"]]
    assert triggers == [(40000, 0), (40004, 0), (80008, 1), (80012, 1)]
    starts = [t["start_ns"] for r in recs if r["queue"] == "pulse" for t in r["payload"]["triggers"]]
    assert starts == [(c + 16) * 5 for c in (40000, 40004, 80008, 80012)]
    assert [(r["cycle"], r["queue"]) for r in recs if r["queue"] != "pulse"] == [
        (40008, "mpg"), (40008, "md"), (80016, "mpg"), (80016, "md")]
    md = [r for r in recs if r["queue"] == "md"]
    assert [r["payload"]["result"]["M"] for r in md] == [0, 0]  # XX is the identity
    assert md[0]["payload"]["result"]["cycle"] == 40008 + 16 + 300
    assert all(r["ns"] == 5 * r["cycle"] for r in recs)


def test_trace_is_firing_ordered_json_lines():
    _, recs, text = traced(TWO_ROUNDS)
    cycles = [r["cycle"] for r in recs]
    assert cycles == sorted(cycles)
    assert all(set(r) == {"cycle", "ns", "queue", "label", "payload"} for r in recs)
    assert text.endswith("\n") and "_pending" not in text


FEEDBACK = """
mov r15, 400
Pulse {q0}, X180
Wait 4
MPG {q0}, 300
MD {q0}, r7
mov r1, r7
QNopReg r15
MPG {q0}, 300
MD {q0}, r8
"""


@pytest.mark.parametrize("mode", ["sample", "expectation"])
def test_measurement_feedback_stalls_the_reader(mode):
    res = run_program(parse_program(FEEDBACK), mode=mode)
    assert res.state.regs.values[1] == 1 and res.state.regs.values[8] == 1
    assert res.measurements == 2


def test_feedback_with_too_short_wait_underflows():
    src = FEEDBACK.replace("mov r15, 400", "mov r15, 10")
    with pytest.raises(MachineFault, match=r"\[timing\].*underflow"):
        run_program(parse_program(src))


def test_event_issued_after_its_time_point_is_a_fault():
    src = "Wait 4\nMPG {q0}, 300\nMD {q0}, r7\nmov r1, r7\nPulse {q0}, X180"
    with pytest.raises(MachineFault, match=r"\[qmb\]"):
        run_program(parse_program(src))


def test_md_without_measurement_pulse_is_a_fault():
    with pytest.raises(MachineFault, match=r"\[mdu\].*without a measurement pulse"):
        run_program(parse_program("Wait 4\nMD {q0}, r1"))


def test_unknown_micro_operation_is_an_adi_fault():
    with pytest.raises(MachineFault, match=r"\[adi\].*unknown micro-operation"):
        run_program(parse_program("Wait 4\nPulse {q0}, H"))


def test_overlapping_pulses_are_a_qsim_fault():
    with pytest.raises(MachineFault, match=r"\[qsim\]"):
        run_program(parse_program("Wait 4\nPulse {q0}, X180\nWait 1\nPulse {q0}, X180"))


def test_accumulation_loop():
    src = """
    mov r3, 16
    mov r15, 40000
    mov r4, 0
    mov r5, 3
    Loop:
    QNopReg r15
    Apply X180, q0
    Measure q0, r7
    Load r9, r3[0]
    Add r9, r9, r7
    Store r9, r3[0]
    addi r4, r4, 1
    bne r4, r5, Loop
    """
    for mode in ("sample", "expectation"):
        res = run_program(parse_program(src), mode=mode, seed=3)
        assert res.state.mem.words[16] == 3


@pytest.mark.parametrize("throttle", [1, 7, 1000])
def test_throttled_producer_same_trace(throttle):
    _, _, base = traced(TWO_ROUNDS)
    _, _, slow = traced(TWO_ROUNDS, throttle=throttle)
    assert slow == base
    if throttle > 1:
        return  # FEEDBACK leaves the producer only 4 cycles to issue its MPG
    _, _, fb = traced(FEEDBACK)
    _, _, fb_slow = traced(FEEDBACK, throttle=throttle)
    assert fb_slow == fb


def test_small_queues_give_the_same_trace():
    _, _, base = traced(TWO_ROUNDS)
    _, _, tight = traced(TWO_ROUNDS, config=Config(queue_capacity=1))
    assert tight == base


def test_slow_producer_misses_feedback_deadline():
    for throttle in (7, 1000):
        with pytest.raises(MachineFault, match=r"\[qmb\].*issued after that time point"):
            traced(FEEDBACK, throttle=throttle)


def test_step_budget():
    from quma.execution import BudgetExhausted

    with pytest.raises(BudgetExhausted):
        run_program(parse_program("L:\nWait 4\njump L"), Config(max_steps=50))


def test_label_zero_pulse_plays_after_delay():
    res, recs, _ = traced("Pulse {q0}, X180")
    assert recs[0]["cycle"] == 0 and recs[0]["payload"]["triggers"][0]["start_ns"] == 80
    assert res.cycles == 16


def test_result_dump():
    res = run_program(parse_program(FEEDBACK))
    d = res.dump()
    assert d["registers"]["r1"] == 1 and d["measurements"] == 2 and d["stranded"] == {}
