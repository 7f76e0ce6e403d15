import pytest
from hypothesis import given, settings, strategies as st

from quma.isa import MD, MPG, Pulse, Reg, Wait
from quma.microcode import MPGEntry, assign_labels
from quma.timing import QueueFull, QueueSet, SchedulingFault, TimingController

from test_microcode import TWO_ROUND_STREAM


def load(stream, capacity=4096):
    qs = QueueSet(capacity)
    for kind, entries in assign_labels(stream).items():
        for e in entries:
            qs.enqueue(kind, e)
    return qs


def view(qs):
    return {
        "timing": [tuple(e) for e in qs.timing.snapshot()],
        "pulse": [(e.op, e.label) for e in qs.pulse.snapshot()],
        "mpg": [e.label for e in qs.mpg.snapshot()],
        "md": [(e.rd, e.label) for e in qs.md.snapshot()],
    }


def run_ticks(tc, qs, n):
    fired = []
    for _ in range(n):
        fired += tc.tick(qs)
    return fired


def test_tables_2_3_4_by_ticking():
    qs = load(TWO_ROUND_STREAM)
    tc = TimingController()
    assert tc.start(qs) == []
    fired = run_ticks(tc, qs, 40000)
    assert [(f.cycle, f.kind, f.entry.op) for f in fired] == [(40000, "pulse", "I")]
    assert view(qs) == {
        "timing": [(4, 2), (4, 3), (40000, 4), (4, 5), (4, 6)],
        "pulse": [("I", 2), ("X180", 4), ("X180", 5)],
        "mpg": [3, 6],
        "md": [(7, 3), (7, 6)],
    }
    fired = run_ticks(tc, qs, 8)
    assert [(f.cycle, f.kind, f.label) for f in fired] == [(40004, "pulse", 2), (40008, "mpg", 3), (40008, "md", 3)]
    assert view(qs) == {
        "timing": [(40000, 4), (4, 5), (4, 6)],
        "pulse": [("X180", 4), ("X180", 5)],
        "mpg": [6],
        "md": [(7, 6)],
    }


def test_fire_times_of_two_rounds():
    qs = load(TWO_ROUND_STREAM)
    tc = TimingController()
    tc.start(qs)
    fired = tc.drain(qs)
    assert sorted({f.cycle for f in fired}) == [40000, 40004, 40008, 80008, 80012, 80016]
    assert tc.t_d == 80016 and qs.empty()


def test_label_zero_fires_at_start():
    qs = load([Pulse((((0,), "X180"),))])
    tc = TimingController()
    fired = tc.start(qs)
    assert [(f.cycle, f.label, f.entry.op) for f in fired] == [(0, 0, "X180")]


def test_empty_queue_tick_advances():
    qs = QueueSet()
    tc = TimingController()
    tc.start(qs)
    assert tc.tick(qs) == [] and tc.t_d == 1


def test_faults():
    qs = QueueSet()
    tc = TimingController()
    with pytest.raises(SchedulingFault, match="not started"):
        tc.tick(qs)
    tc.start(qs)
    with pytest.raises(SchedulingFault, match="twice"):
        tc.start(qs)
    # an event whose label was already broadcast
    qs = load([Wait(2), Wait(2)])
    tc = TimingController()
    tc.start(qs)
    run_ticks(tc, qs, 2)
    qs.enqueue("mpg", MPGEntry(1, (0,), 10))
    with pytest.raises(SchedulingFault, match="missed its time point"):
        run_ticks(tc, qs, 2)


def test_timing_underflow_detected():
    qs = QueueSet()
    tc = TimingController()
    tc.start(qs)
    run_ticks(tc, qs, 10)
    qs.enqueue("timing", assign_labels([Wait(4)])["timing"][0])
    with pytest.raises(SchedulingFault, match="underflow"):
        tc.tick(qs)


def test_advance_cannot_skip_broadcast():
    qs = load([Wait(5)])
    tc = TimingController()
    tc.start(qs)
    with pytest.raises(SchedulingFault):
        tc.advance(qs, 6)


def test_backpressure():
    qs = QueueSet(2)
    qs.enqueue("pulse", 1)
    qs.enqueue("pulse", 2)
    assert not qs.can_accept("pulse")
    with pytest.raises(QueueFull):
        qs.enqueue("pulse", 3)


op = st.sampled_from(["I", "X180", "Y90"])
stream_items = st.one_of(
    st.integers(1, 50).map(Wait),
    op.map(lambda u: Pulse((((0,), u),))),
    st.just(MPG((0,), 3)),
    st.just(MD((0,), Reg(1))),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(stream_items, max_size=40), st.integers(1, 60))
def test_tick_advance_drain_agree(stream, step):
    def fresh():
        qs = load(stream)
        tc = TimingController()
        return qs, tc, list(tc.start(qs))

    qs, tc, ticked = fresh()
    while qs.timing:
        ticked += tc.tick(qs)
    end = tc.t_d

    qs, tc, drained = fresh()
    drained += tc.drain(qs)
    assert drained == ticked and tc.t_d == end

    # bounded hops of at most `step` cycles through advance
    qs, tc, hopped = fresh()
    while qs.timing:
        hop = min(step, tc.cycles_to_next(qs))
        hopped += tc.advance(qs, hop)
    assert hopped == ticked

    # drain in windows with an `until` bound
    qs, tc, windowed = fresh()
    while qs.timing:
        windowed += tc.drain(qs, until=tc.t_d + step)
    assert windowed == ticked
