"""The full pipeline on one thread.

Producer side (non-deterministic domain): execution controller -> Q control
store -> QMB label assignment -> queues.  Consumer side (deterministic
domain): timing controller -> u-op unit / CTPG, MPG output, MDU -> qubits.

The producer runs as fast as possible until it blocks on a full queue, a
pending register or program end, or, when throttled, issues one instruction
every ``throttle`` cycles.  The consumer jumps T_D straight to the next cycle
where something happens, which is equivalent to ticking every cycle.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field

from .adi import (
    CTPG,
    AdiError,
    MEASUREMENT_CODEWORD,
    MeasurementPulseUnit,
    MicroOpUnit,
    SyntheticReadout,
    default_lookup_table,
    flux_lookup_table,
    load_lookup_table,
)
from .config import Config
from .execution import BudgetExhausted, DataMemory, ExecState, ExecutionFault, RegisterFile, Stall, step
from .isa import MD, QUMIS_TYPES, ClassicalInstr, Program, Wait
from .microcode import LabelAssigner, QControlStore, default_control_store, expand, load_control_store
from .qsim import Carrier, QuantumBackend, SubstreamRNG
from .timing import QueueSet, SchedulingFault, TimingController

__all__ = ["MachineFault", "RunResult", "TraceWriter", "Machine", "run_program"]


class MachineFault(RuntimeError):
    """Runtime fault with the pipeline stage that raised it."""

    def __init__(self, stage: str, message: str, cycle: int | None = None):
        self.stage = stage
        self.cycle = cycle
        where = f" at T_D={cycle}" if cycle is not None else ""
        super().__init__(f"[{stage}]{where} {message}")


class TraceWriter:
    """JSON Lines sink.  MD records are held back until their result is known,
    so the file stays in firing order."""

    def __init__(self, fh):
        self.fh = fh
        self._held: deque = deque()
        self.count = 0

    def emit(self, record: dict, ready: bool = True) -> None:
        if ready and not self._held:
            self._write(record)
        else:
            self._held.append(record)

    def release(self) -> None:
        held = self._held
        while held and not held[0].get("_pending"):
            self._write(held.popleft())

    def close(self) -> None:
        for rec in self._held:
            rec.pop("_pending", None)
            self._write(rec)
        self._held.clear()

    def _write(self, record: dict) -> None:
        self.fh.write(json.dumps(record, separators=(",", ":")))
        self.fh.write("\n")
        self.count += 1


@dataclass
class RunResult:
    cycles: int
    state: ExecState
    measurements: int
    fired: int
    stranded: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.stranded.values())

    def dump(self) -> dict:
        out = self.state.dump()
        out.update({"cycles": self.cycles, "measurements": self.measurements, "fired_events": self.fired})
        out["stranded"] = {k: [list(e) for e in v] for k, v in self.stranded.items() if v}
        return out


_PULSE, _MEASURE, _MD_DONE = 0, 1, 2
_QUMIS = frozenset(QUMIS_TYPES)


class Machine:
    def __init__(
        self,
        program: Program,
        config: Config | None = None,
        *,
        mode: str = "expectation",
        seed: int = 0,
        store: QControlStore | None = None,
        trace=None,
        throttle: int | None = None,
        pulse_shift_ns: dict | None = None,
        allow_overlap: bool = False,
        on_result=None,
        rng_block: int = 1024,
        rng_block_offset: int = 0,
        snapshot_at=(),
        state: ExecState | None = None,
    ):
        cfg = config or Config()
        self.config = cfg
        self.program = program
        self.store = store if store is not None else (
            load_control_store(cfg.microprograms) if cfg.microprograms else default_control_store())
        lut = load_lookup_table(cfg.lookup_table) if cfg.lookup_table else default_lookup_table()
        self.state = state or ExecState(regs=RegisterFile(), mem=DataMemory(cfg.memory_words))
        self.queues = QueueSet(cfg.queue_capacity)
        self.qmb = LabelAssigner()
        self.tc = TimingController(cfg.cycle_ns)
        self.uop = MicroOpUnit()
        self.ctpg = {
            "mw": CTPG("mw", lut, cfg.ctpg_delay_cycles, cfg.cycle_ns, pulse_shift_ns),
            "flux": CTPG("flux", flux_lookup_table(), cfg.ctpg_delay_cycles, cfg.cycle_ns),
        }
        self.mpg_unit = MeasurementPulseUnit(cfg.measurement_delay_cycles)
        self.readout = SyntheticReadout(cfg.mu0, cfg.mu1, cfg.sigma, cfg.threshold)
        self.mode = mode
        self.backend = QuantumBackend(
            mode, cfg.t1_ns, Carrier(cfg.frequency_hz, cfg.cycle_ns),
            SubstreamRNG(seed, rng_block, rng_block_offset), cfg.reference_ns, allow_overlap)
        self.trace = trace
        if throttle is not None and throttle < 1:
            raise ValueError("throttle must be >= 1 cycle per instruction")
        self.throttle = throttle
        self.on_result = on_result
        self.snapshot_at = sorted(set(snapshot_at))
        self.snapshots: dict = {}
        self.fired = 0
        self.md_results = 0

        self._staged: deque = deque()
        self._heap: list = []
        self._seq = 0
        self._readings: dict = {}  # qubit -> (window, mu, measurement index)
        self._uop_cache: dict = {}
        self._expand_cache: dict = {}
        self._stalled_on = None
        self._blocked_on = None  # deque of the full queue the producer waits on
        self._capacity = cfg.queue_capacity
        self._md_latency = cfg.measurement_delay_cycles + cfg.integration_cycles

    # -- producer ----------------------------------------------------------

    def _flush(self) -> bool:
        staged = self._staged
        by_kind = self.queues.by_kind
        tc = self.tc
        while staged:
            kind, entry = staged[0]
            q = by_kind[kind]._q
            if len(q) >= self._capacity:
                self._blocked_on = q
                return False
            if tc.started and kind != "timing" and entry.label <= tc.last_label:
                raise MachineFault(
                    "qmb", f"{kind} event with label {entry.label} enqueued after that time point was broadcast",
                    tc.t_d)
            q.append(entry)
            staged.popleft()
        return True

    def _expanded(self, instr) -> tuple:
        if type(instr) in _QUMIS:
            return (instr,)
        items = self._expand_cache.get(id(instr))
        if items is None:
            try:
                items = tuple(expand(instr, self.store))
            except ValueError as exc:
                raise MachineFault("microcode", f"{exc} (pc={self.state.pc - 1})") from None
            self._expand_cache[id(instr)] = items
        return items

    def _produce(self, limit: int | None = None) -> None:
        """Issue instructions until blocked, halted, or ``limit`` instructions."""
        if self._staged and not self._flush():
            return
        state = self.state
        program = self.program
        instrs = program.instructions
        n = len(instrs)
        budget = self.config.max_steps
        pending = state.regs.pending
        assign = self.qmb.assign
        staged = self._staged
        by_kind = self.queues.by_kind
        cap = self._capacity
        expanded = self._expanded
        # the consumer does not run during this call, so the broadcast label is fixed
        tc = self.tc
        last = tc.last_label if tc.started else -1
        deques = {kind: q._q for kind, q in by_kind.items()}
        issued = 0
        while not state.halted:
            if limit is not None and issued >= limit:
                return
            if state.steps >= budget:
                raise BudgetExhausted(f"step budget {budget} exhausted", state.pc)
            instr = instrs[state.pc]
            cls = type(instr)
            if cls is ClassicalInstr:
                try:
                    instr = step(state, program)
                except Stall as exc:
                    self._stalled_on = exc.register
                    return
                self._stalled_on = None
                issued += 1
                if instr is None:
                    continue
                cls = Wait
            else:
                # quantum instructions read no registers and pass straight through
                state.pc += 1
                state.steps += 1
                if state.pc >= n:
                    state.halted = True
                issued += 1
            for q in ((instr,) if cls in _QUMIS else expanded(instr)):
                if type(q) is MD and q.rd is not None:
                    pending[q.rd.index] = True
                try:
                    entries = assign(q)
                except ValueError as exc:
                    raise MachineFault("qmb", str(exc)) from None
                for item in entries:
                    kind, entry = item
                    if kind != "timing" and entry.label <= last:
                        raise MachineFault(
                            "qmb", f"{kind} event with label {entry.label} issued after that time point was broadcast",
                            tc.t_d)
                    dq = deques[kind]
                    if staged or len(dq) >= cap:
                        staged.append(item)
                    else:
                        dq.append(entry)
            if staged and not self._flush():
                return

    def _producer_done(self) -> bool:
        return self.state.halted and not self._staged

    # -- consumer ----------------------------------------------------------

    def _pulse_templates(self, op: str, qubits: tuple, cycle: int) -> list:
        key = (op, qubits)
        out = self._uop_cache.get(key)
        if out is None:
            try:
                out = [self.ctpg[t.unit].generate_pulse(t) for t in self.uop.emit_codewords(op, qubits, 0)]
            except AdiError as exc:
                raise MachineFault("adi", str(exc), cycle) from None
            self._uop_cache[key] = out
        return out

    def _dispatch(self, fired) -> None:
        trace = self.trace
        cycle_ns = self.config.cycle_ns
        heap = self._heap
        push = heapq.heappush
        for ev in fired:
            self.fired += 1
            cycle = ev.cycle
            entry = ev.entry
            kind = ev.kind
            if kind == "pulse":
                templates = self._pulse_templates(entry.op, entry.qubits, cycle)
                for pe in templates:
                    self._seq += 1
                    start = pe.start_cycle + cycle
                    push(heap, (start * cycle_ns + pe.shift_ns, self._seq, _PULSE, pe, start))
                if trace is not None:
                    shown = [{"cycle": pe.trigger_cycle + cycle, "unit": pe.unit, "codeword": pe.codeword,
                              "qubits": list(pe.qubits),
                              "start_ns": (pe.start_cycle + cycle) * cycle_ns + pe.shift_ns}
                             for pe in templates]
                    trace.emit({"cycle": cycle, "ns": cycle * cycle_ns, "queue": "pulse", "label": ev.label,
                                "payload": {"op": entry.op, "qubits": list(entry.qubits), "triggers": shown}})
            elif kind == "mpg":
                try:
                    win = self.mpg_unit.mpg_output(entry.qubits, entry.duration, cycle)
                except AdiError as exc:
                    raise MachineFault("adi", str(exc), cycle) from None
                self._seq += 1
                push(heap, (win.analog_start_cycle * cycle_ns, self._seq, _MEASURE, win, None))
                if trace is not None:
                    trace.emit({"cycle": cycle, "ns": cycle * cycle_ns, "queue": "mpg", "label": ev.label,
                                "payload": {"qubits": list(entry.qubits), "duration": entry.duration,
                                            "codeword": MEASUREMENT_CODEWORD,
                                            "window": [win.start_cycle, win.stop_cycle],
                                            "analog_cycle": win.analog_start_cycle}})
            else:
                ready = cycle + self._md_latency
                rec = None
                if trace is not None:
                    rec = {"cycle": cycle, "ns": cycle * cycle_ns, "queue": "md", "label": ev.label,
                           "payload": {"qubits": list(entry.qubits),
                                       "rd": None if entry.rd is None else f"r{entry.rd}"},
                           "_pending": True}
                    trace.emit(rec, ready=False)
                self._seq += 1
                push(heap, (ready * cycle_ns, self._seq, _MD_DONE, (cycle, ready, entry), rec))

    def _settle(self, limit_ns) -> None:
        """Run every analog event due by ``limit_ns``, in time order.

        Analog events only interact with the digital side through MD
        writebacks, so they may be settled lazily as long as that happens
        before the producer next looks at the register file.
        """
        heap = self._heap
        backend = self.backend
        apply_gate = backend.apply_gate
        pop = heapq.heappop
        levels = self.readout.levels
        while heap and heap[0][0] <= limit_ns:
            t_ns, _, kind, a, b = pop(heap)
            try:
                if kind == _PULSE:
                    apply_gate(a.gate, a.qubits, b, a.shift_ns, t_ns, a.duration_ns)
                elif kind == _MEASURE:
                    for q in a.qubits:
                        index = backend.measurements
                        _, mu = backend.measure(q, t_ns, levels)
                        self._readings[q] = (a, mu, index)
                else:
                    self._md_done(a, b)
            except MachineFault:
                raise
            except (ValueError, RuntimeError) as exc:
                stage = ("qsim", "qsim", "mdu")[kind]
                raise MachineFault(stage, str(exc), int(t_ns // self.config.cycle_ns)) from None

    def _md_done(self, item, rec) -> None:
        fire_cycle, ready, entry = item
        s_values = []
        m_bits = 0
        sample = self.mode == "sample"
        for j, q in enumerate(entry.qubits):
            reading = self._readings.get(q)
            if reading is None or not reading[0].start_cycle <= fire_cycle < reading[0].stop_cycle:
                raise MachineFault("mdu", f"MD on q{q} without a measurement pulse window", fire_cycle)
            mu = reading[1]
            if sample:
                readout = self.readout
                s, m = readout.integrate(mu, self.backend.rng.for_index(reading[2]) if readout.sigma else None)
            else:
                s, m = mu, int(mu > self.readout.t_q)
            s_values.append(s)
            m_bits |= m << j
            self.md_results += 1
            if self.on_result is not None:
                self.on_result(s)
        if entry.rd is not None:
            self.state.regs.write_back(entry.rd, m_bits)
        if rec is not None:
            rec["payload"]["result"] = {"cycle": ready, "S": s_values, "M": m_bits}
            del rec["_pending"]
            self.trace.release()

    def _end_of_cycle(self, cycle: int) -> None:
        self._settle(cycle * self.config.cycle_ns)
        if self.throttle is None:
            # A producer blocked on a full queue resumes once that queue is
            # half drained.  Anything it would have enqueued earlier carries a
            # label beyond every entry still waiting in the queue, so neither
            # the fired events nor the fault checks can tell the difference.
            blocked = self._blocked_on
            if blocked is None or len(blocked) <= self._capacity // 2:
                self._blocked_on = None
                self._produce()
        elif cycle % self.throttle == 0:
            self._produce(limit=1)
        if self.snapshot_at and self.snapshot_at[0] == cycle:
            self.snapshot_at.pop(0)
            self.snapshots[cycle] = self.queues.snapshot()

    def _next_cycle(self):
        tc = self.tc
        t = tc.t_d
        best = None
        tq = self.queues.timing._q
        if tq:
            remaining = tq[0][0] - tc.counter
            if remaining < 0:
                tc.cycles_to_next(self.queues)  # raises the underflow fault
            best = t + remaining
        # analog events need a stop of their own only when the producer waits
        # on a writeback or nothing else is scheduled
        if self._heap and (self._stalled_on is not None or best is None):
            c = max(int(-(-self._heap[0][0] // self.config.cycle_ns)), t + 1)
            if best is None or c < best:
                best = c
        if self.throttle is not None and not self._producer_done():
            c = (t // self.throttle + 1) * self.throttle
            if best is None or c < best:
                best = c
        if self.snapshot_at:
            c = self.snapshot_at[0]
            if best is None or c < best:
                best = c
        return best

    def _run_free(self) -> None:
        """Consumer loop for an unthrottled producer.

        Same stops as the general loop, but analog events are only settled
        when the producer takes a turn or the stop was set by an analog event.
        """
        tc = self.tc
        queues = self.queues
        tq = queues.timing._q
        heap = self._heap
        advance = tc.advance
        dispatch = self._dispatch
        settle = self._settle
        produce = self._produce
        cycle_ns = self.config.cycle_ns
        half = self._capacity // 2
        snapshot_at = self.snapshot_at
        state = self.state
        drain = tc.drain
        while True:
            t = tc.t_d
            if tq and self._stalled_on is None:
                # nothing reads the register file until the producer's next
                # turn, so fire broadcasts in bulk up to that turn
                nxt = snapshot_at[0] if snapshot_at else None
                fired = drain(queues, nxt, self._blocked_on, half)
                if fired:
                    dispatch(fired)
                nxt = tc.t_d
                if self._blocked_on is not None and len(self._blocked_on) <= half:
                    settle(nxt * cycle_ns)
                    self._blocked_on = None
                    produce()
                if snapshot_at and snapshot_at[0] == nxt:
                    snapshot_at.pop(0)
                    self.snapshots[nxt] = queues.snapshot()
                continue
            from_heap = False
            if tq:
                remaining = tq[0][0] - tc.counter
                if remaining < 0:
                    tc.cycles_to_next(queues)  # raises the underflow fault
                nxt = t + remaining
                if heap and self._stalled_on is not None:
                    c = max(int(-(-heap[0][0] // cycle_ns)), t + 1)
                    if c < nxt:
                        nxt = c
                        from_heap = True
            elif heap:
                nxt = max(int(-(-heap[0][0] // cycle_ns)), t + 1)
                from_heap = True
            else:
                nxt = None
            if snapshot_at and (nxt is None or snapshot_at[0] < nxt):
                nxt = snapshot_at[0]
                from_heap = False
            if nxt is None:
                return
            if nxt > t:
                fired = advance(queues, nxt - t)
                if fired:
                    dispatch(fired)
            turn = not state.halted or bool(self._staged)
            blocked = self._blocked_on
            if turn and blocked is not None:
                turn = len(blocked) <= half
            if turn or from_heap:
                settle(nxt * cycle_ns)
            if turn:
                self._blocked_on = None
                produce()
            if snapshot_at and snapshot_at[0] == nxt:
                snapshot_at.pop(0)
                self.snapshots[nxt] = queues.snapshot()

    def run(self) -> RunResult:
        tc = self.tc
        queues = self.queues
        try:
            if self.throttle is None:
                self._produce()
            else:
                # T_D starts once the first time point is queued, so every
                # label-0 event is in place however slow the producer is
                while not (queues.timing._q or self._producer_done() or self._stalled_on is not None
                           or self._blocked_on is not None):
                    self._produce(limit=1)
            self._dispatch(tc.start(queues, "external"))
            self._settle(0)
            if self.throttle is None:
                self._produce()
            if self.snapshot_at and self.snapshot_at[0] == 0:
                self.snapshot_at.pop(0)
                self.snapshots[0] = queues.snapshot()
            if self.throttle is None:
                self._run_free()
            else:
                advance = tc.advance
                dispatch = self._dispatch
                end_of_cycle = self._end_of_cycle
                next_cycle = self._next_cycle
                while True:
                    nxt = next_cycle()
                    if nxt is None:
                        break
                    fired = advance(queues, nxt - tc.t_d)
                    if fired:
                        dispatch(fired)
                    end_of_cycle(nxt)
            self._settle(float("inf"))
        except SchedulingFault as exc:
            raise MachineFault("timing", str(exc), tc.t_d) from None
        except BudgetExhausted:
            raise
        except ExecutionFault as exc:
            raise MachineFault("execution", str(exc), tc.t_d) from None
        if not self._producer_done():
            if self._stalled_on is not None:
                why = f"read of r{self._stalled_on} waits for an MD that is never issued"
            else:
                why = "event queues are full and no time point can drain them"
            raise MachineFault("execution", f"deadlock: {why} (pc={self.state.pc})", tc.t_d)
        if self.trace is not None:
            self.trace.close()
        snap = queues.snapshot()
        stranded = {k: snap[k] for k in ("pulse", "mpg", "md")}
        return RunResult(tc.t_d, self.state, self.md_results, self.fired, stranded, self.snapshots)


def run_program(program: Program, config: Config | None = None, **kwargs) -> RunResult:
    return Machine(program, config, **kwargs).run()
