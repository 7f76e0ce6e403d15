"""AllXY experiment: program generator, data collection, fidelity rescaling and
the end-to-end runner."""

from __future__ import annotations

import csv
import io
import math
from array import array
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .adi import GATES
from .config import Config
from .isa import Program, parse_program
from .machine import Machine, TraceWriter

__all__ = [
    "ALLXY_PAIRS",
    "ALLXY_LABELS",
    "CAL0_COMBINATIONS",
    "CAL1_COMBINATIONS",
    "HarnessError",
    "AllXYSpec",
    "uop_name",
    "ideal_fidelity",
    "allxy_source",
    "generate_allxy_program",
    "DataCollector",
    "rescale_fidelity",
    "ExperimentRecord",
    "run_experiment",
]

_PI = math.pi
_I = (0.0, 0.0)
_X = (0.0, _PI)
_Y = (_PI / 2, _PI)
_x = (0.0, _PI / 2)
_y = (_PI / 2, _PI / 2)

# (axis, angle) of the two gates of each combination, in experiment order.
# Entries 7 and 8 are the same pair, as in the reference procedure.
ALLXY_PAIRS = (
    (_I, _I), (_X, _X), (_Y, _Y), (_X, _Y), (_Y, _X),
    (_x, _I), (_y, _I), (_x, _y), (_x, _y), (_x, _Y), (_y, _X), (_X, _y), (_Y, _x),
    (_x, _X), (_X, _x), (_y, _Y), (_Y, _y),
    (_X, _I), (_Y, _I), (_x, _x), (_y, _y),
)
_LETTER = {_I: "I", _X: "X", _Y: "Y", _x: "x", _y: "y"}
ALLXY_LABELS = tuple(_LETTER[a] + _LETTER[b] for a, b in ALLXY_PAIRS)

CAL0_COMBINATIONS = (0,)
CAL1_COMBINATIONS = (18, 19)


class HarnessError(ValueError):
    pass


def uop_name(gate: tuple) -> str:
    """Micro-operation whose stored pulse implements rotation ``(axis, angle)``."""
    axis, angle = gate
    if angle == 0:
        return "I"
    for name, g in GATES.items():
        if g.kind == "rotation" and math.isclose(g.axis, axis) and math.isclose(g.angle, angle):
            return name
    raise HarnessError(f"no stored pulse for rotation axis={axis} angle={angle}")


def ideal_fidelity(combination: int) -> float:
    """Excited-state population after combination ``combination`` on |0>."""
    if combination < 5:
        return 0.0
    if combination < 17:
        return 0.5
    return 1.0


@dataclass(frozen=True)
class AllXYSpec:
    pairs: tuple = ALLXY_PAIRS
    reps: int = 2
    rounds: int = 25600
    init_wait: int = 40000
    qubit: int = 2
    gate_spacing: int = 4
    msmt_duration: int = 300

    def __post_init__(self):
        if len(self.pairs) != 21:
            raise HarnessError("AllXY needs 21 gate pairs")
        if self.reps < 1 or self.rounds < 1:
            raise HarnessError("reps and rounds must be >= 1")
        if self.init_wait < 1 or self.gate_spacing < 1 or self.msmt_duration < 1:
            raise HarnessError("intervals must be >= 1 cycle")

    @property
    def k(self) -> int:
        return len(self.pairs) * self.reps

    def combination(self, slot: int) -> int:
        return slot // self.reps

    def slot_label(self, slot: int) -> str:
        a, b = self.pairs[self.combination(slot)]
        return _LETTER.get(a, "?") + _LETTER.get(b, "?")


def allxy_source(spec: AllXYSpec) -> str:
    q = f"{{q{spec.qubit}}}"
    us = spec.init_wait * 5 / 1000
    lines = [
        f"mov     r15, {spec.init_wait}     # {us:g} us",
        "mov     r1, 0          # loop counter",
        f"mov     r2, {spec.rounds}      # number of averages",
        "",
        "Outer_Loop:",
    ]
    for a, b in spec.pairs:
        u0, u1 = uop_name(a), uop_name(b)
        for _ in range(spec.reps):
            lines += [
                f"  QNopReg r15        # {u0}, {u1}",
                f"  Pulse   {q}, {u0}",
                f"  Wait    {spec.gate_spacing}",
                f"  Pulse   {q}, {u1}",
                f"  Wait    {spec.gate_spacing}",
                f"  MPG     {q}, {spec.msmt_duration}",
                f"  MD      {q}",
            ]
    lines += ["", "  addi    r1, r1, 1", "  bne     r1, r2, Outer_Loop", ""]
    return "\n".join(lines)


def generate_allxy_program(spec: AllXYSpec = AllXYSpec()) -> Program:
    return parse_program(allxy_source(spec))


class DataCollector:
    """K slots of integration results.  Values are kept and summed with
    ``math.fsum``, so averages are exact and independent of round order."""

    def __init__(self, k: int):
        if k < 1:
            raise HarnessError("collector needs at least one slot")
        self.k = k
        self._values = [array("d") for _ in range(k)]
        self._next = 0

    def collect(self, slot: int, value: float) -> None:
        if not 0 <= slot < self.k:
            raise HarnessError(f"slot {slot} out of range [0, {self.k})")
        self._values[slot].append(value)

    def push(self, value: float) -> None:
        """Store the next result of the round-robin slot sequence."""
        self._values[self._next].append(value)
        self._next = (self._next + 1) % self.k

    @property
    def rounds(self) -> int:
        return min(len(v) for v in self._values)

    def counts(self) -> list:
        return [len(v) for v in self._values]

    def means(self) -> list:
        """Per-slot means of whatever has been collected (NaN for empty slots)."""
        return [math.fsum(v) / len(v) if v else math.nan for v in self._values]

    def sums(self) -> list:
        return [math.fsum(v) for v in self._values]

    def averages(self) -> list:
        counts = {len(v) for v in self._values}
        if counts == {0}:
            raise HarnessError("no rounds collected")
        if len(counts) != 1:
            raise HarnessError(f"incomplete round: slot counts {sorted(counts)}")
        n = counts.pop()
        return [s / n for s in self.sums()]

    def merge(self, other: "DataCollector") -> None:
        if other.k != self.k:
            raise HarnessError("cannot merge collectors with different K")
        for mine, theirs in zip(self._values, other._values):
            mine.extend(theirs)


def rescale_fidelity(averages, cal0_slots, cal1_slots) -> list:
    """F_i = (S_i - S0) / (S1 - S0) with S0, S1 the calibration-slot means."""
    s0 = math.fsum(averages[i] for i in cal0_slots) / len(cal0_slots)
    s1 = math.fsum(averages[i] for i in cal1_slots) / len(cal1_slots)
    den = s1 - s0
    if abs(den) < 1e-12:
        raise HarnessError(f"degenerate calibration: |1> level {s1!r} equals |0> level {s0!r}")
    return [(s - s0) / den for s in averages]


def calibration_slots(spec: AllXYSpec) -> tuple:
    r = spec.reps
    cal0 = [c * r + j for c in CAL0_COMBINATIONS for j in range(r)]
    cal1 = [c * r + j for c in CAL1_COMBINATIONS for j in range(r)]
    return cal0, cal1


@dataclass
class ExperimentRecord:
    spec: AllXYSpec
    averages: list
    fidelities: list
    seed: int
    mode: str
    config_hash: str
    cycles: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def labels(self) -> list:
        return [self.spec.slot_label(i) for i in range(self.spec.k)]

    def combination_fidelities(self) -> list:
        """Mean F per combination (over repetitions)."""
        r = self.spec.reps
        return [math.fsum(self.fidelities[c * r:(c + 1) * r]) / r for c in range(len(self.spec.pairs))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "label", "S_mean", "F"])
        for i, (s, f) in enumerate(zip(self.averages, self.fidelities)):
            w.writerow([i, self.spec.slot_label(i), repr(s), repr(f)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _run_chunk(args):
    spec, config, seed, mode, start_round, pulse_shift_ns = args
    collector = DataCollector(spec.k)
    machine = Machine(generate_allxy_program(spec), config, mode=mode, seed=seed, on_result=collector.push,
                      rng_block=spec.k, rng_block_offset=start_round, pulse_shift_ns=pulse_shift_ns,
                      allow_overlap=bool(pulse_shift_ns))
    result = machine.run()
    if not result.ok:
        raise HarnessError(f"stranded events after run: {result.stranded}")
    return collector, result.cycles


def run_experiment(spec: AllXYSpec = AllXYSpec(), config: Config | None = None, seed: int = 0, *,
                   mode: str = "expectation", trace=None, pulse_shift_ns: dict | None = None,
                   workers: int = 1) -> ExperimentRecord:
    """Generate, run and analyse AllXY.

    ``trace`` is an open text file for the JSON Lines event trace (serial
    mode only).  ``pulse_shift_ns`` delays the analog start of selected
    codewords (fault injection).  With ``workers > 1`` rounds are split into
    chunks run in separate processes, each starting from a fresh qubit, and
    the collector sums are merged.
    """
    config = config or Config()
    if workers > 1:
        if trace is not None:
            raise HarnessError("tracing needs a serial run")
        chunks = []
        per = -(-spec.rounds // workers)
        for start in range(0, spec.rounds, per):
            n = min(per, spec.rounds - start)
            sub = AllXYSpec(spec.pairs, spec.reps, n, spec.init_wait, spec.qubit, spec.gate_spacing,
                            spec.msmt_duration)
            chunks.append((sub, config, seed, mode, start, pulse_shift_ns))
        collector = DataCollector(spec.k)
        cycles = 0
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part, c in pool.map(_run_chunk, chunks):
                collector.merge(part)
                cycles += c
    else:
        collector = DataCollector(spec.k)
        writer = TraceWriter(trace) if trace is not None else None
        machine = Machine(generate_allxy_program(spec), config, mode=mode, seed=seed, trace=writer,
                          on_result=collector.push, rng_block=spec.k, pulse_shift_ns=pulse_shift_ns,
                          allow_overlap=bool(pulse_shift_ns))
        result = machine.run()
        if not result.ok:
            raise HarnessError(f"stranded events after run: {result.stranded}")
        cycles = result.cycles
    if collector.rounds != spec.rounds:
        raise HarnessError(f"collected {collector.rounds} rounds, expected {spec.rounds}")
    averages = collector.averages()
    cal0, cal1 = calibration_slots(spec)
    fids = rescale_fidelity(averages, cal0, cal1)
    meta = {"rounds": spec.rounds, "reps": spec.reps, "t1_ns": config.t1_ns, "ssb_hz": config.frequency_hz,
            "sigma": config.sigma}
    return ExperimentRecord(spec, averages, fids, seed, mode, config.digest(), cycles, meta)
