"""Analog-digital interface.

* micro-operation unit: micro-op name -> timed codeword sequence;
* codeword-triggered pulse generation (CTPG): codeword -> stored pulse,
  played a fixed delay after the trigger;
* measurement pulse output and measurement discrimination (MDU).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .qsim import CZ_GATE, IDENTITY, MEASURE_GATE, Carrier, Gate

__all__ = [
    "DEFAULT_CTPG_DELAY",
    "MEASUREMENT_CODEWORD",
    "GATES",
    "AdiError",
    "CodewordTrigger",
    "PulseDef",
    "PulseEvent",
    "LookupTable",
    "default_lookup_table",
    "load_lookup_table",
    "flux_lookup_table",
    "baseline_footprint_bytes",
    "MicroOpDef",
    "default_seq_table",
    "parse_seq",
    "MicroOpUnit",
    "CTPG",
    "MeasurementWindow",
    "MeasurementPulseUnit",
    "MDUConfig",
    "discriminate",
    "SyntheticReadout",
    "write_waveform_csv",
]

DEFAULT_CTPG_DELAY = 16  # cycles, 80 ns
MEASUREMENT_CODEWORD = 7

_PI = math.pi
GATES = {
    "I": IDENTITY,
    "X180": Gate("rotation", 0.0, _PI),
    "X90": Gate("rotation", 0.0, _PI / 2),
    "Xm90": Gate("rotation", 0.0, -_PI / 2),
    "Y180": Gate("rotation", _PI / 2, _PI),
    "Y90": Gate("rotation", _PI / 2, _PI / 2),
    "Ym90": Gate("rotation", _PI / 2, -_PI / 2),
    "CZ": CZ_GATE,
    "MEASURE": MEASURE_GATE,
}


class AdiError(RuntimeError):
    pass


class CodewordTrigger(NamedTuple):
    cycle: int
    unit: str
    codeword: int
    qubits: tuple


@dataclass(frozen=True)
class PulseDef:
    codeword: int
    name: str
    gate: Gate
    duration_ns: float = 20.0
    envelope: object = "gaussian"  # "gaussian" or a sequence of (I, Q) samples


class PulseEvent(NamedTuple):
    trigger_cycle: int
    start_cycle: int
    codeword: int
    name: str
    gate: Gate
    qubits: tuple
    duration_ns: float
    unit: str = "mw"
    shift_ns: float = 0.0
    cycle_ns: float = 5.0

    @property
    def start_ns(self) -> float:
        return self.start_cycle * self.cycle_ns + self.shift_ns


class LookupTable:
    def __init__(self, pulses, sample_rate: float = 1e9, bits: int = 12):
        self.pulses: dict = {}
        for p in pulses:
            if p.codeword in self.pulses:
                raise AdiError(f"duplicate codeword {p.codeword}")
            self.pulses[p.codeword] = p
        self.sample_rate = sample_rate
        self.bits = bits

    def __contains__(self, codeword: int) -> bool:
        return codeword in self.pulses

    def __getitem__(self, codeword: int) -> PulseDef:
        return self.pulses[codeword]

    def __len__(self) -> int:
        return len(self.pulses)

    def samples(self, codeword: int) -> int:
        """Stored samples for one pulse, I and Q together: 2 * T_d * R_s."""
        p = self.pulses[codeword]
        return int(round(2 * p.duration_ns * 1e-9 * self.sample_rate))

    def footprint_samples(self) -> int:
        return sum(self.samples(cw) for cw in self.pulses)

    def footprint_bytes(self) -> float:
        return self.footprint_samples() * self.bits / 8

    def to_json(self) -> dict:
        pulses = {}
        for cw, p in sorted(self.pulses.items()):
            gate = p.name if p.name in GATES and GATES[p.name] == p.gate else [p.gate.axis, p.gate.angle]
            env = p.envelope if isinstance(p.envelope, str) else [list(s) for s in p.envelope]
            pulses[str(cw)] = {"gate": gate, "duration_ns": p.duration_ns, "envelope": env}
        return {"sample_rate": self.sample_rate, "bits": self.bits, "pulses": pulses}


def baseline_footprint_bytes(combinations: int = 21, ops_per_combination: int = 2, duration_ns: float = 20,
                             sample_rate: float = 1e9, bits: int = 12) -> float:
    """Memory for uploading every gate combination as its own waveform."""
    samples = combinations * ops_per_combination * 2 * duration_ns * 1e-9 * sample_rate
    return round(samples) * bits / 8


def _gate_from_json(spec) -> tuple[str, Gate]:
    if isinstance(spec, str):
        if spec not in GATES:
            raise AdiError(f"unknown gate name {spec!r}")
        return spec, GATES[spec]
    if isinstance(spec, (list, tuple)) and len(spec) == 2:
        axis, angle = float(spec[0]), float(spec[1])
        return f"R({axis:g},{angle:g})", Gate("rotation", axis, angle)
    raise AdiError(f"bad gate spec {spec!r}")


def lookup_table_from_json(data: dict) -> LookupTable:
    pulses = []
    for key, entry in data["pulses"].items():
        name, gate = _gate_from_json(entry["gate"])
        env = entry.get("envelope", "gaussian")
        if not isinstance(env, str):
            env = tuple(tuple(float(v) for v in s) for s in env)
        elif env != "gaussian":
            raise AdiError(f"unknown envelope {env!r}")
        pulses.append(PulseDef(int(key), name, gate, float(entry.get("duration_ns", 20)), env))
    return LookupTable(pulses, float(data.get("sample_rate", 1e9)), int(data.get("bits", 12)))


def load_lookup_table(path) -> LookupTable:
    return lookup_table_from_json(json.loads(Path(path).read_text()))


def default_lookup_table() -> LookupTable:
    """Single-qubit table: I, Rx(pi), Rx(pi/2), Rx(-pi/2), Ry(pi), Ry(pi/2), Ry(-pi/2)."""
    text = resources.files("quma").joinpath("data/default_lut.json").read_text()
    return lookup_table_from_json(json.loads(text))


def flux_lookup_table() -> LookupTable:
    return LookupTable([PulseDef(0, "I", IDENTITY, 40.0), PulseDef(1, "CZ", CZ_GATE, 40.0)])


# ---------------------------------------------------------------------------
# Micro-operation unit


class MicroOpDef(NamedTuple):
    unit: str  # "mw" (one trigger per addressed qubit) or "flux" (one per qubit pair)
    seq: tuple  # ((dt_0 = 0, cw_0), (dt_1, cw_1), ...)


def _check_seq(name: str, seq) -> tuple:
    seq = tuple((int(dt), int(cw)) for dt, cw in seq)
    if not seq:
        raise AdiError(f"micro-op {name}: empty codeword sequence")
    if seq[0][0] != 0:
        raise AdiError(f"micro-op {name}: first offset must be 0")
    if any(dt < 1 for dt, _ in seq[1:]):
        raise AdiError(f"micro-op {name}: offsets after the first must be >= 1")
    return seq


def parse_seq(text: str) -> tuple:
    """``"0:1, 4:4"`` -> ``((0, 1), (4, 4))``."""
    out = []
    for part in text.split(","):
        dt, _, cw = part.strip().partition(":")
        out.append((int(dt), int(cw)))
    return tuple(out)


def default_seq_table() -> dict:
    table = {
        "I": MicroOpDef("mw", ((0, 0),)),
        "X180": MicroOpDef("mw", ((0, 1),)),
        "X90": MicroOpDef("mw", ((0, 2),)),
        "Xm90": MicroOpDef("mw", ((0, 3),)),
        "Y180": MicroOpDef("mw", ((0, 4),)),
        "Y90": MicroOpDef("mw", ((0, 5),)),
        "Ym90": MicroOpDef("mw", ((0, 6),)),
        # Z = X . Y up to global phase: Rx(pi), then Ry(pi) four cycles later
        "Z": MicroOpDef("mw", ((0, 1), (4, 4))),
        "CZ": MicroOpDef("flux", ((0, 1),)),
    }
    return table


class MicroOpUnit:
    def __init__(self, table: dict | None = None):
        table = default_seq_table() if table is None else table
        self.table = {name: MicroOpDef(d.unit, _check_seq(name, d.seq)) for name, d in table.items()}

    def emit_codewords(self, uop: str, qubits: tuple, cycle: int) -> list:
        """Codeword triggers for micro-op ``uop`` fired at ``cycle``."""
        d = self.table.get(uop)
        if d is None:
            raise AdiError(f"unknown micro-operation {uop!r}")
        out = []
        t = cycle
        if d.unit == "flux":
            if len(qubits) != 2:
                raise AdiError(f"{uop} needs a qubit pair, got {len(qubits)} qubit(s)")
            for dt, cw in d.seq:
                t += dt
                out.append(CodewordTrigger(t, "flux", cw, qubits))
            return out
        for dt, cw in d.seq:
            t += dt
            for q in qubits:
                out.append(CodewordTrigger(t, "mw", cw, (q,)))
        return out


# ---------------------------------------------------------------------------
# CTPG


class CTPG:
    """Plays the stored pulse for a codeword a fixed ``delay`` cycles after its trigger."""

    def __init__(self, unit: str, lut: LookupTable, delay: int = DEFAULT_CTPG_DELAY, cycle_ns: float = 5,
                 start_shift_ns: dict | None = None):
        if delay < 0:
            raise AdiError("CTPG delay must be non-negative")
        self.unit = unit
        self.lut = lut
        self.delay = delay
        self.cycle_ns = cycle_ns
        # fault injection: extra start delay per codeword
        self.start_shift_ns = dict(start_shift_ns or {})

    def generate_pulse(self, trigger: CodewordTrigger) -> PulseEvent:
        p = self.lut.pulses.get(trigger.codeword)
        if p is None:
            raise AdiError(f"codeword {trigger.codeword} not in the {self.unit} lookup table")
        return PulseEvent(
            trigger.cycle,
            trigger.cycle + self.delay,
            trigger.codeword,
            p.name,
            p.gate,
            trigger.qubits,
            p.duration_ns,
            self.unit,
            self.start_shift_ns.get(trigger.codeword, 0.0),
            self.cycle_ns,
        )

    def render(self, event: PulseEvent, carrier: Carrier | None = None, ref_ns: float = 0.0):
        """Sampled (t_ns, I, Q) of one pulse with SSB modulation and quantisation."""
        p = self.lut[event.codeword]
        n = max(1, int(round(p.duration_ns * 1e-9 * self.lut.sample_rate)))
        dt = 1e9 / self.lut.sample_rate
        t = event.start_ns + dt * np.arange(n)
        if not isinstance(p.envelope, str):
            env = np.asarray(p.envelope, dtype=float)
            i_env, q_env = env[:, 0], env[:, 1]
        elif p.gate.kind in ("identity", "measure"):
            i_env = q_env = np.zeros(n)
        else:
            sigma = n / 4
            x = np.arange(n) - (n - 1) / 2
            amp = abs(p.gate.angle) / math.pi
            g = amp * math.copysign(1.0, p.gate.angle or 1.0) * np.exp(-0.5 * (x / sigma) ** 2)
            i_env = g * math.cos(p.gate.axis)
            q_env = g * math.sin(p.gate.axis)
        if carrier is not None:
            phase = 2 * math.pi * (carrier.turns(event.start_cycle, event.shift_ns, ref_ns)
                                   + carrier.freq_hz * 1e-9 * dt * np.arange(n))
            c, s = np.cos(phase), np.sin(phase)
            i_out, q_out = i_env * c - q_env * s, i_env * s + q_env * c
        else:
            i_out, q_out = i_env, q_env
        full = 2 ** (self.lut.bits - 1) - 1
        quant = lambda a: np.round(np.clip(a, -1, 1) * full) / full  # noqa: E731
        return t, quant(i_out), quant(q_out)


def write_waveform_csv(path, t, i, q) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ns", "I", "Q"])
        for row in zip(t, i, q):
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Measurement pulse output and discrimination


class MeasurementWindow(NamedTuple):
    qubits: tuple
    start_cycle: int
    stop_cycle: int
    analog_start_cycle: int
    codeword: int = MEASUREMENT_CODEWORD


class MeasurementPulseUnit:
    """Digital output high for ``D`` cycles on the channels addressed by QAddr."""

    def __init__(self, delay: int = DEFAULT_CTPG_DELAY):
        self.delay = delay
        self._busy_until: dict = {}

    def mpg_output(self, qubits: tuple, duration: int, cycle: int) -> MeasurementWindow:
        if duration < 1:
            raise AdiError("measurement pulse duration must be >= 1 cycle")
        for q in qubits:
            if cycle < self._busy_until.get(q, -1):
                raise AdiError(f"measurement pulse on q{q} at cycle {cycle} overlaps one ending at {self._busy_until[q]}")
        stop = cycle + duration
        for q in qubits:
            self._busy_until[q] = stop
        return MeasurementWindow(qubits, cycle, stop, cycle + self.delay)


@dataclass
class MDUConfig:
    weights: np.ndarray
    threshold: float
    sample_rate: float = 1e9

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not math.isfinite(self.threshold):
            raise AdiError("threshold must be finite")

    @property
    def window(self) -> int:
        return len(self.weights)


def discriminate(mdu: MDUConfig, signal) -> tuple[float, int]:
    """Integrate against the weight function (in ns) and threshold strictly."""
    v = np.asarray(signal, dtype=float)
    if v.shape != mdu.weights.shape:
        raise AdiError(f"signal length {v.size} != integration window {mdu.window}")
    s = float(np.dot(v, mdu.weights)) * (1e9 / mdu.sample_rate)
    return s, int(s > mdu.threshold)


@dataclass
class SyntheticReadout:
    """State-dependent integration result: mu + N(0, sigma)."""

    mu0: float = 0.1
    mu1: float = 0.9
    sigma: float = 0.0
    threshold: float | None = None

    @property
    def levels(self) -> tuple:
        return (self.mu0, self.mu1)

    @property
    def t_q(self) -> float:
        return (self.mu0 + self.mu1) / 2 if self.threshold is None else self.threshold

    def integrate(self, mu: float, rng=None) -> tuple[float, int]:
        s = mu
        if self.sigma:
            s = mu + self.sigma * rng.standard_normal()
        return s, int(s > self.t_q)

    def signal(self, mu: float, mdu: MDUConfig, rng=None) -> np.ndarray:
        """A readout trace whose integral against ``mdu.weights`` is ``mu`` (plus noise)."""
        dt = 1e9 / mdu.sample_rate
        norm = float(np.dot(mdu.weights, mdu.weights)) * dt
        v = mdu.weights * (mu / norm)
        if self.sigma:
            # per-sample noise scaled so the integrated noise has std sigma
            v = v + rng.standard_normal(mdu.window) * (self.sigma / (math.sqrt(norm * dt)))
        return v


@dataclass
class MDUResult:
    qubit: int
    s: float
    m: int
    raw: float = field(default=0.0)
