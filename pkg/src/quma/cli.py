"""``quma`` command line: assemble, run, trace and the AllXY pipeline.

Exit codes: 0 success, 2 parse or config error, 3 runtime fault, 4 step
budget exhausted, 5 I/O error.  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .execution import BudgetExhausted, ExecutionFault
from .harness import (
    ALLXY_LABELS,
    AllXYSpec,
    DataCollector,
    HarnessError,
    allxy_source,
    ideal_fidelity,
    rescale_fidelity,
    run_experiment,
)
from .isa import MD, AsmError, Program, disassemble, parse_program
from .machine import Machine, MachineFault, TraceWriter
from .microcode import MicrocodeError, default_control_store, expand, load_control_store

EXIT_OK, EXIT_PARSE, EXIT_RUNTIME, EXIT_BUDGET, EXIT_IO = 0, 2, 3, 4, 5

# codewords of the x-axis rotations in the default lookup table
X_CODEWORDS = (1, 2, 3)


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _open_out(path: str):
    if path == "-":
        return sys.stdout
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def _write_text(path: str, text: str) -> None:
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _assemble(path: str) -> Program:
    try:
        return parse_program(_read_text(path))
    except AsmError as exc:
        raise _Exit(EXIT_PARSE, f"{path}: {exc}") from None


def _config(args):
    try:
        return load_config(args.config, **getattr(args, "overrides", {}))
    except ConfigError as exc:
        raise _Exit(EXIT_PARSE, f"config: {exc}") from None
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read config {args.config}: {exc.strerror or exc}") from None


def _store(config):
    if not config.microprograms:
        return default_control_store()
    try:
        return load_control_store(config.microprograms)
    except MicrocodeError as exc:
        raise _Exit(EXIT_PARSE, f"{config.microprograms}: {exc}") from None
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read {config.microprograms}: {exc.strerror or exc}") from None


def _parse_ns(text: str) -> float:
    m = re.fullmatch(r"\s*([-+]?[0-9.eE+-]+)\s*(ns)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad time {text!r} (expected e.g. 5ns)")
    return float(m.group(1))


def results_per_round(program: Program, store) -> int:
    """Integration results one pass over the program body produces (static MD count)."""
    k = 0
    for instr in program.instructions:
        try:
            items = expand(instr, store)
        except MicrocodeError:
            continue
        k += sum(len(q.qubits) for q in items if isinstance(q, MD))
    return k


def _results_csv(collector: DataCollector) -> str:
    """Slot means; F is filled in when the slots line up with AllXY."""
    k = collector.k
    counts = set(collector.counts())
    means = collector.means()
    fids = [""] * k
    labels = [f"m{i}" for i in range(k)]
    if k % 21 == 0 and len(counts) == 1 and 0 not in counts:
        reps = k // 21
        labels = [ALLXY_LABELS[i // reps] for i in range(k)]
        cal0 = list(range(0, reps))
        cal1 = list(range(18 * reps, 20 * reps))
        try:
            fids = [repr(f) for f in rescale_fidelity(means, cal0, cal1)]
        except HarnessError:
            pass
    lines = ["slot,label,S_mean,F"]
    lines += [f"{i},{labels[i]},{means[i]!r},{fids[i]}" for i in range(k)]
    return "\n".join(lines) + "\n"


def _execute(args, *, trace_path=None, throttle=None):
    config = _config(args)
    program = _assemble(args.program)
    store = _store(config)
    k = results_per_round(program, store)
    collector = DataCollector(k) if k else None
    trace_fh = _open_out(trace_path) if trace_path else None
    writer = TraceWriter(trace_fh) if trace_fh is not None else None
    try:
        machine = Machine(program, config, mode=args.mode, seed=args.seed, store=store, trace=writer,
                          throttle=throttle, on_result=collector.push if collector else None,
                          rng_block=k or 1024)
        result = machine.run()
    except BudgetExhausted as exc:
        raise _Exit(EXIT_BUDGET, str(exc)) from None
    except (MachineFault, ExecutionFault) as exc:
        raise _Exit(EXIT_RUNTIME, f"runtime fault: {exc}") from None
    finally:
        if trace_fh is not None and trace_fh is not sys.stdout:
            trace_fh.close()
    return result, collector


def cmd_assemble(args) -> int:
    program = _assemble(args.input)
    _write_text(args.output, disassemble(program))
    return EXIT_OK


def cmd_run(args) -> int:
    if args.max_steps is not None:
        args.overrides = {"max_steps": args.max_steps}
    result, collector = _execute(args, trace_path=args.trace)
    if args.results and collector is not None:
        _write_text(args.results, _results_csv(collector))
    dump = result.dump()
    if not result.ok:
        print(f"warning: events left in queues at end of run: "
              f"{ {k: len(v) for k, v in result.stranded.items() if v} }", file=sys.stderr)
    _write_text(args.dump, json.dumps(dump, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_trace(args) -> int:
    _execute(args, trace_path=args.output, throttle=args.throttle)
    return EXIT_OK


def _plot(record, path: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise _Exit(EXIT_IO, "--plot needs matplotlib (pip install quma[plot])") from None
    spec = record.spec
    x = list(range(spec.k))
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(x, record.fidelities, "o", ms=4, label="measured")
    ax.step(x, [ideal_fidelity(spec.combination(i)) for i in x], where="mid", color="grey", lw=1, label="ideal")
    ax.set_xticks(x)
    ax.set_xticklabels(record.labels, fontsize=7, rotation=90)
    ax.set_ylabel("F |1>")
    ax.set_ylim(-0.1, 1.1)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    try:
        fig.savefig(path)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None
    finally:
        plt.close(fig)


def cmd_allxy(args) -> int:
    overrides = {"sigma": args.noise, "t1_ns": args.t1, "frequency_hz": args.ssb}
    args.overrides = {k: v for k, v in overrides.items() if v is not None}
    config = _config(args)
    try:
        spec = AllXYSpec(reps=args.reps, rounds=args.rounds)
    except HarnessError as exc:
        raise _Exit(EXIT_PARSE, str(exc)) from None
    if args.emit_program:
        _write_text(args.emit_program, allxy_source(spec))
    shift = {cw: args.ssb_shift for cw in X_CODEWORDS} if args.ssb_shift else None
    trace_fh = _open_out(args.trace) if args.trace else None
    try:
        record = run_experiment(spec, config, args.seed, mode=args.mode, trace=trace_fh, pulse_shift_ns=shift,
                                workers=args.workers)
    except BudgetExhausted as exc:
        raise _Exit(EXIT_BUDGET, str(exc)) from None
    except (MachineFault, ExecutionFault, HarnessError) as exc:
        raise _Exit(EXIT_RUNTIME, f"runtime fault: {exc}") from None
    finally:
        if trace_fh is not None and trace_fh is not sys.stdout:
            trace_fh.close()
    _write_text(args.results, record.to_csv())
    if args.plot:
        _plot(record, args.plot)
    comb = record.combination_fidelities()
    worst = max(abs(f - ideal_fidelity(c)) for c, f in enumerate(comb))
    print(f"allxy: {spec.rounds} rounds, K={spec.k}, mode={args.mode}, max |F - ideal| = {worst:.4g}",
          file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quma", description="QuMA control microarchitecture simulator")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("assemble", help="parse a .qumis file and write its canonical form")
    a.add_argument("input")
    a.add_argument("-o", "--output", default="-")
    a.set_defaults(func=cmd_assemble)

    def common(sp):
        sp.add_argument("program")
        sp.add_argument("-c", "--config", help="INI configuration file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--mode", choices=("sample", "expectation"), default="sample")

    r = sub.add_parser("run", help="execute a program through the full pipeline")
    common(r)
    r.add_argument("--trace", help="JSON Lines event trace output")
    r.add_argument("--results", help="CSV of per-slot integration means")
    r.add_argument("--max-steps", type=int, help="execution step budget")
    r.add_argument("--dump", default="-", help="final register/memory dump (JSON, default stdout)")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("trace", help="write the fired-event trace of a program")
    common(t)
    t.add_argument("-o", "--output", default="-")
    t.add_argument("--throttle", type=int, help="issue one instruction every N cycles")
    t.set_defaults(func=cmd_trace)

    x = sub.add_parser("allxy", help="generate, run and analyse the AllXY experiment")
    x.add_argument("-c", "--config", help="INI configuration file")
    x.add_argument("--rounds", type=int, default=25600)
    x.add_argument("--reps", type=int, default=2)
    x.add_argument("--noise", type=float, help="readout noise sigma")
    x.add_argument("--t1", type=float, help="T1 in ns")
    x.add_argument("--ssb", type=float, help="SSB frequency in Hz")
    x.add_argument("--ssb-shift", type=_parse_ns, default=0.0, metavar="NS",
                   help="delay x-rotation pulses by this many ns (fault injection)")
    x.add_argument("--mode", choices=("sample", "expectation"), default="sample")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--results", default="-", help="results CSV (default stdout)")
    x.add_argument("--trace", help="JSON Lines event trace output")
    x.add_argument("--plot", help="F vs slot figure")
    x.add_argument("--emit-program", help="also write the generated .qumis program")
    x.set_defaults(func=cmd_allxy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Exit as exc:
        print(f"quma: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"quma: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
