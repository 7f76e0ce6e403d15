"""Cycle-accurate simulator of the QuMA quantum control microarchitecture."""

from .config import Config, load_config
from .harness import AllXYSpec, run_experiment
from .isa import Program, disassemble, parse_program
from .machine import Machine, MachineFault, RunResult, run_program

__version__ = "0.1.0"

__all__ = [
    "Config",
    "load_config",
    "AllXYSpec",
    "run_experiment",
    "Program",
    "disassemble",
    "parse_program",
    "Machine",
    "MachineFault",
    "RunResult",
    "run_program",
]
