import json
from pathlib import Path

import pytest

from quma.cli import main, results_per_round
from quma.harness import AllXYSpec, allxy_source, ideal_fidelity
from quma.isa import parse_program
from quma.microcode import default_control_store

PROGRAMS = Path(__file__).resolve().parent.parent / "programs"


@pytest.fixture
def allxy1(tmp_path):
    path = tmp_path / "allxy1.qumis"
    path.write_text(allxy_source(AllXYSpec(rounds=1)))
    return path


def test_assemble_canonical(tmp_path, capsys):
    out = tmp_path / "out.qumis"
    assert main(["assemble", str(PROGRAMS / "allxy.qumis"), "-o", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("mov r15, 40000\nmov r1, 0\nmov r2, 25600\nOuter_Loop:\nQNopReg r15\n")
    assert main(["assemble", str(out), "-o", str(tmp_path / "again.qumis")]) == 0
    assert (tmp_path / "again.qumis").read_text() == text


@pytest.mark.parametrize("text, code, needle", [
    ("mov r1, 0\nPlse {q0}, X180\n", 2, "unknown mnemonic 'Plse', line 2"),
    ("", 2, "empty"),
])
def test_assemble_errors(tmp_path, capsys, text, code, needle):
    path = tmp_path / "bad.qumis"
    path.write_text(text)
    assert main(["assemble", str(path)]) == code
    assert needle in capsys.readouterr().err


def test_missing_file_is_io_error(capsys):
    assert main(["assemble", "/nonexistent/x.qumis"]) == 5
    assert main(["run", "/nonexistent/x.qumis"]) == 5


def test_run_allxy_expectation_staircase(tmp_path, allxy1):
    res = tmp_path / "r.csv"
    dump = tmp_path / "d.json"
    assert main(["run", str(allxy1), "--mode", "expectation", "--results", str(res), "--dump", str(dump)]) == 0
    rows = [r.split(",") for r in res.read_text().splitlines()[1:]]
    assert len(rows) == 42
    for slot, label, _, f in rows:
        assert float(f) == pytest.approx(ideal_fidelity(int(slot) // 2), abs=1e-4)
    assert json.loads(dump.read_text())["registers"]["r1"] == 1


def test_run_budget_exit_code(capsys):
    assert main(["run", str(PROGRAMS / "allxy.qumis"), "--max-steps", "10"]) == 4
    assert "step budget 10 exhausted" in capsys.readouterr().err


def test_runtime_fault_exit_code(tmp_path, capsys):
    path = tmp_path / "f.qumis"
    path.write_text("Wait 4\nMD {q0}, r1\n")
    assert main(["run", str(path)]) == 3
    assert "[mdu]" in capsys.readouterr().err


def test_bad_config_is_parse_error(tmp_path, allxy1, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[timing]\nwhat = 1\n")
    assert main(["run", str(allxy1), "-c", str(cfg)]) == 2


def test_run_same_seed_same_outputs(tmp_path, allxy1):
    outs = []
    for n in range(2):
        t, r, d = (tmp_path / f"{x}{n}" for x in ("t", "r", "d"))
        assert main(["run", str(allxy1), "--seed", "7", "--trace", str(t), "--results", str(r),
                     "--dump", str(d)]) == 0
        outs.append((t.read_bytes(), r.read_bytes(), d.read_bytes()))
    assert outs[0] == outs[1]


def test_trace_command_throttle(tmp_path):
    prog = PROGRAMS / "accumulate.qumis"
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["trace", str(prog), "-o", str(a)]) == 0
    assert main(["trace", str(prog), "-o", str(b), "--throttle", "10"]) == 0
    assert a.read_bytes() == b.read_bytes()
    recs = [json.loads(x) for x in a.read_text().splitlines()]
    assert [r["queue"] for r in recs] == ["pulse", "mpg", "md"]


def test_shipped_programs():
    store = default_control_store()
    assert results_per_round(parse_program((PROGRAMS / "allxy.qumis").read_text()), store) == 42
    assert results_per_round(parse_program((PROGRAMS / "accumulate.qumis").read_text()), store) == 1
    assert results_per_round(parse_program((PROGRAMS / "cnot.qumis").read_text()), store) == 2


def test_cnot_program(tmp_path):
    d = tmp_path / "d.json"
    assert main(["run", str(PROGRAMS / "cnot.qumis"), "--dump", str(d)]) == 0
    regs = json.loads(d.read_text())["registers"]
    assert (regs["r1"], regs["r2"]) == (1, 1)


def test_allxy_command(tmp_path, capsys):
    res, plot, prog = tmp_path / "r.csv", tmp_path / "p.png", tmp_path / "a.qumis"
    assert main(["allxy", "--rounds", "1", "--mode", "expectation", "--results", str(res), "--plot", str(plot),
                 "--emit-program", str(prog), "--t1", "2000"]) == 0
    rows = [r.split(",") for r in res.read_text().splitlines()[1:]]
    assert [float(r[3]) for r in rows] == pytest.approx([ideal_fidelity(i // 2) for i in range(42)], abs=1e-12)
    assert plot.stat().st_size > 0 and "Outer_Loop:" in prog.read_text()
    assert "max |F - ideal|" in capsys.readouterr().err


def test_allxy_ssb_shift_signature(tmp_path):
    res = tmp_path / "r.csv"
    assert main(["allxy", "--rounds", "1", "--mode", "expectation", "--ssb", "50e6", "--ssb-shift", "5ns",
                 "--t1", "2000", "--results", str(res)]) == 0
    f = {r.split(",")[1]: float(r.split(",")[3]) for r in res.read_text().splitlines()[1:]}
    # x turns into y: xy acts as yy = Y180, xY as yY = 3pi/2 about y
    assert f["xy"] == pytest.approx(1.0, abs=1e-9)
    assert f["xY"] == pytest.approx(0.5, abs=1e-9)
    assert f["xx"] == pytest.approx(1.0, abs=1e-9)
