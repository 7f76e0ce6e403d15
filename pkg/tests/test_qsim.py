import math

import numpy as np
import pytest

from quma.qsim import (
    Carrier,
    DensityRegister,
    Gate,
    QsimError,
    QuantumBackend,
    QubitState,
    SubstreamRNG,
    TwoQubitRegister,
    apply_rotation,
    fidelity,
    measure,
    relax,
    rotation_matrix,
)

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])


def test_rotation_matrix_matches_exponential():
    for axis in (0.0, 0.3, math.pi / 2, 2.0):
        for angle in (math.pi, math.pi / 2, -math.pi / 2, 1.1):
            n = math.cos(axis) * X + math.sin(axis) * Y
            want = math.cos(angle / 2) * np.eye(2) - 1j * math.sin(angle / 2) * n
            assert np.allclose(rotation_matrix(axis, angle), want, atol=1e-14)


def test_pure_rotation_agrees_with_matrix():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        v /= np.linalg.norm(v)
        axis, angle = rng.uniform(0, 2 * math.pi, 2)
        st = QubitState(v[0], v[1])
        apply_rotation(st, axis, angle)
        assert np.allclose(st.vector(), rotation_matrix(axis, angle) @ v, atol=1e-14)


def test_x180_and_x90_populations():
    st = QubitState()
    apply_rotation(st, 0.0, math.pi)
    assert st.p1 == pytest.approx(1.0, abs=1e-15)
    st = QubitState()
    apply_rotation(st, 0.0, math.pi / 2)
    assert st.p1 == pytest.approx(0.5, abs=1e-15)


def test_carrier_turns_exact_over_long_runs():
    c = Carrier(-50e6, 5)
    # -50 MHz at 5 ns per cycle is -1/4 period per cycle
    assert c.turns(1) == 0.75
    assert c.turns(4) == 0.0
    assert c.turns(10**13 + 1) == 0.75
    assert c.turns(0, shift_ns=5) == 0.75
    assert Carrier(50e6).turns(0, shift_ns=5) == 0.25
    assert c.turns_at(7.5) == pytest.approx((-50e6 * 7.5e-9) % 1)


def test_density_relax_and_dephase():
    reg = DensityRegister(1)
    reg.apply_1q(rotation_matrix(0, math.pi), 0)
    reg.relax(0, 20000, 20000)
    assert reg.p1(0) == pytest.approx(math.exp(-1), abs=1e-14)
    reg = DensityRegister(1)
    reg.apply_1q(rotation_matrix(0, math.pi / 2), 0)
    p1, _, mu = measure(reg, levels=(0.1, 0.9))
    assert p1 == pytest.approx(0.5) and mu == pytest.approx(0.5)
    assert abs(reg.rho[0, 1]) < 1e-15  # coherence removed
    assert reg.trace == pytest.approx(1.0)


def test_trajectory_relax_matches_channel_on_average():
    rng = np.random.default_rng(11)
    n = 20000
    ones = 0
    for _ in range(n):
        st = QubitState(0j, 1 + 0j, t1_ns=20000)
        relax(st, 20000, rng)
        ones += measure(st, rng)[0]
    p = math.exp(-1)
    assert abs(ones / n - p) < 5 * math.sqrt(p * (1 - p) / n)


def test_trajectory_keeps_norm():
    rng = np.random.default_rng(0)
    st = QubitState(1 / math.sqrt(2) + 0j, 1j / math.sqrt(2), t1_ns=1000)
    for _ in range(50):
        relax(st, 37, rng)
        assert st.norm2 == pytest.approx(1.0, abs=1e-12)


def test_two_qubit_register():
    reg = TwoQubitRegister.from_qubits(QubitState(0j, 1 + 0j), QubitState())
    assert reg.p1(0) == pytest.approx(1) and reg.p1(1) == 0
    reg.apply_1q(rotation_matrix(0, math.pi), 1)
    reg.apply_cz()
    assert np.allclose(reg.psi, [0, 0, 0, 1j])  # -i|11> picks up the CZ sign
    with pytest.raises(QsimError):
        TwoQubitRegister([1, 0, 0, 0]).project(0, 1)


def test_fidelity_ignores_global_phase():
    v = np.array([0.6, 0.8j])
    assert fidelity(v, 1j * v) == pytest.approx(1.0)


def test_substream_rng_blocks_are_independent_of_history():
    a = SubstreamRNG(7, block_size=4)
    b = SubstreamRNG(7, block_size=4, block_offset=2)
    x = a.for_index(8).random()
    assert b.for_index(0).random() == x


def test_backend_pulse_overlap_is_a_fault():
    be = QuantumBackend("sample")
    g = Gate("rotation", 0.0, math.pi)
    be.apply_gate(g, (0,), 16, 0, 80, 20)
    with pytest.raises(QsimError, match="precedes"):
        be.apply_gate(g, (0,), 17, 0, 85, 20)
    be = QuantumBackend("sample", allow_overlap=True)
    be.apply_gate(g, (0,), 16, 0, 80, 20)
    be.apply_gate(g, (0,), 17, 0, 85, 20)


def test_backend_merge_and_state_vector():
    be = QuantumBackend("sample")
    be.apply_gate(Gate("rotation", 0.0, math.pi), (1,), 0, 0, 0, 20)
    assert np.allclose(be.state_vector((0, 1)), [0, -1j, 0, 0])
    be.apply_gate(Gate("cz"), (0, 1), 4, 0, 20, 40)
    assert fidelity(be.state_vector((0, 1)), [0, 1, 0, 0]) == pytest.approx(1)
    assert fidelity(be.state_vector((1, 0)), [0, 0, 1, 0]) == pytest.approx(1)


def test_expectation_backend_measure_is_mean():
    be = QuantumBackend("expectation")
    be.apply_gate(Gate("rotation", 0.0, math.pi / 2), (0,), 0, 0, 0, 20)
    p1, mu = be.measure(0, 20, (0.1, 0.9))
    assert p1 == pytest.approx(0.5) and mu == pytest.approx(0.5)
