"""Circuit simulation: gate kernels, symmetry sectors, nesting, sampling."""

import math

import numpy as np
import pytest

from aimsolve.hamiltonian import qubit_index
from aimsolve.model import AimModel
from aimsolve.pauli import PauliString, PauliSum
from aimsolve.statevector import (
    AnsatzCircuit,
    Gate,
    StateVector,
    apply_fermion_operator,
    apply_gate,
    build_excitation_ansatz,
    build_ground_ansatz,
    expectation,
    run_circuit,
    sample_group,
)


def occupations(state: StateVector):
    """(total_number, sz_doubled) expectation pair, exact."""
    probs = np.abs(state.amplitudes) ** 2
    idx = np.arange(probs.size)
    n_bath = state.n_qubits // 2 - 1
    total = np.zeros(probs.size)
    sz2 = np.zeros(probs.size)
    for site in range(n_bath + 1):
        up = (idx >> qubit_index(site, "up", n_bath)) & 1
        dn = (idx >> qubit_index(site, "down", n_bath)) & 1
        total += up + dn
        sz2 += up - dn
    return float(probs @ total), float(probs @ sz2)


def basis_state(n_qubits: int, index: int) -> StateVector:
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[index] = 1.0
    return StateVector(n_qubits, amps)


class TestGateKernels:
    def test_pauli_x_flips_target(self):
        state = apply_gate(basis_state(2, 0b00), Gate("pauli_x", (1,)))
        assert state.amplitudes[0b10] == pytest.approx(1.0)

    def test_half_filling_splits_a_fresh_pair(self):
        gate = Gate("half_filling", (0, 1), 0, frequencies=(1,))
        state = apply_gate(basis_state(2, 0b00), gate, math.pi / 2)
        # |00> -> cos(t/2)|10> (bit0 set) + sin(t/2)|01> (bit1 set)
        assert state.amplitudes[0b01] == pytest.approx(math.cos(math.pi / 4))
        assert state.amplitudes[0b10] == pytest.approx(math.sin(math.pi / 4))
        assert abs(state.norm - 1.0) < 1e-12

    def test_givens_rotates_single_occupation(self):
        gate = Gate("givens", (0, 1), 0, frequencies=(2,))
        theta = 0.3
        state = apply_gate(basis_state(2, 0b01), gate, theta)
        assert state.amplitudes[0b01] == pytest.approx(math.cos(theta))
        assert state.amplitudes[0b10] == pytest.approx(-math.sin(theta))
        # the reverse direction carries the opposite sign, as unitarity demands
        back = apply_gate(basis_state(2, 0b10), gate, theta)
        assert back.amplitudes[0b01] == pytest.approx(math.sin(theta))
        assert back.amplitudes[0b10] == pytest.approx(math.cos(theta))
        # doubly occupied and empty pairs are untouched
        for idx in (0b00, 0b11):
            fixed = apply_gate(basis_state(2, idx), gate, theta)
            assert fixed.amplitudes[idx] == pytest.approx(1.0)

    def test_controlled_phase_acts_on_double_occupation_only(self):
        gate = Gate("controlled_phase", (0, 1), 0, frequencies=(1,))
        theta = 1.1
        state = apply_gate(basis_state(2, 0b11), gate, theta)
        assert state.amplitudes[0b11] == pytest.approx(np.exp(1j * theta))
        for idx in (0b00, 0b01, 0b10):
            fixed = apply_gate(basis_state(2, idx), gate, theta)
            assert fixed.amplitudes[idx] == pytest.approx(1.0)

    def test_gate_validation(self):
        with pytest.raises(ValueError):
            Gate("unknown", (0,))
        with pytest.raises(ValueError):
            Gate("givens", (0,), 0, frequencies=(2,))
        with pytest.raises(ValueError):
            Gate("givens", (0, 1))  # missing slot
        with pytest.raises(ValueError):
            Gate("pauli_x", (0,), parameter_slot=0)
        with pytest.raises(ValueError):
            apply_gate(basis_state(2, 0), Gate("pauli_x", (0,)), 0.5)


@pytest.mark.parametrize("n_bath", [1, 3])
def test_ground_circuit_conserves_sector(n_bath):
    """Number and spin projection are pinned for every parameter draw."""
    circuit = build_ground_ansatz(n_bath)
    n_up, n_down = circuit.sector
    rng = np.random.default_rng(42)
    for _ in range(200):
        params = rng.uniform(-math.pi, math.pi, circuit.n_params)
        state = run_circuit(circuit, params)
        total, sz2 = occupations(state)
        assert total == pytest.approx(n_up + n_down, abs=1e-10)
        assert sz2 == pytest.approx(n_up - n_down, abs=1e-10)
        # sector purity: amplitudes vanish outside the (N, Sz) sector
        probs = np.abs(state.amplitudes) ** 2
        idx = np.nonzero(probs > 1e-14)[0]
        for i in idx:
            ups = sum(
                (int(i) >> qubit_index(site, "up", n_bath)) & 1 for site in range(n_bath + 1)
            )
            dns = sum(
                (int(i) >> qubit_index(site, "down", n_bath)) & 1 for site in range(n_bath + 1)
            )
            assert (ups, dns) == (n_up, n_down)


@pytest.mark.parametrize("kind", ["particle", "hole"])
@pytest.mark.parametrize("sz", [0.5, -0.5])
def test_excitation_circuit_sector(kind, sz):
    circuit = build_excitation_ansatz(3, kind, sz)
    n_up, n_down = circuit.sector
    assert n_up + n_down == 4 + (1 if kind == "particle" else -1)
    assert (n_up - n_down) / 2 == sz
    rng = np.random.default_rng(5)
    for _ in range(50):
        state = run_circuit(circuit, rng.uniform(-math.pi, math.pi, circuit.n_params))
        total, sz2 = occupations(state)
        assert total == pytest.approx(n_up + n_down, abs=1e-10)
        assert sz2 == pytest.approx(n_up - n_down, abs=1e-10)


def test_parameter_layout():
    for n_bath in (1, 3, 5):
        circuit = build_ground_ansatz(n_bath)
        assert circuit.n_params == 5 * n_bath
        assert circuit.n_qubits == 2 * (n_bath + 1)
        assert len(circuit.reference) == circuit.n_params
    with pytest.raises(ValueError):
        build_ground_ansatz(2)


def test_core_slot_frequencies():
    circuit = build_ground_ansatz(1)
    assert [circuit.slot_frequencies(s) for s in range(5)] == [
        (1,),
        (1,),
        (1,),
        (2,),
        (2,),
    ]


def test_shell_slot_frequencies_mixed():
    circuit = build_ground_ansatz(3)
    # ladder and refresh rotations see mixed pair occupation
    assert circuit.slot_frequencies(5) == (1, 2)
    assert circuit.slot_frequencies(7) == (1,)
    assert circuit.slot_frequencies(8) == (1, 2)


def test_zeroed_shells_nest_the_smaller_circuit():
    """Outer slots at zero reduce the larger circuit to the smaller one on
    the central pairs, with seeded outer occupations factored out."""
    inner = build_ground_ansatz(1)
    outer = build_ground_ansatz(3)
    rng = np.random.default_rng(9)
    core = rng.uniform(-1.0, 1.0, 5)
    inner_state = run_circuit(inner, core)
    outer_state = run_circuit(outer, np.concatenate([core, np.zeros(10)]))

    # map each nb=1 register index onto the nb=3 register, with the k=2
    # bath pair occupied by the shell seed gates and k=3 empty
    seeded = (1 << qubit_index(2, "up", 3)) | (1 << qubit_index(2, "down", 3))
    expected = np.zeros(outer_state.amplitudes.size, dtype=complex)
    for small_idx in range(inner_state.amplitudes.size):
        amp = inner_state.amplitudes[small_idx]
        if amp == 0:
            continue
        big_idx = seeded
        for site in range(2):
            for spin in ("up", "down"):
                if (small_idx >> qubit_index(site, spin, 1)) & 1:
                    big_idx |= 1 << qubit_index(site, spin, 3)
        expected[big_idx] = amp
    assert np.max(np.abs(outer_state.amplitudes - expected)) < 1e-12


def test_run_circuit_validates_parameter_shape():
    circuit = build_ground_ansatz(1)
    with pytest.raises(ValueError):
        run_circuit(circuit, np.zeros(4))


def test_expectation_against_dense():
    circuit = build_ground_ansatz(1)
    state = run_circuit(circuit, np.array(circuit.reference))
    obs = PauliSum.from_terms(
        4, [(0.7, PauliString.from_label("ZIII")), (0.3, PauliString.from_label("IZZI"))]
    )
    dense = obs.to_dense()
    direct = np.vdot(state.amplitudes, dense @ state.amplitudes).real
    assert expectation(state, obs) == pytest.approx(direct, abs=1e-12)
    with pytest.raises(ValueError):
        expectation(state, PauliSum.from_terms(4, [(1j, PauliString.from_label("XIII"))]))


def test_fermion_operator_changes_particle_number():
    circuit = build_ground_ansatz(1)
    state = run_circuit(circuit, np.array(circuit.reference))
    raised, norm = apply_fermion_operator(state, 0, "up", dagger=True)
    assert 0.0 < norm <= 1.0 + 1e-12
    total, _ = occupations(StateVector(4, raised.amplitudes / norm))
    assert total == pytest.approx(3.0, abs=1e-10)


class TestSampling:
    def test_single_string_unbiased_within_three_sigma(self):
        """Sampled <ZIII...> over many seeds stays within 3 sigma of exact."""
        circuit = build_ground_ansatz(1)
        state = run_circuit(circuit, np.array(circuit.reference))
        string = PauliString.from_label("IIIZ")  # impurity-up occupation
        exact = float(
            np.vdot(state.amplitudes, PauliSum.from_terms(4, [(1.0, string)]).to_dense() @ state.amplitudes).real
        )
        shots = 400
        n_seeds = 200
        estimates = [
            sample_group(state, [string], "ZZZZ", shots, (17, k))[string]
            for k in range(n_seeds)
        ]
        sigma = math.sqrt((1.0 - exact**2) / shots) / math.sqrt(n_seeds)
        assert abs(np.mean(estimates) - exact) < 3.0 * sigma

    def test_shared_shots_within_group(self):
        circuit = build_ground_ansatz(1)
        state = run_circuit(circuit, np.array(circuit.reference))
        strings = [PauliString.from_label("IIIZ"), PauliString.from_label("ZZII")]
        values = sample_group(state, strings, "ZZZZ", 100, 0)
        assert set(values) == set(strings)
        for v in values.values():
            assert -1.0 <= v <= 1.0

    def test_seed_determinism(self):
        circuit = build_ground_ansatz(1)
        state = run_circuit(circuit, np.array(circuit.reference))
        string = PauliString.from_label("IIZI")
        a = sample_group(state, [string], "ZZZZ", 50, (3, 1))[string]
        b = sample_group(state, [string], "ZZZZ", 50, (3, 1))[string]
        assert a == b

    def test_mismatched_basis_rejected(self):
        circuit = build_ground_ansatz(1)
        state = run_circuit(circuit, np.array(circuit.reference))
        with pytest.raises(ValueError):
            sample_group(state, [PauliString.from_label("XIII")], "ZZZZ", 10, 0)
        with pytest.raises(ValueError):
            sample_group(state, [PauliString.from_label("ZIII")], "ZZZZ", 0, 0)
