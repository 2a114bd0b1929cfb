"""Statevector simulation of number-conserving ansatz circuits.

Amplitude index bit q holds the occupation of qubit q (see module
``hamiltonian`` for the spin-orbital layout).  Circuits are built from a
small fixed gate set; every parameterized gate carries the trigonometric
frequencies of the energy as a function of its angle, which downstream
gradient code turns into exact shift rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Mapping

import numpy as np

from .hamiltonian import jordan_wigner_op, qubit_index
from .pauli import PauliString, PauliSum

GATE_KINDS = ("pauli_x", "half_filling", "givens", "controlled_phase")

# Kinds that carry an angle.  pauli_x is the only fixed gate.
_PARAMETERIZED = frozenset(GATE_KINDS) - {"pauli_x"}

NORM_TOL = 1e-10


@dataclass(frozen=True)
class Gate:
    """One circuit element.

    kind            one of GATE_KINDS
    targets         qubit indices (1 for pauli_x, 2 otherwise)
    parameter_slot  index into the circuit parameter vector, None for fixed
    frequencies     nonzero trig frequencies of E(theta) for this slot;
                    None for fixed gates
    """

    kind: str
    targets: tuple[int, ...]
    parameter_slot: int | None = None
    frequencies: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        want = 1 if self.kind == "pauli_x" else 2
        if len(self.targets) != want:
            raise ValueError(f"{self.kind} takes {want} target(s)")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("gate targets must be distinct")
        if self.kind in _PARAMETERIZED:
            if self.parameter_slot is None or self.frequencies is None:
                raise ValueError(f"{self.kind} requires a parameter slot and frequencies")
        elif self.parameter_slot is not None:
            raise ValueError("pauli_x takes no parameter")


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (1 << self.n_qubits,):
            raise ValueError("amplitude length must be 2**n_qubits")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero_state(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @cached_property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        if self.norm == 0.0:
            raise ZeroDivisionError("cannot normalize a zero state")
        return StateVector(self.n_qubits, self.amplitudes / self.norm)


@dataclass(frozen=True)
class AnsatzCircuit:
    """A gate list over a shared parameter vector.

    sector is the (n_up, n_down) particle content every prepared state has;
    reference is the parameter vector the optimizer jitters around.
    """

    n_qubits: int
    gates: tuple[Gate, ...]
    n_params: int
    sector: tuple[int, int]
    reference: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        slots = {g.parameter_slot for g in self.gates if g.parameter_slot is not None}
        if slots != set(range(self.n_params)):
            raise ValueError("every parameter slot must be referenced exactly by the gate list")
        for g in self.gates:
            if any(t < 0 or t >= self.n_qubits for t in g.targets):
                raise ValueError("gate target outside qubit register")
        if not self.reference:
            object.__setattr__(self, "reference", (0.0,) * self.n_params)
        elif len(self.reference) != self.n_params:
            raise ValueError("reference length must equal n_params")

    def slot_frequencies(self, slot: int) -> tuple[int, ...]:
        """Union of energy frequencies over gates reading the slot."""
        freqs: set[int] = set()
        for g in self.gates:
            if g.parameter_slot == slot:
                freqs.update(g.frequencies or ())
        if not freqs:
            raise ValueError(f"slot {slot} not referenced")
        return tuple(sorted(freqs))


@lru_cache(maxsize=None)
def _pair_indices(n_qubits: int, t0: int, t1: int) -> tuple[np.ndarray, ...]:
    """Index groups (i00, i01, i10, i11) by the (t0, t1) bit pattern."""
    idx = np.arange(1 << n_qubits)
    b0 = (idx >> t0) & 1
    b1 = (idx >> t1) & 1
    i00 = idx[(b0 == 0) & (b1 == 0)]
    return i00, i00 ^ (1 << t1), i00 ^ (1 << t0), i00 ^ (1 << t0) ^ (1 << t1)


def _apply_pauli_x(amps: np.ndarray, n_qubits: int, target: int) -> np.ndarray:
    out = np.empty_like(amps)
    idx = np.arange(amps.size)
    out[idx ^ (1 << target)] = amps
    return out


def _apply_half_filling(amps: np.ndarray, n_qubits: int, t0: int, t1: int, theta: float) -> np.ndarray:
    # |00> -> cos(t/2)|10> + sin(t/2)|01>; the complementary block is the
    # unitary completion |01> -> cos|01> - sin|10>, |10> -> |00>, |11> fixed.
    i00, i01, i10, i11 = _pair_indices(n_qubits, t0, t1)
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    out = amps.copy()
    a00, a01, a10 = amps[i00], amps[i01], amps[i10]
    out[i00] = a10
    out[i01] = s * a00 + c * a01
    out[i10] = c * a00 - s * a01
    return out


def _apply_givens(amps: np.ndarray, n_qubits: int, t0: int, t1: int, theta: float) -> np.ndarray:
    # Rotation by theta on span{|01>, |10>}; |00>, |11> fixed.
    _, i01, i10, _ = _pair_indices(n_qubits, t0, t1)
    c, s = math.cos(theta), math.sin(theta)
    out = amps.copy()
    a01, a10 = amps[i01], amps[i10]
    out[i01] = c * a01 - s * a10
    out[i10] = s * a01 + c * a10
    return out


def _apply_controlled_phase(amps: np.ndarray, n_qubits: int, t0: int, t1: int, theta: float) -> np.ndarray:
    idx = np.arange(amps.size)
    both = (((idx >> t0) & (idx >> t1)) & 1).astype(bool)
    out = amps.copy()
    out[both] = amps[both] * complex(math.cos(theta), math.sin(theta))
    return out


def apply_gate(state: StateVector, gate: Gate, theta: float | None = None) -> StateVector:
    if gate.kind == "pauli_x":
        if theta is not None:
            raise ValueError("pauli_x takes no angle")
        return StateVector(state.n_qubits, _apply_pauli_x(state.amplitudes, state.n_qubits, gate.targets[0]))
    if theta is None:
        raise ValueError(f"{gate.kind} requires an angle")
    kernel = {
        "half_filling": _apply_half_filling,
        "givens": _apply_givens,
        "controlled_phase": _apply_controlled_phase,
    }[gate.kind]
    return StateVector(state.n_qubits, kernel(state.amplitudes, state.n_qubits, *gate.targets, theta))


def run_circuit(circuit: AnsatzCircuit, params: np.ndarray) -> StateVector:
    params = np.asarray(params, dtype=float)
    if params.shape != (circuit.n_params,):
        raise ValueError(f"expected {circuit.n_params} parameters, got shape {params.shape}")
    state = StateVector.zero_state(circuit.n_qubits)
    for gate in circuit.gates:
        theta = None if gate.parameter_slot is None else float(params[gate.parameter_slot])
        state = apply_gate(state, gate, theta)
    if abs(state.norm - 1.0) > NORM_TOL:
        raise RuntimeError("circuit left the state unnormalized; gate kernel bug")
    return state


def _central_qubits(n_bath: int) -> tuple[int, int, int, int]:
    return (
        qubit_index(0, "up", n_bath),
        qubit_index(0, "down", n_bath),
        qubit_index(1, "up", n_bath),
        qubit_index(1, "down", n_bath),
    )


def _shell_gates(n_bath: int, first_slot: int) -> tuple[list[Gate], list[float]]:
    """Bath-extension shells k = 2..n_bath, five parameter slots each.

    Each shell seeds the new bath pair (X gates on even k keep the filling
    on target), ladders the new sites into the chain, then reopens the
    impurity-side correlations.  All shell gates are the identity at angle
    zero, so a circuit with outer slots zeroed reduces to the smaller one.
    """
    imp_up, imp_dn, b1_up, b1_dn = _central_qubits(n_bath)
    gates: list[Gate] = []
    reference: list[float] = []
    slot = first_slot
    for k in range(2, n_bath + 1):
        bk_up, bk_dn = qubit_index(k, "up", n_bath), qubit_index(k, "down", n_bath)
        pk_up, pk_dn = qubit_index(k - 1, "up", n_bath), qubit_index(k - 1, "down", n_bath)
        if k % 2 == 0:
            gates.append(Gate("pauli_x", (bk_up,)))
            gates.append(Gate("pauli_x", (bk_dn,)))
        gates.append(Gate("givens", (pk_up, bk_up), slot, frequencies=(1, 2)))
        gates.append(Gate("givens", (pk_dn, bk_dn), slot + 1, frequencies=(1, 2)))
        gates.append(Gate("controlled_phase", (imp_up, imp_dn), slot + 2, frequencies=(1,)))
        gates.append(Gate("givens", (imp_up, b1_up), slot + 3, frequencies=(1, 2)))
        gates.append(Gate("givens", (imp_dn, b1_dn), slot + 4, frequencies=(1, 2)))
        reference.extend([0.0] * 5)
        slot += 5
    return gates, reference


def build_ground_ansatz(n_bath: int) -> AnsatzCircuit:
    """Half-filled S_z = 0 preparation circuit.

    Core: one half-filling gate per spin block distributes a single electron
    over the impurity/first-bath pair, a controlled phase correlates the two
    blocks, and one Givens rotation per block tunes the orbital character.
    The reference point (pi/2, pi/2, pi, 0, 0) is the symmetrized singly
    occupied configuration with a singlet-favoring phase.
    """
    if n_bath < 1 or n_bath % 2 == 0:
        raise ValueError("n_bath must be a positive odd integer")
    n_qubits = 2 * (n_bath + 1)
    imp_up, imp_dn, b1_up, b1_dn = _central_qubits(n_bath)
    gates = [
        Gate("half_filling", (imp_up, b1_up), 0, frequencies=(1,)),
        Gate("half_filling", (imp_dn, b1_dn), 1, frequencies=(1,)),
        Gate("controlled_phase", (imp_up, imp_dn), 2, frequencies=(1,)),
        Gate("givens", (imp_up, b1_up), 3, frequencies=(2,)),
        Gate("givens", (imp_dn, b1_dn), 4, frequencies=(2,)),
    ]
    reference = [math.pi / 2, math.pi / 2, math.pi, 0.0, 0.0]
    shell, shell_ref = _shell_gates(n_bath, 5)
    half = (n_bath + 1) // 2
    return AnsatzCircuit(
        n_qubits=n_qubits,
        gates=tuple(gates + shell),
        n_params=5 * n_bath,
        sector=(half, half),
        reference=tuple(reference + shell_ref),
    )


def build_excitation_ansatz(n_bath: int, kind: str, sz: float) -> AnsatzCircuit:
    """Charged-sector circuit sharing the ground ansatz parameter layout.

    kind is "particle" (one electron added) or "hole" (one removed); sz is
    the total spin projection +0.5 or -0.5 of the prepared sector.  The core
    block replaces the half-filling gates with explicit occupations, keeps
    one active Givens rotation on the excitation's spin block, and reads the
    remaining slots through gates that act trivially there, so parameter
    vectors are interchangeable with the ground circuit's.
    """
    if n_bath < 1 or n_bath % 2 == 0:
        raise ValueError("n_bath must be a positive odd integer")
    if kind not in ("particle", "hole"):
        raise ValueError("kind must be 'particle' or 'hole'")
    if sz not in (0.5, -0.5):
        raise ValueError("sz must be +0.5 or -0.5")
    n_qubits = 2 * (n_bath + 1)
    imp_up, imp_dn, b1_up, b1_dn = _central_qubits(n_bath)
    up_pair, dn_pair = (imp_up, b1_up), (imp_dn, b1_dn)

    # The active spin block holds the odd electron (hole) or the odd vacancy
    # (particle); the other block is empty (hole) or full (particle), where
    # Givens rotations act as the identity and park the unused slots.
    active_up = (kind == "hole") == (sz == 0.5)
    active_pair, idle_pair = (up_pair, dn_pair) if active_up else (dn_pair, up_pair)
    active_slot, idle_slot = (3, 4) if active_up else (4, 3)

    gates: list[Gate] = []
    if kind == "hole":
        gates.append(Gate("pauli_x", (active_pair[0],)))
    else:
        gates.append(Gate("pauli_x", (idle_pair[1],)))
        gates.append(Gate("pauli_x", (idle_pair[0],)))
        gates.append(Gate("pauli_x", (active_pair[0],)))
    gates.append(Gate("givens", idle_pair, 0, frequencies=(2,)))
    gates.append(Gate("givens", idle_pair, 1, frequencies=(2,)))
    gates.append(Gate("controlled_phase", (imp_up, imp_dn), 2, frequencies=(1,)))
    gates.append(Gate("givens", idle_pair, idle_slot, frequencies=(2,)))
    gates.append(Gate("givens", active_pair, active_slot, frequencies=(2,)))

    shell, _ = _shell_gates(n_bath, 5)
    extra = (n_bath - 1) // 2  # electrons per spin block added by shell X gates
    if kind == "hole":
        core_up, core_dn = (1, 0) if active_up else (0, 1)
    else:
        # the active block holds the odd electron, the idle block is full
        core_up, core_dn = (1, 2) if active_up else (2, 1)
    n_up, n_dn = core_up + extra, core_dn + extra
    return AnsatzCircuit(
        n_qubits=n_qubits,
        gates=tuple(gates + shell),
        n_params=5 * n_bath,
        sector=(n_up, n_dn),
        reference=build_ground_ansatz(n_bath).reference,
    )


def expectation(state: StateVector, observable: PauliSum) -> float:
    if observable.n_qubits != state.n_qubits:
        raise ValueError("observable and state qubit counts differ")
    if not observable.is_hermitian():
        raise ValueError("expectation requires a Hermitian observable")
    value = np.vdot(state.amplitudes, observable.apply(state.amplitudes))
    return float(value.real)


def apply_fermion_operator(
    state: StateVector, site: int, spin: str, dagger: bool
) -> tuple[StateVector, float]:
    """Apply the fermionic mode operator; returns (unnormalized state, norm)."""
    n_bath = state.n_qubits // 2 - 1
    op = jordan_wigner_op(site, spin, dagger, n_bath)
    amps = op.apply(state.amplitudes)
    out = StateVector(state.n_qubits, amps)
    return out, out.norm

def _rotate_to_measurement_basis(amps: np.ndarray, n_qubits: int, basis: str) -> np.ndarray:
    # basis is most-significant-qubit first, matching PauliString labels.
    out = amps.copy()
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    idx = np.arange(amps.size)
    for q in range(n_qubits):
        letter = basis[n_qubits - 1 - q]
        if letter in ("I", "Z"):
            continue
        sel0 = idx[(idx >> q) & 1 == 0]
        sel1 = sel0 ^ (1 << q)
        a0, a1 = out[sel0].copy(), out[sel1].copy()
        if letter == "X":  # Hadamard maps the X basis onto Z
            out[sel0] = (a0 + a1) * inv_sqrt2
            out[sel1] = (a0 - a1) * inv_sqrt2
        elif letter == "Y":  # Rx(pi/2) maps the Y basis onto Z
            out[sel0] = (a0 - 1j * a1) * inv_sqrt2
            out[sel1] = (a1 - 1j * a0) * inv_sqrt2
        else:
            raise ValueError(f"invalid basis letter {letter!r}")
    return out


def sample_group(
    state: StateVector,
    strings: Iterable[PauliString],
    basis: str,
    shots: int,
    rng_seed,
) -> Mapping[PauliString, float]:
    """Estimate every string in one qubit-wise commuting group from shared shots.

    The state is rotated into the group's product measurement basis, bit
    strings are drawn from the exact distribution, and each Pauli string is
    read off as the parity of the sampled bits on its support.
    """
    strings = tuple(strings)
    if shots < 1:
        raise ValueError("shots must be a positive integer")
    if len(basis) != state.n_qubits:
        raise ValueError("basis length must equal n_qubits")
    for s in strings:
        for q in range(state.n_qubits):
            letter = s.letter(q)
            if letter != "I" and letter != basis[state.n_qubits - 1 - q]:
                raise ValueError("string is not diagonal in the group basis")
    rotated = _rotate_to_measurement_basis(state.amplitudes, state.n_qubits, basis)
    probs = np.abs(rotated) ** 2
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError("state must be normalized to sample")
    cumulative = np.cumsum(probs / total)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(rng_seed)))
    draws = np.searchsorted(cumulative, rng.random(shots), side="right")
    draws = np.minimum(draws, probs.size - 1)
    estimates = {}
    for s in strings:
        mask = s.x | s.z
        parity = np.bitwise_count(draws & mask) & 1
        estimates[s] = float(1.0 - 2.0 * parity.mean())
    return estimates
