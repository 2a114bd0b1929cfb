"""Continued fractions, excitation preparation, and spectral curves."""

import json
import math

import numpy as np
import pytest

from aimsolve.exact import (
    apply_impurity_operator,
    embed_in_register,
    exact_greens,
    haydock_tridiagonal,
    lanczos_ground,
    sector_basis,
    sparse_hamiltonian,
)
from aimsolve.greens import (
    BRANCHES,
    ContinuedFraction,
    GreensConfig,
    branch_coefficients_moments,
    continued_fraction_eval,
    dos,
    excitation_state,
    impurity_greens,
    save_dos,
)
from aimsolve.hamiltonian import build_qubit_hamiltonian, qubit_index
from aimsolve.model import AimModel
from aimsolve.statevector import StateVector
from aimsolve.vqe import OptimizerConfig, solve_ground


@pytest.fixture(scope="module")
def model1():
    return AimModel.particle_hole_symmetric(n_bath=1, hubbard_u=2.0)


@pytest.fixture(scope="module")
def exact_ground(model1):
    half = model1.n_sites // 2
    basis = sector_basis(model1, half, half)
    e0, psi0 = lanczos_ground(sparse_hamiltonian(model1, basis), seed=0)
    state = StateVector(model1.n_qubits, embed_in_register(basis, psi0, model1.n_bath))
    return e0, psi0, basis, state


def test_single_pole_evaluation_conventions():
    """A depth-1 particle fraction is w / (omega + i eta + e0 - a0): the pole
    sits at the excitation energy a0 - e0.  The hole branch mirrors it."""
    eta = 0.1
    particle = ContinuedFraction((1.5,), (), "particle", 0.7, -2.0)
    z = 0.3 + 1j * eta
    assert continued_fraction_eval(particle, z) == pytest.approx(0.7 / (z - 2.0 - 1.5))
    hole = ContinuedFraction((1.5,), (), "hole", 0.7, -2.0)
    assert continued_fraction_eval(hole, z) == pytest.approx(0.7 / (z + 2.0 + 1.5))
    # peak location on a fine grid
    omega = np.linspace(-6, 6, 4801)
    values = np.array([continued_fraction_eval(particle, w + 1j * eta) for w in omega])
    assert omega[np.argmax(-values.imag)] == pytest.approx(1.5 - (-2.0), abs=0.01)


def test_depth_two_evaluation_matches_hand_expansion():
    cf = ContinuedFraction((0.4, 1.9), (0.36,), "particle", 1.0, -1.0)
    z = 0.2 + 0.05j
    base = z + cf.e0
    expected = 1.0 / ((base - 0.4) - 0.36 / (base - 1.9))
    assert continued_fraction_eval(cf, z) == pytest.approx(expected)


def test_evaluation_requires_upper_half_plane():
    cf = ContinuedFraction((0.0,), (), "particle", 1.0, 0.0)
    for bad in (0.5, 0.5 - 0.01j):
        with pytest.raises(ValueError):
            continued_fraction_eval(cf, bad)


def test_fraction_validation():
    with pytest.raises(ValueError):
        ContinuedFraction((0.0,), (), "sideways", 1.0, 0.0)
    with pytest.raises(ValueError):
        ContinuedFraction((0.0,), (), "particle", -1.0, 0.0)
    with pytest.raises(ValueError):
        ContinuedFraction((0.0, 1.0), (), "particle", 1.0, 0.0)
    with pytest.raises(ValueError):
        ContinuedFraction((0.0, 1.0), (-0.5,), "particle", 1.0, 0.0)
    empty = ContinuedFraction((), (), "hole", 0.0, 0.0)
    assert continued_fraction_eval(empty, 1j) == 0.0


def test_dos_is_minus_imag_over_pi():
    omega = np.linspace(-1, 1, 5)
    g = {"up": np.full(5, -1j), "down": np.full(5, -2j)}
    curve = dos(g, omega, 0.05)
    assert curve.density == pytest.approx(np.full(5, 3.0 / math.pi))


def test_operator_excitation_weights_at_half_filling(exact_ground, model1):
    """Half filling splits the spectral weight evenly over all four branches."""
    _, _, _, state = exact_ground
    total = 0.0
    for spin in ("up", "down"):
        for kind in BRANCHES:
            result = excitation_state(state, spin, kind)
            assert not result.empty
            assert result.method == "operator"
            assert result.weight == pytest.approx(0.5, abs=1e-9)
            assert result.state.norm == pytest.approx(1.0, abs=1e-12)
            total += result.weight
    assert total == pytest.approx(model1.n_sites / 2.0 * 2.0, abs=1e-9)


def test_excitation_argument_validation(exact_ground):
    _, _, _, state = exact_ground
    with pytest.raises(ValueError):
        excitation_state(state, "left", "particle")
    with pytest.raises(ValueError):
        excitation_state(state, "up", "wave")
    with pytest.raises(ValueError):
        excitation_state(state, "up", "particle", method="teleport")
    with pytest.raises(ValueError):
        excitation_state(state, "up", "particle", method="ansatz")  # params missing


def test_ansatz_route_records_fallbacks(model1):
    """The circuit route keeps its state only above the fidelity floor and
    otherwise falls back to the operator state, recording the overlap."""
    result = solve_ground(model1, OptimizerConfig(method="lbfgsb"), seed=0)
    from aimsolve.statevector import build_ground_ansatz, run_circuit

    ground = run_circuit(build_ground_ansatz(1), np.array(result.best_params))
    for spin in ("up", "down"):
        for kind in BRANCHES:
            exc = excitation_state(
                ground, spin, kind, method="ansatz", ground_params=np.array(result.best_params)
            )
            assert exc.method in ("ansatz", "operator_fallback")
            assert exc.fidelity is not None and 0.0 <= exc.fidelity <= 1.0 + 1e-12
            if exc.method == "ansatz":
                assert exc.fidelity >= 0.999


def test_empty_branch_is_flagged(model1):
    # impurity up already occupied: adding another up electron annihilates
    occupied = np.zeros(1 << model1.n_qubits, dtype=complex)
    occupied[1 << qubit_index(0, "up", model1.n_bath)] = 1.0
    state = StateVector(model1.n_qubits, occupied)
    exc = excitation_state(state, "up", "particle")
    assert exc.empty and exc.state is None and exc.weight == 0.0
    h = build_qubit_hamiltonian(model1)
    branch = branch_coefficients_moments(
        exc.state, h, branch="particle", weight=exc.weight, e0=0.0, system_size_n=4
    )
    assert branch.flags == ("empty_branch",)
    assert branch.fraction.depth == 0


def test_moment_ladder_reproduces_haydock_coefficients(exact_ground, model1):
    """Depth 2 from moments must equal the Krylov tridiagonal: both rungs
    are exact cumulant identities, no expansion error allowed."""
    e0, psi0, basis, state = exact_ground
    h_qubit = build_qubit_hamiltonian(model1)
    half = model1.n_sites // 2
    dst = sector_basis(model1, half + 1, half)
    seeded = apply_impurity_operator(basis, dst, psi0, "up", dagger=True)
    norm = np.linalg.norm(seeded)
    a_ref, b_ref = haydock_tridiagonal(sparse_hamiltonian(model1, dst), seeded / norm)

    exc = excitation_state(state, "up", "particle")
    branch = branch_coefficients_moments(
        exc.state,
        h_qubit,
        branch="particle",
        weight=exc.weight,
        e0=e0,
        system_size_n=model1.n_qubits,
        depth=2,
    )
    assert branch.flags == ()
    assert branch.fraction.a == pytest.approx(tuple(a_ref[:2]), abs=1e-9)
    assert branch.fraction.b_sq == pytest.approx((b_ref[0] ** 2,), abs=1e-9)


def test_impurity_greens_from_exact_state_matches_reference(exact_ground, model1):
    """One bath site keeps the charged sectors two-dimensional, so the
    depth-2 ladder closes the fraction and the quantum route is exact."""
    e0, _, _, state = exact_ground
    quantum = impurity_greens(model1, state, e0=e0)
    reference = exact_greens(model1)
    for key, fraction in reference.fractions.items():
        computed = quantum.fractions[key]
        assert computed.a == pytest.approx(fraction.a, abs=1e-8)
        assert computed.b_sq == pytest.approx(fraction.b_sq, abs=1e-8)
        assert computed.weight == pytest.approx(fraction.weight, abs=1e-9)
    assert np.max(np.abs(quantum.curve.density - reference.curve.density)) < 1e-7
    # frozen coefficients for this model, independently tabulated
    up_particle = quantum.fractions[("up", "particle")]
    assert up_particle.a == pytest.approx((-1.34887, 0.34887), abs=1e-4)
    assert up_particle.b_sq == pytest.approx((0.52941,), abs=1e-4)
    assert e0 == pytest.approx(-2.5615528128088307, abs=1e-9)


def test_impurity_greens_curve_properties(exact_ground, model1):
    e0, _, _, state = exact_ground
    result = impurity_greens(model1, state, e0=e0)
    density = result.curve.density
    assert np.all(density > -1e-12)
    assert density == pytest.approx(density[::-1], abs=1e-8)
    assert result.greens["up"] == pytest.approx(result.greens["down"], abs=1e-9)
    assert result.curve.integrate() == pytest.approx(2.0, rel=0.02)
    for record in result.records["branches"].values():
        assert record["total_shots"] == 0
        assert record["flags"] == []


def test_branch_depth_validation(exact_ground, model1):
    e0, _, _, state = exact_ground
    h = build_qubit_hamiltonian(model1)
    exc = excitation_state(state, "up", "particle")
    with pytest.raises(ValueError):
        branch_coefficients_moments(
            exc.state, h, branch="particle", weight=exc.weight, e0=e0,
            system_size_n=4, depth=0,
        )


def test_save_dos_round_trip(tmp_path, exact_ground, model1):
    e0, _, _, state = exact_ground
    curve = impurity_greens(model1, state, e0=e0).curve
    target = tmp_path / "dos.csv"
    save_dos(curve, target, metadata={"label": "check"})
    rows = target.read_text().strip().splitlines()
    assert rows[0] == "omega,dos"
    omega = np.array([float(r.split(",")[0]) for r in rows[1:]])
    density = np.array([float(r.split(",")[1]) for r in rows[1:]])
    assert omega == pytest.approx(curve.omega, abs=0)
    assert density == pytest.approx(curve.density, abs=0)
    sidecar = json.loads((tmp_path / "dos.json").read_text())
    assert sidecar["label"] == "check"
    assert sidecar["eta"] == curve.eta
    assert sidecar["n_points"] == len(curve.omega)
    assert sidecar["integral"] == pytest.approx(curve.integrate())
