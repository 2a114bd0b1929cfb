"""Impurity Green's function from two continued-fraction branches.

The particle branch propagates an added electron, the hole branch a removed
one; each is a Jacobi continued fraction whose coefficients come either from
moment cumulants of a prepared excitation state or from an exact tridiagonal.
The local density of states is the negative imaginary part of the spin trace.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import EstimateReport, MomentTables, moments as estimate_moments
from .hamiltonian import build_qubit_hamiltonian
from .model import AimModel
from .qcm import MomentDomainError, cumulants, lanczos_from_cumulants
from .statevector import (
    StateVector,
    apply_fermion_operator,
    build_excitation_ansatz,
    expectation,
    run_circuit,
)

BRANCHES = ("particle", "hole")
EMPTY_WEIGHT_TOL = 1e-12
LADDER_TERMINATION_TOL = 1e-12
NEGATIVE_B_SQ_TOL = -1e-9
FIDELITY_FLOOR = 0.999


@dataclass(frozen=True)
class ContinuedFraction:
    """One branch of the impurity Green's function.

    a holds the diagonal coefficients a_0..a_{L-1}; b_sq the squared
    off-diagonals b_1^2..b_{L-1}^2.  weight is the squared norm of the
    unnormalized excitation, e0 the reference ground energy.  An empty
    coefficient list marks a branch that contributes nothing.
    """

    a: tuple[float, ...]
    b_sq: tuple[float, ...]
    branch: str
    weight: float
    e0: float

    def __post_init__(self) -> None:
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        if self.weight < 0.0:
            raise ValueError("weight must be nonnegative")
        if len(self.b_sq) != max(len(self.a) - 1, 0):
            raise ValueError("need exactly one b^2 between consecutive a coefficients")
        if any(b < NEGATIVE_B_SQ_TOL for b in self.b_sq):
            raise ValueError("negative squared off-diagonal coefficient")

    @property
    def depth(self) -> int:
        return len(self.a)


def continued_fraction_eval(cf: ContinuedFraction, omega: complex) -> complex:
    """Evaluate one branch at a complex frequency with Im(omega) > 0."""
    omega = complex(omega)
    if omega.imag <= 0.0:
        raise ValueError("evaluation requires Im(omega) > 0")
    if cf.weight < EMPTY_WEIGHT_TOL or not cf.a:
        return 0.0 + 0.0j
    sign = -1.0 if cf.branch == "particle" else 1.0
    base = omega + (cf.e0 if cf.branch == "particle" else -cf.e0)
    denom = base + sign * cf.a[-1]
    for level in range(len(cf.a) - 2, -1, -1):
        denom = (base + sign * cf.a[level]) - cf.b_sq[level] / denom
    return cf.weight / denom


@dataclass(frozen=True)
class DosCurve:
    omega: np.ndarray
    density: np.ndarray
    eta: float

    def integrate(self) -> float:
        return float(np.trapezoid(self.density, self.omega))


def dos(greens_by_spin: dict[str, np.ndarray], omega: np.ndarray, eta: float) -> DosCurve:
    total = np.zeros(len(omega), dtype=complex)
    for values in greens_by_spin.values():
        total = total + np.asarray(values)
    return DosCurve(np.asarray(omega, dtype=float), -np.imag(total) / math.pi, eta)


@dataclass(frozen=True)
class ExcitationResult:
    state: StateVector | None
    weight: float
    fidelity: float | None
    method: str
    empty: bool


def _excitation_sz(spin: str, kind: str) -> float:
    # adding an up electron raises S_z; removing one lowers it
    delta = 0.5 if spin == "up" else -0.5
    return delta if kind == "particle" else -delta


def excitation_state(
    ground: StateVector,
    spin: str,
    kind: str,
    method: str = "operator",
    ground_params: np.ndarray | None = None,
    fidelity_floor: float = FIDELITY_FLOOR,
) -> ExcitationResult:
    """Prepare the normalized single-excitation state and its spectral weight.

    The operator route applies the impurity creation/annihilation operator to
    the ground state.  The ansatz route runs the charged-sector circuit at
    pi minus the ground parameters and keeps it only when its overlap with
    the operator state clears fidelity_floor; the weight always comes from
    the operator bookkeeping.
    """
    if spin not in ("up", "down"):
        raise ValueError("spin must be 'up' or 'down'")
    if kind not in BRANCHES:
        raise ValueError(f"kind must be one of {BRANCHES}")
    if method not in ("operator", "ansatz"):
        raise ValueError("method must be 'operator' or 'ansatz'")
    raw, norm = apply_fermion_operator(ground, 0, spin, dagger=(kind == "particle"))
    weight = norm * norm
    if weight < EMPTY_WEIGHT_TOL:
        return ExcitationResult(None, 0.0, None, "operator", True)
    reference = StateVector(raw.n_qubits, raw.amplitudes / norm)
    if method == "operator":
        return ExcitationResult(reference, weight, None, "operator", False)
    if ground_params is None:
        raise ValueError("ansatz method requires the optimized ground parameters")
    n_bath = ground.n_qubits // 2 - 1
    circuit = build_excitation_ansatz(n_bath, kind, _excitation_sz(spin, kind))
    prepared = run_circuit(circuit, math.pi - np.asarray(ground_params, dtype=float))
    fidelity = float(abs(np.vdot(prepared.amplitudes, reference.amplitudes)) ** 2)
    if fidelity >= fidelity_floor:
        return ExcitationResult(prepared, weight, fidelity, "ansatz", False)
    return ExcitationResult(reference, weight, fidelity, "operator_fallback", False)


@dataclass(frozen=True)
class BranchResult:
    fraction: ContinuedFraction
    reports: tuple[EstimateReport, ...]
    flags: tuple[str, ...]


def branch_coefficients_moments(
    state: StateVector | None,
    hamiltonian,
    *,
    branch: str,
    weight: float,
    e0: float,
    system_size_n: int,
    depth: int = 2,
    mode: str = "exact",
    shots_schedule: list[int] | None = None,
    rng_seed=0,
    tables: MomentTables | None = None,
) -> BranchResult:
    """Continued-fraction coefficients from four moments of the branch state.

    The tridiagonal is the leading 1/N cumulant expansion, truncated early
    when the variance closes the ladder or sampling noise drives a squared
    off-diagonal negative (each truncation is flagged).
    """
    if depth < 1:
        raise ValueError("depth must be a positive integer")
    if state is None or weight < EMPTY_WEIGHT_TOL:
        empty = ContinuedFraction((), (), branch, 0.0, e0)
        return BranchResult(empty, (), ("empty_branch",))
    reports = tuple(
        estimate_moments(state, hamiltonian, 4, mode, shots_schedule, rng_seed, tables)
    )
    cums = cumulants(tuple(r.value for r in reports), system_size_n)
    flags: list[str] = []
    a_coeffs = [cums.c1]
    b_coeffs: list[float] = []
    if cums.c2 <= LADDER_TERMINATION_TOL:
        flags.append("variance_clamped" if cums.c2 < 0.0 else "ladder_terminated")
    else:
        for level in range(1, depth):
            if level == 1:
                # First rung of the ladder: a1 = c1 + c3/c2 and b1^2 = c2 are
                # exact cumulant identities, so the default depth-2 fraction
                # carries no system-size truncation error.  The 1/N expansion
                # only enters the flagged deeper rungs below.
                a_next, b_sq = cums.c1 + cums.c3 / cums.c2, cums.c2
            else:
                a_next, b_sq = lanczos_from_cumulants(cums, level)
            if b_sq < 0.0:
                flags.append("ladder_truncated")
                break
            if b_sq < LADDER_TERMINATION_TOL:
                flags.append("ladder_terminated")
                break
            a_coeffs.append(a_next)
            b_coeffs.append(b_sq)
    fraction = ContinuedFraction(tuple(a_coeffs), tuple(b_coeffs), branch, weight, e0)
    return BranchResult(fraction, reports, tuple(flags))


@dataclass(frozen=True)
class GreensConfig:
    depth: int = 2
    eta: float = 0.05
    n_omega: int = 801
    omega_span: float | None = None  # defaults to hubbard_u + 6*hybridization
    method: str = "operator"
    moments_mode: str = "exact"
    shots_schedule: list[int] | None = None
    fidelity_floor: float = FIDELITY_FLOOR


def default_omega_grid(model: AimModel, n_points: int = 801, span: float | None = None) -> np.ndarray:
    if span is None:
        span = model.hubbard_u + 6.0 * model.hybridization
    return np.linspace(-span, span, n_points)


@dataclass(frozen=True)
class GreensResult:
    omega: np.ndarray
    greens: dict[str, np.ndarray]
    fractions: dict[tuple[str, str], ContinuedFraction]
    curve: DosCurve
    e0: float
    records: dict = field(default_factory=dict)


def impurity_greens(
    model: AimModel,
    ground: StateVector,
    e0: float | None = None,
    ground_params: np.ndarray | None = None,
    config: GreensConfig = GreensConfig(),
    rng_seed=0,
    tables: MomentTables | None = None,
) -> GreensResult:
    """Both spins' impurity Green's function on the default frequency grid."""
    h = build_qubit_hamiltonian(model)
    if e0 is None:
        e0 = expectation(ground, h)
    if tables is None:
        # Four branch states share the same Hamiltonian powers.
        tables = MomentTables.from_hamiltonian(h, 4)
    omega = default_omega_grid(model, config.n_omega, config.omega_span)
    fractions: dict[tuple[str, str], ContinuedFraction] = {}
    records: dict = {"branches": {}}
    greens_by_spin: dict[str, np.ndarray] = {}
    seed_base = (rng_seed,) if isinstance(rng_seed, int) else tuple(rng_seed)
    for spin_index, spin in enumerate(("up", "down")):
        total = np.zeros(len(omega), dtype=complex)
        for branch_index, branch in enumerate(BRANCHES):
            exc = excitation_state(
                ground, spin, branch, config.method, ground_params, config.fidelity_floor
            )
            result = branch_coefficients_moments(
                exc.state,
                h,
                branch=branch,
                weight=exc.weight,
                e0=e0,
                system_size_n=model.n_qubits,
                depth=config.depth,
                mode=config.moments_mode,
                shots_schedule=config.shots_schedule,
                rng_seed=seed_base + (spin_index, branch_index),
                tables=tables,
            )
            fractions[(spin, branch)] = result.fraction
            records["branches"][f"{spin}_{branch}"] = {
                "weight": exc.weight,
                "method": exc.method,
                "fidelity": exc.fidelity,
                "flags": list(result.flags),
                "total_shots": sum(r.total_shots for r in result.reports),
                "moments": [r.value for r in result.reports],
            }
            values = np.array(
                [continued_fraction_eval(result.fraction, w + 1j * config.eta) for w in omega]
            )
            total = total + values
        greens_by_spin[spin] = total
    curve = dos(greens_by_spin, omega, config.eta)
    return GreensResult(omega, greens_by_spin, fractions, curve, float(e0), records)


def save_dos(curve: DosCurve, csv_path: str | Path, metadata: dict | None = None) -> None:
    """Write the density of states as CSV plus a JSON sidecar of provenance."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["omega", "dos"])
        for w, d in zip(curve.omega, curve.density):
            writer.writerow([repr(float(w)), repr(float(d))])
    sidecar = {"eta": curve.eta, "n_points": len(curve.omega), "integral": curve.integrate()}
    if metadata:
        sidecar.update(metadata)
    with open(csv_path.with_suffix(".json"), "w") as handle:
        json.dump(sidecar, handle, indent=2, sort_keys=True)
        handle.write("\n")
