"""Classical simulator for a hybrid quantum-classical Anderson impurity solver."""

from .estimator import EstimateReport, MomentTables, estimate_observable, moments, shot_budget
from .exact import exact_greens, lanczos_ground, sector_basis, sparse_hamiltonian
from .greens import GreensConfig, GreensResult, impurity_greens, save_dos
from .hamiltonian import build_qubit_hamiltonian, group_commuting, hamiltonian_power
from .model import AimModel
from .pauli import PauliString, PauliSum
from .qcm import correction_record, cumulants, e_inf
from .statevector import AnsatzCircuit, StateVector, build_ground_ansatz, run_circuit
from .vqe import OptimizerConfig, VqeResult, solve_ground

__version__ = "0.1.0"

__all__ = [
    "AimModel",
    "AnsatzCircuit",
    "EstimateReport",
    "GreensConfig",
    "GreensResult",
    "MomentTables",
    "OptimizerConfig",
    "PauliString",
    "PauliSum",
    "StateVector",
    "VqeResult",
    "__version__",
    "build_ground_ansatz",
    "build_qubit_hamiltonian",
    "correction_record",
    "cumulants",
    "e_inf",
    "estimate_observable",
    "exact_greens",
    "group_commuting",
    "hamiltonian_power",
    "impurity_greens",
    "lanczos_ground",
    "moments",
    "run_circuit",
    "save_dos",
    "sector_basis",
    "shot_budget",
    "solve_ground",
    "sparse_hamiltonian",
]
