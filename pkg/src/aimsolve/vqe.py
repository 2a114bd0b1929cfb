"""Variational ground-state search with native optimizers.

Three methods share one cost-tallied objective: a simplex/linear-model
search (no gradients), Adam, and a bounded limited-memory BFGS, the latter
two driven by exact parameter-shift gradients assembled from each gate's
frequency metadata.  Sampled-mode runs are deterministic in (config, seed):
every estimate derives its stream from (seed, evaluation index, group).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .estimator import EstimateReport, estimate_observable
from .hamiltonian import CommutingGroups, build_qubit_hamiltonian, group_commuting
from .model import AimModel
from .pauli import PauliSum
from .statevector import AnsatzCircuit, build_ground_ansatz, run_circuit

INIT_JITTER = 0.75

# Exact two- and four-point shift rules keyed by the gate's frequency set.
_SQ2 = math.sqrt(2.0)
_SHIFT_RULES: dict[tuple[int, ...], tuple[tuple[float, float], ...]] = {
    (1,): ((math.pi / 2, 0.5), (-math.pi / 2, -0.5)),
    (2,): ((math.pi / 4, 1.0), (-math.pi / 4, -1.0)),
    (1, 2): (
        (math.pi / 4, (1.0 + 1.0 / _SQ2) / 2.0),
        (-math.pi / 4, -(1.0 + 1.0 / _SQ2) / 2.0),
        (3.0 * math.pi / 4, (1.0 / _SQ2 - 1.0) / 2.0),
        (-3.0 * math.pi / 4, -(1.0 / _SQ2 - 1.0) / 2.0),
    ),
}


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "lbfgsb"  # cobyla | adam | lbfgsb
    max_evals: int | None = None  # None: 400 * n_params
    energy_tol: float = 1e-6
    grad_tol: float = 1e-9
    cobyla_rho0: float = math.pi
    cobyla_rho_end: float = 1e-6
    adam_lr: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    adam_max_steps: int = 2000
    lbfgs_memory: int = 10
    lbfgs_bound: float = 2.0 * math.pi
    armijo_c1: float = 1e-4
    smoothing_window: int = 5  # sampled-mode convergence / best tracking
    plateau_steps: int = 3  # consecutive sub-tol improvements before stopping
    plateau_grad_tol: float = 1e-4  # stationarity required for a plateau stop

    def __post_init__(self) -> None:
        if self.method not in ("cobyla", "adam", "lbfgsb"):
            raise ValueError("method must be 'cobyla', 'adam', or 'lbfgsb'")


@dataclass(frozen=True)
class VqeResult:
    """Outcome of one optimization run.

    best_energy is the lowest smoothed trajectory energy (window 1 in exact
    mode, so the plain minimum); energy_history records trajectory
    evaluations only, while the tallies count every estimator call
    including gradient shifts and line-search probes.
    """

    best_params: tuple[float, ...]
    best_energy: float
    energy_history: tuple[float, ...]
    n_evaluations: int
    circuit_executions: int
    total_shots: int
    converged: bool
    termination: str
    diagnostics: dict = field(default_factory=dict)


class BudgetExhausted(Exception):
    pass


class NonFiniteEnergy(Exception):
    pass


class EnergyEvaluator:
    """Cost-tallied energy objective for one (circuit, Hamiltonian) pair.

    Exact mode adds one circuit execution per call; sampled mode adds one
    per measurement group and shots accordingly.
    """

    def __init__(
        self,
        circuit: AnsatzCircuit,
        hamiltonian: PauliSum,
        groups: CommutingGroups | None = None,
        mode: str = "exact",
        shots_per_group: int | None = None,
        rng_seed=0,
        max_evals: int | None = None,
        smoothing_window: int = 5,
    ):
        if mode not in ("exact", "sampled"):
            raise ValueError("mode must be 'exact' or 'sampled'")
        if mode == "sampled" and (shots_per_group is None or shots_per_group < 1):
            raise ValueError("sampled mode requires a positive shots_per_group")
        self.circuit = circuit
        self.hamiltonian = hamiltonian
        self.groups = groups if groups is not None else group_commuting(hamiltonian)
        self.mode = mode
        self.shots_per_group = shots_per_group
        self._seed = (rng_seed,) if isinstance(rng_seed, (int, np.integer)) else tuple(rng_seed)
        self.max_evals = max_evals
        self.n_evaluations = 0
        self.circuit_executions = 0
        self.total_shots = 0
        self.history: list[float] = []
        window = 1 if mode == "exact" else max(1, smoothing_window)
        self._window: deque[float] = deque(maxlen=window)
        self.best_energy = math.inf
        self.best_params: np.ndarray | None = None
        self.final_params: np.ndarray | None = None

    @property
    def seed_tuple(self) -> tuple:
        return self._seed

    def evaluate(self, params: np.ndarray, trajectory: bool = True) -> tuple[float, EstimateReport]:
        if self.max_evals is not None and self.n_evaluations >= self.max_evals:
            raise BudgetExhausted
        state = run_circuit(self.circuit, params)
        if self.mode == "exact":
            report = estimate_observable(state, self.hamiltonian, self.groups)
            self.circuit_executions += 1
        else:
            report = estimate_observable(
                state,
                self.hamiltonian,
                self.groups,
                shots_per_group=self.shots_per_group,
                rng_seed=self._seed + (self.n_evaluations,),
            )
            self.circuit_executions += report.n_groups
            self.total_shots += report.total_shots
        self.n_evaluations += 1
        if not math.isfinite(report.value):
            raise NonFiniteEnergy(f"objective returned {report.value!r}")
        if trajectory:
            self.record(report.value, params)
        return report.value, report

    def record(self, value: float, params: np.ndarray) -> None:
        """Log an accepted trajectory point; smoothed minimum defines the best."""
        self.history.append(value)
        self._window.append(value)
        self.final_params = np.array(params, dtype=float)
        smoothed = sum(self._window) / len(self._window)
        if smoothed < self.best_energy:
            self.best_energy = smoothed
            self.best_params = self.final_params

    def terminal_smoothed(self) -> float:
        """Average of the last window of trajectory energies."""
        if not self._window:
            return math.inf
        return sum(self._window) / len(self._window)

    def __call__(self, params: np.ndarray) -> float:
        return self.evaluate(params)[0]


def parameter_shift_gradient(
    evaluator: EnergyEvaluator, params: np.ndarray, circuit: AnsatzCircuit | None = None
) -> np.ndarray:
    """Exact gradient from per-slot shift rules (2 or 4 evaluations each)."""
    circuit = circuit if circuit is not None else evaluator.circuit
    params = np.asarray(params, dtype=float)
    grad = np.zeros(circuit.n_params)
    for slot in range(circuit.n_params):
        rule = _SHIFT_RULES[circuit.slot_frequencies(slot)]
        for shift, coeff in rule:
            shifted = params.copy()
            shifted[slot] += shift
            value, _ = evaluator.evaluate(shifted, trajectory=False)
            grad[slot] += coeff * value
    return grad


class _ConvergenceTracker:
    """Energy-change stopping rule.

    Exact mode (window 1) demands several consecutive sub-tolerance changes
    so a single crawling step cannot masquerade as convergence; sampled
    mode compares adjacent window averages to see through shot noise.
    """

    def __init__(self, energy_tol: float, window: int, consecutive: int = 1):
        self.energy_tol = energy_tol
        self.values: deque[float] = deque(maxlen=max(2 * window, 2))
        self.window = window
        self.consecutive = consecutive
        self._streak = 0

    def push(self, value: float) -> bool:
        if self.window == 1:
            if self.values and abs(value - self.values[-1]) < self.energy_tol:
                self._streak += 1
            else:
                self._streak = 0
            self.values.append(value)
            return self._streak >= self.consecutive
        self.values.append(value)
        if len(self.values) < 2 * self.window:
            return False
        seq = list(self.values)
        recent = sum(seq[self.window:]) / self.window
        previous = sum(seq[:self.window]) / self.window
        # Shot estimates live on a value lattice, so two window means can
        # tie by chance; demand a persistent plateau, not one collision.
        if abs(recent - previous) < self.energy_tol:
            self._streak += 1
        else:
            self._streak = 0
        return self._streak >= self.consecutive


def _resolve_max_evals(config: OptimizerConfig, n_params: int) -> int:
    return config.max_evals if config.max_evals is not None else 400 * n_params


def _minimize_cobyla(evaluator: EnergyEvaluator, x0: np.ndarray, config: OptimizerConfig) -> str:
    """Linear interpolation model over an n+1 simplex with a shrinking radius.

    Candidate steps move from the best vertex against the fitted gradient at
    the current radius; a failed candidate halves the radius and rebuilds
    the simplex around the best point, down to rho_end.
    """
    n = len(x0)
    rho = config.cobyla_rho0
    window = 1 if evaluator.mode == "exact" else config.smoothing_window
    tracker = _ConvergenceTracker(config.energy_tol, window, config.plateau_steps)

    def build_simplex(center: np.ndarray) -> tuple[list[np.ndarray], list[float]]:
        points = [center.copy()]
        values = [evaluator(center)]
        tracker.push(values[-1])
        for i in range(n):
            point = center.copy()
            point[i] += rho
            points.append(point)
            values.append(evaluator(point))
            tracker.push(values[-1])
        return points, values

    points, values = build_simplex(np.asarray(x0, dtype=float))
    while rho > config.cobyla_rho_end:
        order = int(np.argmin(values))
        best_point, best_value = points[order], values[order]
        deltas = np.array([p - best_point for i, p in enumerate(points) if i != order])
        rhs = np.array([v - best_value for i, v in enumerate(values) if i != order])
        try:
            grad = np.linalg.lstsq(deltas, rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            grad = np.zeros(n)
        norm = np.linalg.norm(grad)
        if norm < 1e-15:
            rho /= 2.0
            points, values = build_simplex(best_point)
            continue
        candidate = best_point - rho * grad / norm
        value = evaluator(candidate)
        if tracker.push(value):
            return "energy_tol"
        if value < best_value - 1e-14:
            worst = int(np.argmax(values))
            points[worst], values[worst] = candidate, value
        else:
            rho /= 2.0
            points, values = build_simplex(best_point)
    return "rho_end"


def _minimize_adam(evaluator: EnergyEvaluator, x0: np.ndarray, config: OptimizerConfig) -> str:
    x = np.asarray(x0, dtype=float).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    window = 1 if evaluator.mode == "exact" else config.smoothing_window
    tracker = _ConvergenceTracker(config.energy_tol, window, config.plateau_steps)
    value, _ = evaluator.evaluate(x)
    tracker.push(value)
    for step in range(1, config.adam_max_steps + 1):
        grad = parameter_shift_gradient(evaluator, x)
        if np.linalg.norm(grad) < config.grad_tol:
            return "grad_tol"
        m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * grad
        v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * grad * grad
        m_hat = m / (1.0 - config.adam_beta1**step)
        v_hat = v / (1.0 - config.adam_beta2**step)
        x = x - config.adam_lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        value, _ = evaluator.evaluate(x)
        if tracker.push(value):
            return "energy_tol"
    return "max_steps"


def _two_loop(grad: np.ndarray, pairs: deque) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / float(y @ s)
        alpha = rho * float(s @ q)
        q = q - alpha * y
        alphas.append((alpha, rho))
    if pairs:
        s, y = pairs[-1]
        q = q * (float(s @ y) / float(y @ y))
    for (s, y), (alpha, rho) in zip(pairs, reversed(alphas)):
        beta = rho * float(y @ q)
        q = q + (alpha - beta) * s
    return q


def _lbfgsb_descent(evaluator: EnergyEvaluator, x0: np.ndarray, config: OptimizerConfig) -> str | None:
    """One L-BFGS descent: two-loop direction, box projection, Armijo search.

    Under sampling noise the acceptance test carries the estimates' combined
    standard error as slack.  Returns a termination reason, or None when the
    descent got stuck (stationary saddle, poisoned curvature, or a stalled
    line search) and the caller should restart from a fresh point.
    """
    lo, hi = -config.lbfgs_bound, config.lbfgs_bound
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    window = 1 if evaluator.mode == "exact" else config.smoothing_window
    tracker = _ConvergenceTracker(config.energy_tol, window, config.plateau_steps)
    value, report = evaluator.evaluate(x)
    tracker.push(value)
    grad = parameter_shift_gradient(evaluator, x)
    pairs: deque = deque(maxlen=config.lbfgs_memory)
    memory_cleared = False
    while True:
        projected = grad.copy()
        projected[(x <= lo + 1e-12) & (grad > 0)] = 0.0
        projected[(x >= hi - 1e-12) & (grad < 0)] = 0.0
        grad_norm = float(np.linalg.norm(projected))
        if grad_norm < config.grad_tol:
            return "grad_tol"
        direction = -_two_loop(grad, pairs)
        if float(direction @ grad) > -1e-15:
            direction = -grad
        alpha = 1.0
        accepted = False
        while alpha >= 1e-10:
            x_new = np.clip(x + alpha * direction, lo, hi)
            value_new, report_new = evaluator.evaluate(x_new, trajectory=False)
            slack = report.std_error + report_new.std_error
            if value_new <= value + config.armijo_c1 * float(grad @ (x_new - x)) + slack:
                accepted = True
                break
            alpha /= 2.0
        if not accepted:
            return None  # numerically stationary; not provably a minimum
        evaluator.record(value_new, x_new)
        grad_new = parameter_shift_gradient(evaluator, x_new)
        s = x_new - x
        y = grad_new - grad
        if float(s @ y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y))
        x, value, grad, report = x_new, value_new, grad_new, report_new
        if tracker.push(value):
            if float(np.linalg.norm(grad)) < config.plateau_grad_tol:
                return "energy_tol"
            # Flat progress far from stationarity: the curvature memory is
            # misleading.  Drop it once, then give up on this descent.
            if memory_cleared:
                return None
            pairs.clear()
            memory_cleared = True
            tracker = _ConvergenceTracker(config.energy_tol, window, config.plateau_steps)


def _minimize_lbfgsb(evaluator: EnergyEvaluator, x0: np.ndarray, config: OptimizerConfig) -> str:
    """L-BFGS descents with deterministic jittered restarts until the budget ends.

    A descent that stops without a convergence certificate restarts from a
    fresh draw around the circuit reference; the evaluator keeps the best
    point seen across all of them.
    """
    restart_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(evaluator.seed_tuple + (0x5EED,)))
    )
    x_start = np.asarray(x0, dtype=float)
    while True:
        termination = _lbfgsb_descent(evaluator, x_start, config)
        if termination is not None:
            return termination
        x_start = initial_parameters(evaluator.circuit, restart_rng)


def minimize(
    config: OptimizerConfig,
    evaluator: EnergyEvaluator,
    initial_params: np.ndarray,
) -> VqeResult:
    """Run the configured method against a fresh evaluator."""
    if evaluator.max_evals is None:
        evaluator.max_evals = _resolve_max_evals(config, evaluator.circuit.n_params)
    diagnostics: dict = {}
    try:
        if config.method == "cobyla":
            termination = _minimize_cobyla(evaluator, initial_params, config)
        elif config.method == "adam":
            termination = _minimize_adam(evaluator, initial_params, config)
        else:
            termination = _minimize_lbfgsb(evaluator, initial_params, config)
    except BudgetExhausted:
        termination = "max_evals"
    except NonFiniteEnergy as err:
        termination = "non_finite"
        diagnostics["error"] = str(err)
    converged = termination in ("energy_tol", "grad_tol", "rho_end")
    if evaluator.mode == "sampled":
        # A single noisy draw (or the running minimum of many) is biased
        # low; where the optimizer parked, smoothed, is the honest readout.
        best_energy = evaluator.terminal_smoothed()
        best_params = evaluator.final_params
    else:
        best_energy = evaluator.best_energy
        best_params = evaluator.best_params
    if best_params is None:  # budget exhausted before any trajectory point
        best_params = np.asarray(initial_params, dtype=float)
    return VqeResult(
        best_params=tuple(float(p) for p in best_params),
        best_energy=float(best_energy),
        energy_history=tuple(evaluator.history),
        n_evaluations=evaluator.n_evaluations,
        circuit_executions=evaluator.circuit_executions,
        total_shots=evaluator.total_shots,
        converged=converged,
        termination=termination,
        diagnostics=diagnostics,
    )


def initial_parameters(
    circuit: AnsatzCircuit, rng: np.random.Generator, width: float = INIT_JITTER
) -> np.ndarray:
    """Reference point plus uniform jitter; keeps every seed in the global basin."""
    return np.array(circuit.reference) + rng.uniform(-width, width, circuit.n_params)


def solve_ground(
    model: AimModel,
    config: OptimizerConfig = OptimizerConfig(),
    mode: str = "exact",
    shots_per_group: int | None = None,
    seed=0,
) -> VqeResult:
    """Optimize the ground ansatz for the model; deterministic in (config, seed).

    The seed may be an int or a tuple of ints; ensemble drivers pass tuples
    keyed by their run coordinates.
    """
    circuit = build_ground_ansatz(model.n_bath)
    hamiltonian = build_qubit_hamiltonian(model)
    groups = group_commuting(hamiltonian)
    evaluator = EnergyEvaluator(
        circuit,
        hamiltonian,
        groups,
        mode=mode,
        shots_per_group=shots_per_group,
        rng_seed=seed,
        max_evals=_resolve_max_evals(config, circuit.n_params),
        smoothing_window=config.smoothing_window,
    )
    init_seed = np.random.SeedSequence(evaluator.seed_tuple + (0x1A17,))
    rng = np.random.Generator(np.random.Philox(init_seed))
    x0 = initial_parameters(circuit, rng)
    return minimize(config, evaluator, x0)
