"""Configuration-driven experiment runner and result bundles.

An experiment sweeps interaction strengths for one bath size, runs a
seed/repeat ensemble of variational ground-state searches, optionally adds
moment corrections and Green's-function reconstructions, and aggregates
everything against exact-diagonalization references.  Results land in a
bundle directory:

    out/
      manifest.json                 config hash, library version, timestamp
      nb{N}/u{U}/
        exact.json                  exact ground energy and branch fractions
        dos_exact.csv (+ .json)     exact-pipeline density of states
        run_s{S}_r{R}.json          one record per (seed, repeat)
        aggregate.json              per-cell statistics and averaged ladders
        dos_quantum.csv (+ .json)   density of states from averaged ladders
        histories.csv               per-run energy trajectories

Every aggregate numeric is recomputable from the run records; reruns with
the same configuration are byte-identical except for the manifest
timestamp.  Writes go through a temp-file rename so a crashed run never
leaves a half-written record.

Configuration files are TOML with blocks mirroring :class:`ExperimentConfig`;
see ``config_schema`` for the accepted keys and defaults.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

import numpy as np

from . import __version__
from .estimator import (
    MomentTables,
    default_energy_shots,
    moments as estimate_moments,
    shot_budget,
)
from .exact import exact_greens
from .greens import (
    BRANCHES,
    ContinuedFraction,
    branch_coefficients_moments,
    continued_fraction_eval,
    default_omega_grid,
    dos,
    excitation_state,
    save_dos,
)
from .hamiltonian import build_qubit_hamiltonian, group_commuting
from .model import AimModel
from .qcm import correction_record
from .statevector import build_ground_ansatz, run_circuit
from .vqe import OptimizerConfig, solve_ground

SPINS = ("up", "down")
OPTIMIZERS = ("lbfgsb", "adam", "cobyla")


class ConfigError(ValueError):
    """A configuration problem detected before any computation starts."""


# ---------------------------------------------------------------------------
# Configuration blocks


@dataclass(frozen=True)
class ModelBlock:
    n_bath: int = 1
    u_values: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    hybridization: float = 1.0
    bath_energies: tuple[float, ...] = ()


@dataclass(frozen=True)
class VqeBlock:
    method: str = "lbfgsb"
    mode: str = "exact"
    shots_per_group: int | None = None
    eps: float | None = None  # target standard error; converted via shot_budget
    n_seeds: int | None = None  # None picks the bath-size default ensemble
    n_repeats: int | None = None


@dataclass(frozen=True)
class QcmBlock:
    enabled: bool = True
    shots: tuple[int, ...] | None = None  # per-power schedule for sampled moments


@dataclass(frozen=True)
class GreensBlock:
    method: str = "ansatz"
    depth: int = 2
    eta: float = 0.05
    n_omega: int = 801
    omega_span: float | None = None


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "results"
    formats: tuple[str, ...] = ("json", "csv")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    vqe: VqeBlock = field(default_factory=VqeBlock)
    qcm: QcmBlock = field(default_factory=QcmBlock)
    greens: GreensBlock = field(default_factory=GreensBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    master_seed: int = 0

    def ensemble(self) -> tuple[int, int]:
        """(n_seeds, n_repeats), defaulting by bath size when unset."""
        if self.model.n_bath <= 3:
            seeds, repeats = 10, 5
        else:
            seeds, repeats = 1, 2
        if self.vqe.n_seeds is not None:
            seeds = self.vqe.n_seeds
        if self.vqe.n_repeats is not None:
            repeats = self.vqe.n_repeats
        return seeds, repeats


_BLOCK_TYPES = {
    "model": ModelBlock,
    "vqe": VqeBlock,
    "qcm": QcmBlock,
    "greens": GreensBlock,
    "output": OutputBlock,
}

# One line per key: "block.key  type  default  meaning".  Printed by the
# validate subcommand on failure and embedded in the README.
CONFIG_SCHEMA = """\
master_seed          int        0                 root of every run's seed tuple
[model]
n_bath               int        1                 bath sites, positive and odd
u_values             [float]    [2, 4, 6, 8]      interaction sweep, each > 0
hybridization        float      1.0               uniform impurity-bath hopping
bath_energies        [float]    zeros             one energy per bath site
[vqe]
method               str        "lbfgsb"          lbfgsb | adam | cobyla
mode                 str        "exact"           exact | sampled
shots_per_group      int        by bath size      sampled mode only
eps                  float      unset             target std error; alternative to shots_per_group
n_seeds              int        10 (1 for n_bath=5)  distinct starting points
n_repeats            int        5 (2 for n_bath=5)   repeats per starting point
[qcm]
enabled              bool       true              attach moment corrections
shots                [int] x4   by bath size      per-power schedule for sampled moments
[greens]
method               str        "ansatz"          ansatz | operator excitation preparation
depth                int        2                 continued-fraction levels
eta                  float      0.05              Lorentzian broadening
n_omega              int        801               frequency grid points
omega_span           float      U + 6V            half-width of the grid
[output]
directory            str        "results"         bundle directory (overridden by --out)
formats              [str]      ["json", "csv"]   csv controls DOS/history files
"""


def config_schema() -> str:
    return CONFIG_SCHEMA


def _coerce_block(name: str, cls, mapping: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(mapping) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"bad [{name}] block: {err}") from err


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Build a config from a nested mapping (parsed TOML), then validate."""
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a table")
    unknown = sorted(set(data) - set(_BLOCK_TYPES) - {"master_seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    blocks = {}
    for name, cls in _BLOCK_TYPES.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{name}] must be a table")
        blocks[name] = _coerce_block(name, cls, raw)
    config = ExperimentConfig(master_seed=data.get("master_seed", 0), **blocks)
    validate_config(config)
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a TOML configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return config_from_mapping(data)


def validate_config(config: ExperimentConfig) -> None:
    """Raise ConfigError listing every problem found."""
    problems: list[str] = []
    m, v, q, g, o = config.model, config.vqe, config.qcm, config.greens, config.output

    if not isinstance(m.n_bath, int) or m.n_bath < 1 or m.n_bath % 2 == 0:
        problems.append(f"model.n_bath must be a positive odd integer, got {m.n_bath}")
    if not m.u_values:
        problems.append("model.u_values must be non-empty")
    elif not all(isinstance(u, (int, float)) and u > 0 for u in m.u_values):
        problems.append(f"model.u_values must all be positive numbers, got {list(m.u_values)}")
    elif len(set(float(u) for u in m.u_values)) != len(m.u_values):
        problems.append("model.u_values must be distinct")
    if not (isinstance(m.hybridization, (int, float)) and m.hybridization > 0):
        problems.append(f"model.hybridization must be positive, got {m.hybridization}")
    if m.bath_energies and len(m.bath_energies) != m.n_bath:
        problems.append(
            f"model.bath_energies needs {m.n_bath} entries, got {len(m.bath_energies)}"
        )

    if v.method not in OPTIMIZERS:
        problems.append(f"vqe.method must be one of {OPTIMIZERS}, got {v.method!r}")
    if v.mode not in ("exact", "sampled"):
        problems.append(f"vqe.mode must be 'exact' or 'sampled', got {v.mode!r}")
    if v.shots_per_group is not None and v.eps is not None:
        problems.append("vqe.shots_per_group and vqe.eps are alternatives; set at most one")
    if v.shots_per_group is not None and (
        not isinstance(v.shots_per_group, int) or v.shots_per_group < 1
    ):
        problems.append(f"vqe.shots_per_group must be a positive integer, got {v.shots_per_group}")
    if v.eps is not None and not (isinstance(v.eps, (int, float)) and v.eps > 0):
        problems.append(f"vqe.eps must be positive, got {v.eps}")
    if v.mode == "exact" and (v.shots_per_group is not None or v.eps is not None):
        problems.append("vqe.shots_per_group / vqe.eps require vqe.mode = 'sampled'")
    if v.mode == "sampled" and v.shots_per_group is None and v.eps is None and m.n_bath not in (
        1,
        3,
        5,
    ):
        problems.append(
            f"no default shot count for n_bath={m.n_bath}; set vqe.shots_per_group or vqe.eps"
        )
    for label, count in (("n_seeds", v.n_seeds), ("n_repeats", v.n_repeats)):
        if count is not None and (not isinstance(count, int) or count < 1):
            problems.append(f"vqe.{label} must be a positive integer, got {count}")

    if q.shots is not None:
        if len(q.shots) != 4 or not all(isinstance(s, int) and s >= 1 for s in q.shots):
            problems.append(f"qcm.shots must be four positive integers, got {list(q.shots)}")

    if g.method not in ("ansatz", "operator"):
        problems.append(f"greens.method must be 'ansatz' or 'operator', got {g.method!r}")
    if not isinstance(g.depth, int) or g.depth < 1:
        problems.append(f"greens.depth must be a positive integer, got {g.depth}")
    if not (isinstance(g.eta, (int, float)) and g.eta > 0):
        problems.append(f"greens.eta must be positive, got {g.eta}")
    if not isinstance(g.n_omega, int) or g.n_omega < 3:
        problems.append(f"greens.n_omega must be an integer >= 3, got {g.n_omega}")
    if g.omega_span is not None and not (
        isinstance(g.omega_span, (int, float)) and g.omega_span > 0
    ):
        problems.append(f"greens.omega_span must be positive, got {g.omega_span}")

    bad_formats = sorted(set(o.formats) - {"json", "csv"})
    if bad_formats:
        problems.append(f"output.formats entries must be 'json' or 'csv', got {bad_formats}")
    if "json" not in o.formats:
        problems.append("output.formats must include 'json'; run records are JSON")
    if not isinstance(config.master_seed, int) or config.master_seed < 0:
        problems.append(f"master_seed must be a non-negative integer, got {config.master_seed}")

    if problems:
        raise ConfigError("; ".join(problems))


def normalized_config(config: ExperimentConfig) -> dict:
    """Plain nested dict with defaults resolved; hash and manifest input."""
    n_seeds, n_repeats = config.ensemble()
    return {
        "model": {
            "n_bath": config.model.n_bath,
            "u_values": [float(u) for u in config.model.u_values],
            "hybridization": float(config.model.hybridization),
            "bath_energies": [float(e) for e in config.model.bath_energies]
            or [0.0] * config.model.n_bath,
        },
        "vqe": {
            "method": config.vqe.method,
            "mode": config.vqe.mode,
            "shots_per_group": config.vqe.shots_per_group,
            "eps": None if config.vqe.eps is None else float(config.vqe.eps),
            "n_seeds": n_seeds,
            "n_repeats": n_repeats,
        },
        "qcm": {
            "enabled": bool(config.qcm.enabled),
            "shots": None if config.qcm.shots is None else [int(s) for s in config.qcm.shots],
        },
        "greens": {
            "method": config.greens.method,
            "depth": config.greens.depth,
            "eta": float(config.greens.eta),
            "n_omega": config.greens.n_omega,
            "omega_span": None
            if config.greens.omega_span is None
            else float(config.greens.omega_span),
        },
        "output": {
            "directory": config.output.directory,
            "formats": sorted(config.output.formats),
        },
        "master_seed": config.master_seed,
    }


def config_hash(config: ExperimentConfig) -> str:
    text = json.dumps(normalized_config(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def with_master_seed(config: ExperimentConfig, master_seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        model=config.model,
        vqe=config.vqe,
        qcm=config.qcm,
        greens=config.greens,
        output=config.output,
        master_seed=master_seed,
    )


# ---------------------------------------------------------------------------
# Bundle plumbing


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    _atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict:
    with open(path) as handle:
        return json.load(handle)


def _u_tag(u: float) -> str:
    return f"u{u:g}"


def cell_dir(out: Path, n_bath: int, u: float) -> Path:
    return out / f"nb{n_bath}" / _u_tag(u)


def run_path(cell: Path, seed_index: int, repeat_index: int) -> Path:
    return cell / f"run_s{seed_index:02d}_r{repeat_index:02d}.json"


def _run_files(cell: Path) -> list[Path]:
    return sorted(cell.glob("run_s*_r*.json"))


def _cells(config: ExperimentConfig):
    for u_index, u in enumerate(config.model.u_values):
        yield u_index, float(u)


def _build_model(config: ExperimentConfig, u: float) -> AimModel:
    return AimModel.particle_hole_symmetric(
        n_bath=config.model.n_bath,
        hubbard_u=u,
        hybridization=config.model.hybridization,
        bath_energies=tuple(config.model.bath_energies),
    )


def worker_count(threads: int | None = None) -> int:
    """Worker cap: explicit argument, then AIMSOLVE_THREADS, then cpu count."""
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("AIMSOLVE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"AIMSOLVE_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


def _run_queue(work, tasks, threads: int | None) -> None:
    # Tasks are independent (U, seed, repeat) units writing disjoint files;
    # every random stream is fixed by the task's own seed tuple, so the
    # schedule cannot change any result.
    n_workers = worker_count(threads)
    if n_workers == 1 or len(tasks) <= 1:
        for task in tasks:
            work(task)
        return
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        for future in [pool.submit(work, task) for task in tasks]:
            future.result()


def _resolve_shots(config: ExperimentConfig, hamiltonian) -> int | None:
    """Per-group shot count for sampled mode; None in exact mode."""
    if config.vqe.mode == "exact":
        return None
    if config.vqe.shots_per_group is not None:
        return config.vqe.shots_per_group
    if config.vqe.eps is not None:
        return shot_budget(hamiltonian.n_pauli(), config.vqe.eps)
    return default_energy_shots(config.model.n_bath)


def _moments_mode(config: ExperimentConfig) -> str:
    if config.vqe.mode == "sampled" or config.qcm.shots is not None:
        return "sampled"
    return "exact"


# ---------------------------------------------------------------------------
# Stages


def stage_exact(config: ExperimentConfig, out: Path, resume: bool = False) -> dict:
    """Exact references per cell: ground energy, branch fractions, DOS."""
    want_csv = "csv" in config.output.formats
    computed = skipped = 0
    for _, u in _cells(config):
        cell = cell_dir(out, config.model.n_bath, u)
        cell.mkdir(parents=True, exist_ok=True)
        ref_path = cell / "exact.json"
        dos_path = cell / "dos_exact.csv"
        if resume and ref_path.exists() and (not want_csv or dos_path.exists()):
            skipped += 1
            continue
        model = _build_model(config, u)
        omega = default_omega_grid(model, config.greens.n_omega, config.greens.omega_span)
        reference = exact_greens(model, omega=omega, eta=config.greens.eta)
        fractions = {
            f"{spin}_{branch}": {
                "a": list(cf.a),
                "b_sq": list(cf.b_sq),
                "weight": cf.weight,
                "e0": cf.e0,
            }
            for (spin, branch), cf in sorted(reference.fractions.items())
        }
        write_json(
            ref_path,
            {
                "n_bath": config.model.n_bath,
                "u": u,
                "e0": reference.e0,
                "fractions": fractions,
                "dos_integral": reference.curve.integrate(),
            },
        )
        if want_csv:
            save_dos(
                reference.curve,
                dos_path,
                metadata={"pipeline": "exact", "n_bath": config.model.n_bath, "u": u},
            )
        computed += 1
    return {"computed": computed, "skipped": skipped}


def stage_vqe(
    config: ExperimentConfig,
    out: Path,
    resume: bool = False,
    threads: int | None = None,
) -> dict:
    """Ground-state searches over the (U, seed, repeat) grid."""
    n_seeds, n_repeats = config.ensemble()
    opt = OptimizerConfig(method=config.vqe.method)
    tasks = []
    skipped = 0
    for u_index, u in _cells(config):
        cell = cell_dir(out, config.model.n_bath, u)
        cell.mkdir(parents=True, exist_ok=True)
        for seed_index in range(n_seeds):
            for repeat_index in range(n_repeats):
                path = run_path(cell, seed_index, repeat_index)
                if resume and path.exists() and "vqe" in read_json(path):
                    skipped += 1
                    continue
                tasks.append((u_index, u, seed_index, repeat_index, path))

    def work(task):
        u_index, u, seed_index, repeat_index, path = task
        model = _build_model(config, u)
        hamiltonian = build_qubit_hamiltonian(model)
        shots = _resolve_shots(config, hamiltonian)
        seed = (config.master_seed, config.model.n_bath, u_index, seed_index, repeat_index)
        result = solve_ground(model, opt, mode=config.vqe.mode, shots_per_group=shots, seed=seed)
        record = {
            "n_bath": config.model.n_bath,
            "u": u,
            "seed_index": seed_index,
            "repeat_index": repeat_index,
            "seed": list(seed),
            "vqe": {
                "method": config.vqe.method,
                "mode": config.vqe.mode,
                "shots_per_group": 0 if shots is None else shots,
                "n_params": len(result.best_params),
                "n_groups": group_commuting(hamiltonian).n_groups,
                "best_energy": result.best_energy,
                "best_params": list(result.best_params),
                "energy_history": list(result.energy_history),
                "n_evaluations": result.n_evaluations,
                "circuit_executions": result.circuit_executions,
                "total_shots": result.total_shots,
                "converged": result.converged,
                "termination": result.termination,
                "diagnostics": result.diagnostics,
            },
        }
        write_json(path, record)

    _run_queue(work, tasks, threads)
    return {"computed": len(tasks), "skipped": skipped}


def stage_qcm(
    config: ExperimentConfig,
    out: Path,
    resume: bool = False,
    threads: int | None = None,
) -> dict:
    """Attach a moment-correction record to every run."""
    if not config.qcm.enabled:
        return {"computed": 0, "skipped": 0}
    mode = _moments_mode(config)
    schedule = None if config.qcm.shots is None else list(config.qcm.shots)
    computed = skipped = 0
    for _, u in _cells(config):
        cell = cell_dir(out, config.model.n_bath, u)
        run_files = _run_files(cell)
        if not run_files:
            raise RuntimeError(f"no run records in {cell}; run the vqe stage first")
        pending = []
        for path in run_files:
            record = read_json(path)
            if "vqe" not in record:
                raise RuntimeError(f"{path} has no vqe record; run the vqe stage first")
            if resume and "qcm" in record:
                skipped += 1
                continue
            pending.append((path, record))
        if not pending:
            continue
        model = _build_model(config, u)
        hamiltonian = build_qubit_hamiltonian(model)
        tables = MomentTables.from_hamiltonian(hamiltonian, 4)
        if mode == "sampled":
            tables.groups  # materialize once before the queue fans out
        circuit = build_ground_ansatz(config.model.n_bath)

        def work(item, model=model, hamiltonian=hamiltonian, tables=tables, circuit=circuit):
            path, record = item
            state = run_circuit(circuit, np.array(record["vqe"]["best_params"]))
            reports = estimate_moments(
                state,
                hamiltonian,
                4,
                mode,
                schedule,
                tuple(record["seed"]) + (101,),
                tables,
            )
            correction = correction_record(
                record["vqe"]["best_energy"],
                tuple(r.value for r in reports),
                model.n_qubits,
            )
            correction["mode"] = mode
            correction["std_errors"] = [r.std_error for r in reports]
            correction["total_shots"] = sum(r.total_shots for r in reports)
            record["qcm"] = correction
            write_json(path, record)

        _run_queue(work, pending, threads)
        computed += len(pending)
    return {"computed": computed, "skipped": skipped}


def _reference_energy(record: dict) -> float:
    """Reference energy for excitation fractions: corrected, else variational."""
    qcm = record.get("qcm")
    if qcm is not None and qcm.get("e_inf") is not None:
        return float(qcm["e_inf"])
    return float(record["vqe"]["best_energy"])


def stage_greens(
    config: ExperimentConfig,
    out: Path,
    resume: bool = False,
    threads: int | None = None,
) -> dict:
    """Per-run branch ladders for the impurity Green's function."""
    mode = _moments_mode(config)
    computed = skipped = 0
    for _, u in _cells(config):
        cell = cell_dir(out, config.model.n_bath, u)
        run_files = _run_files(cell)
        if not run_files:
            raise RuntimeError(f"no run records in {cell}; run the vqe stage first")
        pending = []
        for path in run_files:
            record = read_json(path)
            if "vqe" not in record:
                raise RuntimeError(f"{path} has no vqe record; run the vqe stage first")
            if resume and "greens" in record:
                skipped += 1
                continue
            pending.append((path, record))
        if not pending:
            continue
        model = _build_model(config, u)
        hamiltonian = build_qubit_hamiltonian(model)
        tables = MomentTables.from_hamiltonian(hamiltonian, 4)
        if mode == "sampled":
            tables.groups
        circuit = build_ground_ansatz(config.model.n_bath)

        def work(item, model=model, hamiltonian=hamiltonian, tables=tables, circuit=circuit):
            path, record = item
            params = np.array(record["vqe"]["best_params"])
            ground = run_circuit(circuit, params)
            e0 = _reference_energy(record)
            branches = {}
            for spin_index, spin in enumerate(SPINS):
                for branch_index, branch in enumerate(BRANCHES):
                    excitation = excitation_state(
                        ground, spin, branch, config.greens.method, params
                    )
                    result = branch_coefficients_moments(
                        excitation.state,
                        hamiltonian,
                        branch=branch,
                        weight=excitation.weight,
                        e0=e0,
                        system_size_n=model.n_qubits,
                        depth=config.greens.depth,
                        mode=mode,
                        rng_seed=tuple(record["seed"]) + (202, spin_index, branch_index),
                        tables=tables,
                    )
                    branches[f"{spin}_{branch}"] = {
                        "a": list(result.fraction.a),
                        "b_sq": list(result.fraction.b_sq),
                        "weight": result.fraction.weight,
                        "e0": result.fraction.e0,
                        "method": excitation.method,
                        "fidelity": excitation.fidelity,
                        "flags": list(result.flags),
                        "moments": [r.value for r in result.reports],
                        "total_shots": sum(r.total_shots for r in result.reports),
                    }
            record["greens"] = {
                "mode": mode,
                "method": config.greens.method,
                "e0_used": e0,
                "branches": branches,
            }
            write_json(path, record)

        _run_queue(work, pending, threads)
        computed += len(pending)
    return {"computed": computed, "skipped": skipped}


# ---------------------------------------------------------------------------
# Aggregation


def _mean_std(values) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def average_branches(runs: list[dict], depth: int) -> dict:
    """Average ladder coefficients across runs, per spin and branch.

    Runs whose ladder was truncated or flagged are excluded so the average
    stays elementwise meaningful; the counts record how many contributed.
    """
    averaged = {}
    for spin in SPINS:
        for branch in BRANCHES:
            key = f"{spin}_{branch}"
            entries = [r["greens"]["branches"][key] for r in runs if "greens" in r]
            usable = [e for e in entries if not e["flags"] and len(e["a"]) == depth]
            excluded = len(entries) - len(usable)
            if not usable:
                averaged[key] = {
                    "a": [],
                    "b_sq": [],
                    "weight": 0.0,
                    "e0": 0.0,
                    "n_averaged": 0,
                    "n_excluded": excluded,
                }
                continue
            averaged[key] = {
                "a": [float(x) for x in np.mean([e["a"] for e in usable], axis=0)],
                "b_sq": [float(x) for x in np.mean([e["b_sq"] for e in usable], axis=0)],
                "weight": float(np.mean([e["weight"] for e in usable])),
                "e0": float(np.mean([e["e0"] for e in usable])),
                "n_averaged": len(usable),
                "n_excluded": excluded,
            }
    return averaged


def curve_from_branches(model: AimModel, branches: dict, greens_block: GreensBlock):
    """Density of states evaluated from averaged ladder coefficients."""
    omega = default_omega_grid(model, greens_block.n_omega, greens_block.omega_span)
    greens_by_spin = {}
    for spin in SPINS:
        total = np.zeros(len(omega), dtype=complex)
        for branch in BRANCHES:
            entry = branches[f"{spin}_{branch}"]
            if not entry["a"] or entry["n_averaged"] == 0:
                continue
            fraction = ContinuedFraction(
                tuple(entry["a"]),
                tuple(entry["b_sq"]),
                branch,
                entry["weight"],
                entry["e0"],
            )
            total = total + np.array(
                [continued_fraction_eval(fraction, w + 1j * greens_block.eta) for w in omega]
            )
        greens_by_spin[spin] = total
    return dos(greens_by_spin, omega, greens_block.eta)


def _aggregate_cell(config: ExperimentConfig, cell: Path, u: float) -> dict:
    ref_path = cell / "exact.json"
    if not ref_path.exists():
        raise RuntimeError(f"{ref_path} missing; run the exact stage before aggregating")
    e0_exact = float(read_json(ref_path)["e0"])
    runs = [read_json(p) for p in _run_files(cell)]
    if not runs:
        raise RuntimeError(f"no run records in {cell}; run the vqe stage first")

    energies = [r["vqe"]["best_energy"] for r in runs]
    rel_errors = [(e - e0_exact) / abs(e0_exact) for e in energies]
    terminations: dict[str, int] = {}
    for r in runs:
        label = r["vqe"]["termination"]
        terminations[label] = terminations.get(label, 0) + 1
    mean_energy, std_energy = _mean_std(energies)
    mean_rel, std_rel = _mean_std(rel_errors)
    aggregate = {
        "n_bath": config.model.n_bath,
        "u": u,
        "e0_exact": e0_exact,
        "n_runs": len(runs),
        "vqe": {
            "method": config.vqe.method,
            "mode": config.vqe.mode,
            "mean_energy": mean_energy,
            "std_energy": std_energy,
            "mean_rel_error": mean_rel,
            "std_rel_error": std_rel,
            "mean_abs_rel_error": _mean_std([abs(x) for x in rel_errors])[0],
            "n_converged": sum(1 for r in runs if r["vqe"]["converged"]),
            "terminations": terminations,
            "mean_evaluations": _mean_std([r["vqe"]["n_evaluations"] for r in runs])[0],
            "mean_circuit_executions": _mean_std(
                [r["vqe"]["circuit_executions"] for r in runs]
            )[0],
            "total_circuit_executions": sum(r["vqe"]["circuit_executions"] for r in runs),
            "total_shots": sum(r["vqe"]["total_shots"] for r in runs),
        },
    }

    corrected = [r for r in runs if r.get("qcm", {}).get("e_inf") is not None]
    if any("qcm" in r for r in runs):
        corr_rel = [(r["qcm"]["e_inf"] - e0_exact) / abs(e0_exact) for r in corrected]
        mean_corr_rel, std_corr_rel = _mean_std(corr_rel)
        aggregate["qcm"] = {
            "n_corrected": len(corrected),
            "n_domain_failures": sum(1 for r in runs if "qcm" in r) - len(corrected),
            "mean_rel_error": mean_corr_rel,
            "std_rel_error": std_corr_rel,
            "mean_abs_rel_error": _mean_std([abs(x) for x in corr_rel])[0],
            "total_shots": sum(r["qcm"]["total_shots"] for r in runs if "qcm" in r),
        }

    if any("greens" in r for r in runs):
        aggregate["greens"] = {
            "method": config.greens.method,
            "depth": config.greens.depth,
            "averaged_branches": average_branches(runs, config.greens.depth),
            "total_shots": sum(
                b["total_shots"]
                for r in runs
                if "greens" in r
                for b in r["greens"]["branches"].values()
            ),
        }
    return aggregate


def _write_histories(cell: Path, runs: list[dict]) -> None:
    lines = ["seed_index,repeat_index,eval_index,energy"]
    for record in runs:
        for eval_index, energy in enumerate(record["vqe"]["energy_history"]):
            lines.append(
                f"{record['seed_index']},{record['repeat_index']},{eval_index},{energy!r}"
            )
    _atomic_write_text(cell / "histories.csv", "\n".join(lines) + "\n")


def stage_aggregate(config: ExperimentConfig, out: Path) -> dict:
    """Single-threaded roll-up after the run queue drains."""
    want_csv = "csv" in config.output.formats
    cells_done = 0
    for _, u in _cells(config):
        cell = cell_dir(out, config.model.n_bath, u)
        aggregate = _aggregate_cell(config, cell, u)
        write_json(cell / "aggregate.json", aggregate)
        runs = [read_json(p) for p in _run_files(cell)]
        if want_csv:
            _write_histories(cell, runs)
        if "greens" in aggregate and want_csv:
            model = _build_model(config, u)
            curve = curve_from_branches(
                model, aggregate["greens"]["averaged_branches"], config.greens
            )
            save_dos(
                curve,
                cell / "dos_quantum.csv",
                metadata={
                    "pipeline": "quantum",
                    "n_bath": config.model.n_bath,
                    "u": u,
                    "n_runs": aggregate["n_runs"],
                },
            )
        cells_done += 1
    return {"computed": cells_done, "skipped": 0}


# ---------------------------------------------------------------------------
# Orchestration


def check_manifest(config: ExperimentConfig, out: Path) -> None:
    """Refuse to mix configurations inside one bundle directory."""
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        return
    existing = read_json(manifest_path).get("config_hash")
    if existing != config_hash(config):
        raise ConfigError(
            f"bundle {out} was written with a different configuration "
            f"(hash {existing}); use a fresh --out or delete the bundle"
        )


def write_manifest(config: ExperimentConfig, out: Path, stages: list[str]) -> None:
    write_json(
        out / "manifest.json",
        {
            "config_hash": config_hash(config),
            "version": __version__,
            "config": normalized_config(config),
            "stages": stages,
            "written_at": datetime.now(timezone.utc).isoformat(),
        },
    )


STAGES = {
    "exact": stage_exact,
    "vqe": stage_vqe,
    "qcm": stage_qcm,
    "greens": stage_greens,
}


def run_stage(
    name: str,
    config: ExperimentConfig,
    out: str | Path,
    resume: bool = False,
    threads: int | None = None,
) -> dict:
    """One pipeline stage plus manifest bookkeeping; used by the subcommands."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    check_manifest(config, out)
    if name == "exact":
        counts = stage_exact(config, out, resume)
    else:
        counts = STAGES[name](config, out, resume, threads)
    manifest_path = out / "manifest.json"
    stages = read_json(manifest_path).get("stages", []) if manifest_path.exists() else []
    if name not in stages:
        stages.append(name)
    write_manifest(config, out, stages)
    return counts


def run_experiment(
    config: ExperimentConfig,
    out: str | Path,
    resume: bool = False,
    threads: int | None = None,
) -> dict:
    """Full pipeline: exact references, VQE ensemble, corrections, ladders,
    aggregation, manifest.  Returns per-stage counts."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    check_manifest(config, out)
    counts = {"exact": stage_exact(config, out, resume)}
    counts["vqe"] = stage_vqe(config, out, resume, threads)
    counts["qcm"] = stage_qcm(config, out, resume, threads)
    counts["greens"] = stage_greens(config, out, resume, threads)
    counts["aggregate"] = stage_aggregate(config, out)
    write_manifest(config, out, ["exact", "vqe", "qcm", "greens", "aggregate"])
    return counts


# ---------------------------------------------------------------------------
# Cost report


def report_costs(bundle: str | Path) -> dict:
    """Per-optimizer, per-bath-size cost summary read back from run records."""
    bundle = Path(bundle)
    run_records = [read_json(p) for p in sorted(bundle.glob("nb*/u*/run_s*_r*.json"))]
    grouped: dict[tuple[str, int, str], list[dict]] = {}
    for record in run_records:
        vqe = record["vqe"]
        grouped.setdefault((vqe["method"], record["n_bath"], vqe["mode"]), []).append(record)

    rows = []
    for (method, n_bath, mode), records in sorted(grouped.items()):
        vqes = [r["vqe"] for r in records]
        evals = sum(v["n_evaluations"] for v in vqes)
        executions = sum(v["circuit_executions"] for v in vqes)
        n_groups = vqes[0]["n_groups"]
        n_params = vqes[0]["n_params"]
        if mode == "sampled":
            expected = n_groups if method == "cobyla" else n_groups * (1 + 2 * n_params)
            unit = "evaluation" if method == "cobyla" else "gradient step"
        else:
            expected, unit = 1, "evaluation"
        rows.append(
            {
                "method": method,
                "n_bath": n_bath,
                "mode": mode,
                "n_runs": len(records),
                "mean_evaluations": evals / len(records),
                "mean_circuit_executions": executions / len(records),
                "mean_vqe_shots": sum(v["total_shots"] for v in vqes) / len(records),
                "executions_per_evaluation": executions / evals if evals else 0.0,
                "n_groups": n_groups,
                "n_params": n_params,
                "expected_cost": expected,
                "cost_unit": unit,
                "mean_qcm_shots": (
                    sum(r["qcm"]["total_shots"] for r in records if "qcm" in r) / len(records)
                    if any("qcm" in r for r in records)
                    else None
                ),
                "mean_greens_shots": (
                    sum(
                        b["total_shots"]
                        for r in records
                        if "greens" in r
                        for b in r["greens"]["branches"].values()
                    )
                    / len(records)
                    if any("greens" in r for r in records)
                    else None
                ),
            }
        )

    # The simplex method queries one energy per evaluation while gradient
    # methods add 2 * n_params shifted energies per step, so its per-query
    # cost is the floor among sampled rows.
    ordering = None
    sampled = [row for row in rows if row["mode"] == "sampled"]
    by_bath: dict[int, list[dict]] = {}
    for row in sampled:
        by_bath.setdefault(row["n_bath"], []).append(row)
    checks = []
    for n_bath, bath_rows in sorted(by_bath.items()):
        cobyla = [r for r in bath_rows if r["method"] == "cobyla"]
        others = [r for r in bath_rows if r["method"] != "cobyla"]
        if cobyla and others:
            lowest = all(
                c["expected_cost"] <= o["expected_cost"] for c in cobyla for o in others
            )
            checks.append({"n_bath": n_bath, "cobyla_lowest_cost": lowest})
    if checks:
        ordering = checks
    return {"rows": rows, "ordering": ordering}


def format_cost_table(report: dict) -> str:
    rows = report["rows"]
    if not rows:
        return "no runs found; empty cost table\n"
    headers = [
        "method",
        "n_bath",
        "mode",
        "runs",
        "mean evals",
        "mean execs",
        "execs/eval",
        "cost/unit",
        "vqe shots",
        "qcm shots",
        "greens shots",
    ]

    def fmt(value):
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:,.1f}"
        return str(value)

    table_rows = [
        [
            row["method"],
            str(row["n_bath"]),
            row["mode"],
            str(row["n_runs"]),
            fmt(row["mean_evaluations"]),
            fmt(row["mean_circuit_executions"]),
            fmt(row["executions_per_evaluation"]),
            f"{row['expected_cost']} per {row['cost_unit']}",
            fmt(row["mean_vqe_shots"]),
            fmt(row["mean_qcm_shots"]),
            fmt(row["mean_greens_shots"]),
        ]
        for row in rows
    ]
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in table_rows)) for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    lines.extend("  ".join(r[i].ljust(widths[i]) for i in range(len(r))) for r in table_rows)
    if report["ordering"]:
        for check in report["ordering"]:
            verdict = "yes" if check["cobyla_lowest_cost"] else "NO"
            lines.append(
                f"cobyla lowest per-query cost at n_bath={check['n_bath']}: {verdict}"
            )
    return "\n".join(lines) + "\n"
