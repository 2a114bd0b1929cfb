"""Exact diagonalization oracle in fixed (n_up, n_down) sectors.

Sector states are pairs of site-occupation masks (bit s = site s, site 0
the impurity).  Fermionic signs follow the same mode ordering as the qubit
register in module ``hamiltonian`` (all up modes before all down modes,
bath order mirrored around the impurity pair), so sector spectra and
amplitudes line up with the dense images of the qubit operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse

from .greens import (
    BRANCHES,
    ContinuedFraction,
    DosCurve,
    GreensResult,
    continued_fraction_eval,
    default_omega_grid,
    dos,
)
from .hamiltonian import qubit_index
from .model import AimModel

GROUND_RESIDUAL_TOL = 1e-10
HAYDOCK_TERMINATION_TOL = 1e-12


@dataclass(frozen=True)
class SectorBasis:
    """Lexicographic basis of one particle-number sector.

    dimension is C(n_sites, n_up) * C(n_sites, n_down); states are ordered
    (up_mask, down_mask) pairs, up mask major.
    """

    n_sites: int
    n_up: int
    n_down: int
    states: tuple[tuple[int, int], ...]
    index: dict[tuple[int, int], int]

    @property
    def dimension(self) -> int:
        return len(self.states)


def _masks_with_popcount(n_bits: int, count: int) -> list[int]:
    return [m for m in range(1 << n_bits) if m.bit_count() == count]


def sector_basis(model: AimModel, n_up: int, n_down: int) -> SectorBasis:
    n_sites = model.n_sites
    if not (0 <= n_up <= n_sites and 0 <= n_down <= n_sites):
        raise ValueError("sector occupation outside 0..n_sites")
    states = tuple(
        (u, d)
        for u in _masks_with_popcount(n_sites, n_up)
        for d in _masks_with_popcount(n_sites, n_down)
    )
    assert len(states) == comb(n_sites, n_up) * comb(n_sites, n_down)
    index = {state: i for i, state in enumerate(states)}
    return SectorBasis(n_sites, n_up, n_down, states, index)


@dataclass(frozen=True)
class SparseHamiltonian:
    matrix: scipy.sparse.csr_matrix

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _hop_sign(mask: int, site: int) -> int:
    # parity of occupied sites strictly between the impurity and `site`
    between = mask & ((1 << site) - 2)
    return -1 if between.bit_count() & 1 else 1


def sparse_hamiltonian(model: AimModel, basis: SectorBasis) -> SparseHamiltonian:
    """Sector Hamiltonian as a real symmetric CSR matrix."""
    eps0 = model.impurity_energy
    u_int = model.hubbard_u
    v_hyb = model.hybridization
    bath = model.bath_energies
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for i, (u, d) in enumerate(basis.states):
        diag = eps0 * ((u & 1) + (d & 1)) + u_int * (u & d & 1)
        for k in range(1, model.n_sites):
            diag += bath[k - 1] * (((u >> k) & 1) + ((d >> k) & 1))
        rows.append(i)
        cols.append(i)
        vals.append(diag)
        for k in range(1, model.n_sites):
            flip = 1 | (1 << k)
            if ((u >> k) & 1) != (u & 1):
                j = basis.index[(u ^ flip, d)]
                if j > i:  # fill the upper triangle once, mirror below
                    amp = v_hyb * _hop_sign(u, k)
                    rows += [i, j]
                    cols += [j, i]
                    vals += [amp, amp]
            if ((d >> k) & 1) != (d & 1):
                j = basis.index[(u, d ^ flip)]
                if j > i:
                    amp = v_hyb * _hop_sign(d, k)
                    rows += [i, j]
                    cols += [j, i]
                    vals += [amp, amp]
    matrix = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(basis.dimension, basis.dimension)
    )
    return SparseHamiltonian(matrix)


def lanczos_ground(
    h: SparseHamiltonian,
    seed: int = 0,
    tol: float = GROUND_RESIDUAL_TOL,
    max_restarts: int = 5,
) -> tuple[float, np.ndarray]:
    """Lowest eigenpair by a fully reorthogonalized Lanczos iteration.

    Convergence is declared on the explicit residual |H y - theta y| < tol.
    Breakdown before convergence restarts from a fresh random vector.
    """
    dim = h.dimension
    if dim == 1:
        return float(h.matrix[0, 0]), np.ones(1)
    rng = np.random.default_rng(seed)
    for _ in range(max_restarts):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        basis = [v]
        alphas: list[float] = []
        betas: list[float] = []
        for _ in range(dim):
            w = h.matvec(basis[-1])
            alpha = float(basis[-1] @ w)
            alphas.append(alpha)
            w = w - alpha * basis[-1]
            if betas:
                w = w - betas[-1] * basis[-2]
            stacked = np.array(basis)
            for _ in range(2):
                w = w - stacked.T @ (stacked @ w)
            theta, y = scipy.linalg.eigh_tridiagonal(
                alphas, betas, select="i", select_range=(0, 0)
            )
            ritz = stacked.T @ y[:, 0]
            ritz /= np.linalg.norm(ritz)
            residual = np.linalg.norm(h.matvec(ritz) - theta[0] * ritz)
            if residual < tol:
                return float(theta[0]), ritz
            beta = float(np.linalg.norm(w))
            if beta < 1e-14:
                break  # invariant subspace without the ground state; restart
            betas.append(beta)
            basis.append(w / beta)
    raise ArithmeticError("Lanczos failed to reach the residual tolerance")


def haydock_tridiagonal(
    h: SparseHamiltonian, v0: np.ndarray, depth: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal coefficients (a, b) of H in the Krylov chain seeded by v0.

    Stops at the requested depth or when the chain terminates (next
    off-diagonal below tolerance).  len(b) == len(a) - 1.
    """
    dim = h.dimension
    limit = dim if depth is None else min(depth, dim)
    if limit < 1:
        raise ValueError("depth must be a positive integer")
    norm0 = np.linalg.norm(v0)
    if norm0 == 0.0:
        raise ValueError("seed vector must be nonzero")
    v = np.asarray(v0, dtype=float) / norm0
    chain = [v]
    a_coeffs: list[float] = []
    b_coeffs: list[float] = []
    while True:
        w = h.matvec(chain[-1])
        a_coeffs.append(float(chain[-1] @ w))
        if len(a_coeffs) == limit:
            break
        w = w - a_coeffs[-1] * chain[-1]
        if b_coeffs:
            w = w - b_coeffs[-1] * chain[-2]
        stacked = np.array(chain)
        for _ in range(2):
            w = w - stacked.T @ (stacked @ w)
        beta = float(np.linalg.norm(w))
        if beta < HAYDOCK_TERMINATION_TOL:
            break
        b_coeffs.append(beta)
        chain.append(w / beta)
    return np.array(a_coeffs), np.array(b_coeffs)


def apply_impurity_operator(
    basis_src: SectorBasis,
    basis_dst: SectorBasis,
    vec: np.ndarray,
    spin: str,
    dagger: bool,
) -> np.ndarray:
    """Impurity creation/annihilation between sector representations.

    Signs: an up-spin impurity operator crosses the occupied up-bath modes;
    a down-spin one additionally crosses the whole up block.
    """
    if spin not in ("up", "down"):
        raise ValueError("spin must be 'up' or 'down'")
    out = np.zeros(basis_dst.dimension, dtype=float)
    for i, (u, d) in enumerate(basis_src.states):
        amp = vec[i]
        if amp == 0.0:
            continue
        if spin == "up":
            occupied = u & 1
            sign = -1 if (u >> 1).bit_count() & 1 else 1
            target = (u ^ 1, d)
        else:
            occupied = d & 1
            sign = -1 if u.bit_count() & 1 else 1
            target = (u, d ^ 1)
        if bool(occupied) == dagger:
            continue
        out[basis_dst.index[target]] += sign * amp
    return out


def embed_in_register(basis: SectorBasis, vec: np.ndarray, n_bath: int) -> np.ndarray:
    """Lift a sector vector onto the full qubit register amplitudes."""
    amps = np.zeros(1 << (2 * (n_bath + 1)), dtype=complex)
    for i, (u, d) in enumerate(basis.states):
        full = 0
        for site in range(basis.n_sites):
            if (u >> site) & 1:
                full |= 1 << qubit_index(site, "up", n_bath)
            if (d >> site) & 1:
                full |= 1 << qubit_index(site, "down", n_bath)
        amps[full] = vec[i]
    return amps


def sector_spectrum(model: AimModel, n_up: int, n_down: int) -> np.ndarray:
    basis = sector_basis(model, n_up, n_down)
    return np.linalg.eigvalsh(sparse_hamiltonian(model, basis).to_dense())


def exact_greens(
    model: AimModel,
    omega: np.ndarray | None = None,
    eta: float = 0.05,
    depth: int | None = None,
    seed: int = 0,
) -> GreensResult:
    """Numerically exact impurity Green's function and density of states.

    The Krylov chains run to termination unless a depth is requested, so the
    continued fractions agree with a dense resolvent to working precision.
    """
    half = model.n_sites // 2
    basis0 = sector_basis(model, half, half)
    h0 = sparse_hamiltonian(model, basis0)
    e0, psi0 = lanczos_ground(h0, seed=seed)
    if omega is None:
        omega = default_omega_grid(model)
    fractions: dict[tuple[str, str], ContinuedFraction] = {}
    greens_by_spin: dict[str, np.ndarray] = {}
    for spin in ("up", "down"):
        total = np.zeros(len(omega), dtype=complex)
        for branch in BRANCHES:
            dagger = branch == "particle"
            d_up = (1 if dagger else -1) if spin == "up" else 0
            d_dn = (1 if dagger else -1) if spin == "down" else 0
            n_up, n_down = half + d_up, half + d_dn
            if not (0 <= n_up <= model.n_sites and 0 <= n_down <= model.n_sites):
                fractions[(spin, branch)] = ContinuedFraction((), (), branch, 0.0, e0)
                continue
            basis_dst = sector_basis(model, n_up, n_down)
            seeded = apply_impurity_operator(basis0, basis_dst, psi0, spin, dagger)
            weight = float(seeded @ seeded)
            if weight < 1e-12:
                fractions[(spin, branch)] = ContinuedFraction((), (), branch, 0.0, e0)
                continue
            h_dst = sparse_hamiltonian(model, basis_dst)
            a_coeffs, b_coeffs = haydock_tridiagonal(h_dst, seeded, depth)
            fraction = ContinuedFraction(
                tuple(a_coeffs), tuple(b_coeffs**2), branch, weight, e0
            )
            fractions[(spin, branch)] = fraction
            total = total + np.array(
                [continued_fraction_eval(fraction, w + 1j * eta) for w in omega]
            )
        greens_by_spin[spin] = total
    curve = dos(greens_by_spin, np.asarray(omega, dtype=float), eta)
    return GreensResult(
        np.asarray(omega, dtype=float),
        greens_by_spin,
        fractions,
        curve,
        float(e0),
        records={"ground_dimension": basis0.dimension},
    )
