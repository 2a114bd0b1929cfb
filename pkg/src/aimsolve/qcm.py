"""Energy corrections and tridiagonal coefficients from Hamiltonian moments.

Four moments <H>..<H^4> of a trial state determine its connected cumulants,
an infimum estimate of the nearby eigenvalue, and the leading 1/N expansion
of the Lanczos tridiagonal seeded by the state (N counts spin-orbitals, the
extensive system size the cumulants scale with).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

DEGENERACY_TOL = 1e-10


class MomentDomainError(ValueError):
    """Raised when a moment combination has no real correction."""


@dataclass(frozen=True)
class CumulantSet:
    c1: float
    c2: float
    c3: float
    c4: float
    source_moments: tuple[float, float, float, float]
    system_size_n: int

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.c1, self.c2, self.c3, self.c4)


def cumulants(moments: tuple[float, ...], system_size_n: int) -> CumulantSet:
    """Connected cumulants from raw moments <H^1>..<H^4>.

    c_m = <H^m> - sum_{p=0}^{m-2} binom(m-1, p) c_{p+1} <H^{m-1-p}>.
    """
    if len(moments) != 4:
        raise ValueError("exactly four moments are required")
    if system_size_n < 1:
        raise ValueError("system_size_n must be a positive integer")
    m = [1.0] + [float(v) for v in moments]  # m[k] = <H^k>, m[0] = 1
    c = [0.0] * 5
    for order in range(1, 5):
        total = m[order]
        for p in range(order - 1):
            total -= math.comb(order - 1, p) * c[p + 1] * m[order - 1 - p]
        c[order] = total
    return CumulantSet(c[1], c[2], c[3], c[4], tuple(float(v) for v in moments), system_size_n)


def e_inf(c: CumulantSet) -> float:
    """Infimum energy estimate from the first four cumulants.

    A vanishing (or sampled-negative) variance means the trial state is an
    eigenstate to working precision and the raw energy is returned.
    """
    if c.c2 < DEGENERACY_TOL:
        return c.c1
    discriminant = 3.0 * c.c3**2 - 2.0 * c.c2 * c.c4
    if discriminant < 0.0:
        raise MomentDomainError("complex infimum: 3*c3^2 - 2*c2*c4 < 0")
    denominator = c.c3**2 - c.c2 * c.c4
    if abs(denominator) < DEGENERACY_TOL:
        raise MomentDomainError("degenerate denominator: c3^2 - c2*c4 ~ 0")
    return c.c1 - (c.c2**2 / denominator) * (math.sqrt(discriminant) - c.c3)


def lanczos_from_cumulants(c: CumulantSet, ell: int) -> tuple[float, float]:
    """(a_ell, b_ell^2) of the cumulant-seeded tridiagonal at leading 1/N."""
    if ell < 0:
        raise ValueError("ell must be a nonnegative integer")
    if ell == 0:
        return (c.c1, 0.0)
    if c.c2 <= 0.0:
        raise MomentDomainError("nonpositive variance: tridiagonal undefined beyond depth 0")
    n = float(c.system_size_n)
    a = c.c1 + ell * (c.c3 / c.c2) / n
    b_sq = ell * c.c2 + 0.5 * ell * (ell - 1) * ((c.c2 * c.c4 - c.c3**2) / (2.0 * c.c2**2)) / n
    return (a, b_sq)


def correction_record(e_vqe: float, moments_values: tuple[float, ...], system_size_n: int) -> dict:
    """JSON-ready record of the moment correction applied to a VQE energy.

    Degenerate or out-of-domain moment combinations degrade gracefully: the
    record carries a flag and e_inf of None instead of raising, so sampled
    pipelines keep running and downstream consumers fall back to e_vqe.
    """
    flags: list[str] = []
    cums = cumulants(moments_values, system_size_n)
    if cums.c2 < 0.0:
        flags.append("variance_clamped")
    value: float | None
    try:
        value = e_inf(cums)
        if cums.c2 < DEGENERACY_TOL:
            flags.append("eigenstate_branch")
    except MomentDomainError as err:
        flags.append(str(err).split(":")[0].replace(" ", "_"))
        value = None
    return {
        "e_vqe": float(e_vqe),
        "e_inf": value,
        "cumulants": list(cums.as_tuple()),
        "moments": list(cums.source_moments),
        "system_size_n": system_size_n,
        "flags": flags,
    }
