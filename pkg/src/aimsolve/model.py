"""Single-impurity Anderson model parameters.

The model is a single interacting impurity level coupled to a finite star of
non-interacting bath sites,

    H = eps0 * (n_imp_up + n_imp_dn) + U * n_imp_up * n_imp_dn
        + sum_k eps_k * (n_k_up + n_k_dn)
        + V * sum_{k,s} (c_imp_s^dag c_k_s + c_k_s^dag c_imp_s),

restricted throughout this package to an odd number of bath sites so that the
half-filled, S_z = 0 sector exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class AimModel:
    """Anderson impurity model with a star geometry and uniform hybridization.

    Attributes
    ----------
    n_bath : int
        Number of bath sites, positive and odd.
    hubbard_u : float
        On-site interaction U on the impurity, non-negative.
    impurity_energy : float
        Impurity level energy eps0.  The particle-hole symmetric point is
        eps0 = -U/2; use :meth:`particle_hole_symmetric` to construct it.
    bath_energies : tuple[float, ...]
        Bath level energies (eps_1, ..., eps_{n_bath}).
    hybridization : float
        Uniform impurity-bath hopping V, positive.
    """

    n_bath: int
    hubbard_u: float
    impurity_energy: float
    bath_energies: tuple[float, ...] = field(default=())
    hybridization: float = 1.0

    def __post_init__(self) -> None:
        if self.n_bath < 1 or self.n_bath % 2 == 0:
            raise ValueError(f"n_bath must be a positive odd integer, got {self.n_bath}")
        if self.hubbard_u < 0:
            raise ValueError(f"hubbard_u must be non-negative, got {self.hubbard_u}")
        if self.hybridization <= 0:
            raise ValueError(f"hybridization must be positive, got {self.hybridization}")
        if not self.bath_energies:
            object.__setattr__(self, "bath_energies", (0.0,) * self.n_bath)
        if len(self.bath_energies) != self.n_bath:
            raise ValueError(
                f"expected {self.n_bath} bath energies, got {len(self.bath_energies)}"
            )
        values = (self.hubbard_u, self.impurity_energy, self.hybridization) + self.bath_energies
        if not all(math.isfinite(v) for v in values):
            raise ValueError("model parameters must be finite")

    @classmethod
    def particle_hole_symmetric(
        cls,
        n_bath: int,
        hubbard_u: float,
        hybridization: float = 1.0,
        bath_energies: tuple[float, ...] = (),
    ) -> "AimModel":
        """Model at the particle-hole symmetric point eps0 = -U/2."""
        return cls(
            n_bath=n_bath,
            hubbard_u=hubbard_u,
            impurity_energy=-hubbard_u / 2.0,
            bath_energies=bath_energies,
            hybridization=hybridization,
        )

    @property
    def n_sites(self) -> int:
        """Impurity plus bath sites."""
        return self.n_bath + 1

    @property
    def n_qubits(self) -> int:
        """Spin-orbital count, one qubit each under Jordan-Wigner."""
        return 2 * self.n_sites

    @property
    def n_filled(self) -> int:
        """Electron count at half filling."""
        return self.n_sites

    @property
    def n_up_half(self) -> int:
        """Per-spin electron count in the half-filled S_z = 0 sector."""
        return self.n_sites // 2
