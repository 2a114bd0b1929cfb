"""Pauli-string algebra on integer symplectic masks.

A Pauli string on n qubits is stored as a pair of n-bit integers (x, z):
bit q of x set means the string acts with X on qubit q, bit q of z means Z,
both bits set mean Y.  The canonical operator attached to a mask pair is

    P(x, z) = i^{popcount(x & z)} * X^x Z^z,

which makes P Hermitian (I, X, Y, Z per qubit) and reduces products to XOR
plus an integer phase mod 4.  Sums of strings keep complex coefficients in a
dict keyed by (x, z), so multiplication of sums is a double loop of O(1) mask
products with coefficient accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

# drop |coeff| <= SIMPLIFY_TOL in simplify(); matches the working precision
# of the double-precision statevector backend
SIMPLIFY_TOL = 1e-12

_LETTER_TO_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_TO_LETTER = {v: k for k, v in _LETTER_TO_BITS.items()}

_PHASE = (1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j)


@dataclass(frozen=True)
class PauliString:
    """Single Pauli string (no coefficient) on a fixed qubit count."""

    n_qubits: int
    x: int
    z: int

    def __post_init__(self) -> None:
        limit = 1 << self.n_qubits
        if not (0 <= self.x < limit and 0 <= self.z < limit):
            raise ValueError("mask out of range for qubit count")

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """Build from a letter string, most-significant qubit first.

        ``PauliString.from_label("XIZ")`` acts with X on qubit 2 and Z on
        qubit 0.
        """
        n = len(label)
        x = z = 0
        for j, letter in enumerate(label):
            try:
                xb, zb = _LETTER_TO_BITS[letter]
            except KeyError:
                raise ValueError(f"invalid Pauli letter {letter!r}") from None
            q = n - 1 - j
            x |= xb << q
            z |= zb << q
        return cls(n, x, z)

    def label(self) -> str:
        """Letter string, most-significant qubit first."""
        return "".join(
            _BITS_TO_LETTER[((self.x >> q) & 1, (self.z >> q) & 1)]
            for q in range(self.n_qubits - 1, -1, -1)
        )

    def letter(self, qubit: int) -> str:
        return _BITS_TO_LETTER[((self.x >> qubit) & 1, (self.z >> qubit) & 1)]

    @property
    def support(self) -> int:
        """Mask of qubits acted on non-trivially."""
        return self.x | self.z

    @property
    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    @property
    def weight(self) -> int:
        return (self.x | self.z).bit_count()

    def commutes_with(self, other: "PauliString") -> bool:
        """Full (not qubit-wise) commutation of the two strings."""
        anti = ((self.x & other.z).bit_count() + (self.z & other.x).bit_count()) % 2
        return anti == 0

    def qubit_wise_commutes_with(self, other: "PauliString") -> bool:
        """True when on every shared qubit the letters are equal."""
        shared = self.support & other.support
        return ((self.x ^ other.x) | (self.z ^ other.z)) & shared == 0


def multiply_strings(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Product a*b as (phase, string) with phase in {1, i, -1, -i}."""
    if a.n_qubits != b.n_qubits:
        raise ValueError("qubit counts differ")
    x3 = a.x ^ b.x
    z3 = a.z ^ b.z
    w1 = (a.x & a.z).bit_count()
    w2 = (b.x & b.z).bit_count()
    w3 = (x3 & z3).bit_count()
    swaps = (a.z & b.x).bit_count()
    k = (w1 + w2 - w3 + 2 * swaps) % 4
    return _PHASE[k], PauliString(a.n_qubits, x3, z3)


class PauliSum:
    """Linear combination of Pauli strings with complex coefficients.

    Terms live in a dict keyed by (x, z) masks; the identity term is the
    key (0, 0).  Arithmetic never simplifies implicitly -- call
    :meth:`simplify` to drop negligible coefficients.
    """

    __slots__ = ("n_qubits", "_terms")

    def __init__(self, n_qubits: int, terms: dict[tuple[int, int], complex] | None = None):
        self.n_qubits = n_qubits
        self._terms: dict[tuple[int, int], complex] = dict(terms) if terms else {}

    @classmethod
    def from_terms(
        cls, n_qubits: int, terms: Iterable[tuple[complex, PauliString]]
    ) -> "PauliSum":
        out = cls(n_qubits)
        for coeff, string in terms:
            out.add_term(coeff, string)
        return out

    @classmethod
    def identity(cls, n_qubits: int, coeff: complex = 1.0) -> "PauliSum":
        return cls(n_qubits, {(0, 0): complex(coeff)})

    def copy(self) -> "PauliSum":
        return PauliSum(self.n_qubits, self._terms)

    def add_term(self, coeff: complex, string: PauliString) -> None:
        if string.n_qubits != self.n_qubits:
            raise ValueError("qubit counts differ")
        key = (string.x, string.z)
        self._terms[key] = self._terms.get(key, 0.0) + complex(coeff)

    def coefficient(self, string: PauliString) -> complex:
        return self._terms.get((string.x, string.z), 0.0 + 0.0j)

    @property
    def identity_coefficient(self) -> complex:
        return self._terms.get((0, 0), 0.0 + 0.0j)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[tuple[complex, PauliString]]:
        for (x, z), coeff in self._terms.items():
            yield coeff, PauliString(self.n_qubits, x, z)

    def terms_sorted(self) -> list[tuple[complex, PauliString]]:
        """Deterministic order: descending |coeff|, then mask lexicographic."""
        items = sorted(self._terms.items(), key=lambda kv: (-abs(kv[1]), kv[0]))
        return [(c, PauliString(self.n_qubits, x, z)) for (x, z), c in items]

    def n_pauli(self, include_identity: bool = False) -> int:
        n = len(self._terms)
        if not include_identity and (0, 0) in self._terms:
            n -= 1
        return n

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit counts differ")
        out = self.copy()
        for key, coeff in other._terms.items():
            out._terms[key] = out._terms.get(key, 0.0) + coeff
        return out

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (other * -1.0)

    def __mul__(self, other):
        if isinstance(other, PauliSum):
            return self._mul_sum(other)
        out = PauliSum(self.n_qubits)
        for key, coeff in self._terms.items():
            out._terms[key] = coeff * other
        return out

    __rmul__ = __mul__

    def _mul_sum(self, other: "PauliSum") -> "PauliSum":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit counts differ")
        n = self.n_qubits
        out: dict[tuple[int, int], complex] = {}
        for (x1, z1), c1 in self._terms.items():
            w1 = (x1 & z1).bit_count()
            for (x2, z2), c2 in other._terms.items():
                x3 = x1 ^ x2
                z3 = z1 ^ z2
                k = (
                    w1
                    + (x2 & z2).bit_count()
                    - (x3 & z3).bit_count()
                    + 2 * (z1 & x2).bit_count()
                ) % 4
                key = (x3, z3)
                val = c1 * c2 * _PHASE[k]
                acc = out.get(key)
                out[key] = val if acc is None else acc + val
        return PauliSum(n, out)

    def simplify(self, tol: float = SIMPLIFY_TOL) -> "PauliSum":
        """Drop terms with |coeff| <= tol."""
        return PauliSum(
            self.n_qubits,
            {k: c for k, c in self._terms.items() if abs(c) > tol},
        )

    def is_hermitian(self, tol: float = SIMPLIFY_TOL) -> bool:
        return all(abs(c.imag) <= tol for c in self._terms.values())

    def dagger(self) -> "PauliSum":
        return PauliSum(self.n_qubits, {k: c.conjugate() for k, c in self._terms.items()})

    # -- dense / vector backends (oracle checks and expectation values) ----

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Apply the operator to a dense statevector of length 2**n_qubits."""
        dim = 1 << self.n_qubits
        if vec.shape != (dim,):
            raise ValueError(f"expected vector of length {dim}")
        idx = np.arange(dim, dtype=np.int64)
        out = np.zeros(dim, dtype=complex)
        for (x, z), coeff in self._terms.items():
            w = (x & z).bit_count()
            # P|b> = i^w (-1)^{popcount(z & b)} |b ^ x>
            signs = 1 - 2 * (np.bitwise_count(idx & z).astype(np.int64) & 1)
            out[idx ^ x] += (coeff * _PHASE[w % 4]) * signs * vec
        return out

    def to_dense(self) -> np.ndarray:
        dim = 1 << self.n_qubits
        mat = np.zeros((dim, dim), dtype=complex)
        eye = np.eye(dim, dtype=complex)
        for col in range(dim):
            mat[:, col] = self.apply(eye[:, col])
        return mat

    def to_sparse(self):
        """Sparse CSR matrix; import deferred so scipy stays optional here."""
        from scipy.sparse import coo_matrix

        dim = 1 << self.n_qubits
        idx = np.arange(dim, dtype=np.int64)
        rows = []
        cols = []
        data = []
        for (x, z), coeff in self._terms.items():
            w = (x & z).bit_count()
            signs = 1 - 2 * (np.bitwise_count(idx & z).astype(np.int64) & 1)
            rows.append(idx ^ x)
            cols.append(idx)
            data.append((coeff * _PHASE[w % 4]) * signs)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        data = np.concatenate(data)
        return coo_matrix((data, (rows, cols)), shape=(dim, dim)).tocsr()

    # -- text serialization -------------------------------------------------

    def to_text(self) -> str:
        """One term per line: coeff_re coeff_im letters (MSQ first)."""
        lines = [f"# pauli sum on {self.n_qubits} qubits"]
        for coeff, string in self.terms_sorted():
            lines.append(f"{coeff.real!r} {coeff.imag!r} {string.label()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PauliSum":
        n_qubits = None
        out = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"malformed pauli line: {raw!r}")
            re_s, im_s, label = parts
            if n_qubits is None:
                n_qubits = len(label)
                out = cls(n_qubits)
            elif len(label) != n_qubits:
                raise ValueError("inconsistent qubit counts in pauli text")
            out.add_term(complex(float(re_s), float(im_s)), PauliString.from_label(label))
        if out is None:
            raise ValueError("no pauli terms found")
        return out

    def __repr__(self) -> str:
        return f"PauliSum(n_qubits={self.n_qubits}, n_terms={len(self._terms)})"
