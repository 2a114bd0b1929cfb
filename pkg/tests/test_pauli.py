"""Symplectic Pauli algebra against dense matrix oracles."""

import numpy as np
import pytest

from aimsolve.pauli import PauliString, PauliSum, multiply_strings

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
MATS = {"I": I2, "X": X, "Y": Y, "Z": Z}


def dense_string(label: str) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for letter in label:
        out = np.kron(out, MATS[letter])
    return out


def test_label_round_trip():
    for label in ("I", "X", "ZZXY", "IXIZ", "YYYY"):
        s = PauliString.from_label(label)
        assert s.label() == label
        assert s.n_qubits == len(label)


def test_letter_uses_qubit_order():
    # Labels are most-significant qubit first: qubit 0 is the last character.
    s = PauliString.from_label("XYZ")
    assert s.letter(0) == "Z"
    assert s.letter(1) == "Y"
    assert s.letter(2) == "X"


def test_weight_support_identity():
    s = PauliString.from_label("IXZI")
    assert s.weight == 2
    assert not s.is_identity
    assert PauliString.from_label("III").is_identity
    # support has a bit set exactly on the non-identity qubits
    assert s.support == (1 << 1) | (1 << 2)


def test_from_label_rejects_bad_letters():
    with pytest.raises(ValueError):
        PauliString.from_label("XQ")
    with pytest.raises(ValueError):
        PauliString.from_label("xz")
    # an empty label is the zero-qubit identity, not an error
    assert PauliString.from_label("").is_identity


def test_single_qubit_multiplication_table():
    """XY = iZ and cyclic variants, squares to identity."""
    table = {
        ("X", "Y"): (1j, "Z"),
        ("Y", "Z"): (1j, "X"),
        ("Z", "X"): (1j, "Y"),
        ("Y", "X"): (-1j, "Z"),
        ("Z", "Y"): (-1j, "X"),
        ("X", "Z"): (-1j, "Y"),
        ("X", "X"): (1.0, "I"),
        ("Y", "Y"): (1.0, "I"),
        ("Z", "Z"): (1.0, "I"),
        ("I", "X"): (1.0, "X"),
    }
    for (a, b), (phase, product) in table.items():
        got_phase, got = multiply_strings(PauliString.from_label(a), PauliString.from_label(b))
        assert got.label() == product
        assert got_phase == pytest.approx(phase)


def test_multiplication_matches_dense_on_random_strings():
    rng = np.random.default_rng(7)
    letters = np.array(list("IXYZ"))
    for _ in range(50):
        la = "".join(rng.choice(letters, size=4))
        lb = "".join(rng.choice(letters, size=4))
        phase, product = multiply_strings(PauliString.from_label(la), PauliString.from_label(lb))
        dense = dense_string(la) @ dense_string(lb)
        assert np.allclose(phase * dense_string(product.label()), dense, atol=1e-12)


def test_commutation_predicates():
    xx = PauliString.from_label("XX")
    zz = PauliString.from_label("ZZ")
    zi = PauliString.from_label("ZI")
    assert xx.commutes_with(zz)  # two anticommuting sites cancel
    assert not xx.qubit_wise_commutes_with(zz)
    assert not xx.commutes_with(zi)
    assert zz.qubit_wise_commutes_with(zi)
    assert zz.qubit_wise_commutes_with(PauliString.from_label("II"))


def test_sum_merges_duplicate_terms():
    s = PauliSum.from_terms(
        2, [(1.0, PauliString.from_label("XZ")), (2.5, PauliString.from_label("XZ"))]
    )
    assert s.n_pauli() == 1
    assert s.coefficient(PauliString.from_label("XZ")) == pytest.approx(3.5)


def test_simplify_drops_small_terms():
    s = PauliSum.from_terms(
        1, [(1.0, PauliString.from_label("X")), (1e-15, PauliString.from_label("Z"))]
    )
    assert s.simplify().n_pauli() == 1


def test_identity_handling():
    s = PauliSum.identity(3, 2.0)
    s.add_term(1.0, PauliString.from_label("XYZ"))
    assert s.identity_coefficient == pytest.approx(2.0)
    assert s.n_pauli() == 1
    assert s.n_pauli(include_identity=True) == 2


def test_sum_product_matches_dense():
    rng = np.random.default_rng(11)
    letters = np.array(list("IXYZ"))

    def random_sum(n_terms):
        return PauliSum.from_terms(
            3,
            [
                (complex(rng.normal(), rng.normal()), PauliString.from_label("".join(rng.choice(letters, size=3))))
                for _ in range(n_terms)
            ],
        )

    for _ in range(10):
        a, b = random_sum(4), random_sum(5)
        assert np.allclose((a * b).to_dense(), a.to_dense() @ b.to_dense(), atol=1e-12)
        assert np.allclose((a + b).to_dense(), a.to_dense() + b.to_dense(), atol=1e-12)
        assert np.allclose((a - b).to_dense(), a.to_dense() - b.to_dense(), atol=1e-12)
        assert np.allclose((2.5 * a).to_dense(), 2.5 * a.to_dense(), atol=1e-12)


def test_apply_equals_dense_matvec():
    rng = np.random.default_rng(3)
    s = PauliSum.from_terms(
        4,
        [
            (0.5, PauliString.from_label("XZYI")),
            (-1.25, PauliString.from_label("ZZII")),
            (0.75j, PauliString.from_label("YXXY")),
        ],
    )
    for _ in range(5):
        vec = rng.normal(size=16) + 1j * rng.normal(size=16)
        assert np.allclose(s.apply(vec), s.to_dense() @ vec, atol=1e-12)


def test_to_sparse_agrees_with_dense():
    s = PauliSum.from_terms(
        3, [(1.0, PauliString.from_label("XIZ")), (2.0, PauliString.from_label("IYI"))]
    )
    assert np.allclose(s.to_sparse().toarray(), s.to_dense(), atol=1e-12)


def test_hermiticity_and_dagger():
    h = PauliSum.from_terms(
        2, [(1.0, PauliString.from_label("XX")), (0.5, PauliString.from_label("ZI"))]
    )
    assert h.is_hermitian()
    g = PauliSum.from_terms(2, [(1.0j, PauliString.from_label("XX"))])
    assert not g.is_hermitian()
    assert np.allclose(g.dagger().to_dense(), g.to_dense().conj().T, atol=1e-12)


def test_text_round_trip():
    s = PauliSum.from_terms(
        3,
        [
            (1.5, PauliString.from_label("XYZ")),
            (-0.25 + 0.5j, PauliString.from_label("IIZ")),
            (3.0, PauliString.from_label("III")),
        ],
    )
    restored = PauliSum.from_text(s.to_text())
    assert restored.n_qubits == 3
    for coeff, string in s:
        assert restored.coefficient(string) == pytest.approx(coeff)


def test_terms_sorted_is_deterministic():
    s = PauliSum.from_terms(
        2,
        [
            (0.5, PauliString.from_label("ZZ")),
            (2.0, PauliString.from_label("XX")),
            (1.0, PauliString.from_label("YY")),
        ],
    )
    assert s.terms_sorted() == s.terms_sorted()
