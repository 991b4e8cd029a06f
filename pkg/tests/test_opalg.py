import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iqsim.errors import DimensionMismatch, IndexOutOfRange, SectorViolation
from iqsim.opalg import (
    FERMION,
    MixedState,
    OperatorSum,
    QuantumState,
    Sector,
    build_matrix,
    dense_matrix,
    dwave_correlator,
    dwave_sum,
    expectation,
    fermion,
    hopping,
    hubbard_ladder,
    jordan_wigner,
    ladder_density_pairs,
    ladder_hopping_diagonal,
    ladder_hopping_x,
    number_op,
    pauli,
    rung_singlet_annihilator,
    spin_sum,
)

from conftest import random_pauli_sum

PM = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]),
}


def kron_string(letters):
    out = np.eye(1)
    for ch in letters:
        out = np.kron(out, PM[ch])
    return out


def dense_oracle(op: OperatorSum):
    return sum(t.coefficient * kron_string(t.letters) for t in op.terms)


# -- Pauli algebra ------------------------------------------------------------


def test_pauli_product_rules():
    x, y, z = (pauli(1, {0: a}) for a in "XYZ")
    assert (x * y).coefficient_map() == {"Z": 1j}
    assert (y * x).coefficient_map() == {"Z": -1j}
    assert (z * z).coefficient_map() == {"I": 1}


@given(st.integers(0, 10_000))
def test_spin_matrix_matches_kronecker_oracle(seed):
    rng = np.random.default_rng(seed)
    op = random_pauli_sum(rng, 4, hermitian=False)
    assert np.allclose(dense_matrix(op, Sector.spin(4)), dense_oracle(op), atol=1e-12)


@given(st.integers(0, 10_000))
def test_product_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    a = random_pauli_sum(rng, 3, 4, hermitian=False)
    b = random_pauli_sum(rng, 3, 4, hermitian=False)
    sec = Sector.spin(3)
    assert np.allclose(dense_matrix(a * b, sec), dense_matrix(a, sec) @ dense_matrix(b, sec), atol=1e-12)


def test_adjoint_and_hermiticity():
    op = spin_sum(2, [("XY", 0.5), ("YX", -2.0)])
    assert op.is_hermitian()
    assert not spin_sum(2, [("XY", 1j)]).is_hermitian()
    m = dense_matrix(spin_sum(2, [("XY", 1 + 2j), ("ZI", 0.5)]).adjoint(), Sector.spin(2))
    assert np.allclose(m, dense_matrix(spin_sum(2, [("XY", 1 + 2j), ("ZI", 0.5)]), Sector.spin(2)).conj().T)


def test_site_zero_is_most_significant_bit():
    sec = Sector.spin(3)
    z0 = dense_matrix(pauli(3, {0: "Z"}), sec)
    # basis state 4 = 0b100 has site 0 flipped (Z = -1)
    assert z0[4, 4] == -1 and z0[0, 0] == 1


def test_mismatched_lengths_rejected():
    with pytest.raises(DimensionMismatch):
        pauli(2, {0: "X"}) + pauli(3, {0: "X"})
    with pytest.raises(DimensionMismatch):
        build_matrix(pauli(2, {0: "X"}), Sector.spin(3))


# -- fermions -----------------------------------------------------------------


def test_canonical_anticommutation():
    n = 2
    for i in range(n):
        for si in (0, 1):
            for j in range(n):
                for sj in (0, 1):
                    c_dag = fermion(n, [(i, si, True)])
                    c = fermion(n, [(j, sj, False)])
                    anti = (c_dag * c + c * c_dag).coefficient_map()
                    expected = {(): 1} if (i, si) == (j, sj) else {}
                    assert {k: v for k, v in anti.items() if abs(v) > 1e-14} == expected


def test_repeated_operator_vanishes():
    assert fermion(2, [(0, 0, True), (0, 0, True)]).is_empty


def test_site_out_of_range():
    with pytest.raises(IndexOutOfRange):
        fermion(2, [(2, 0, True)])


@given(st.integers(0, 10_000))
def test_jordan_wigner_matches_fock_matrix(seed):
    rng = np.random.default_rng(seed)
    n = 2
    op = OperatorSum.zero(FERMION, n)
    for _ in range(4):
        i, j = rng.integers(0, n, 2)
        s = int(rng.integers(0, 2))
        op = op + hopping(n, int(i), int(j), s).scale(rng.normal())
        op = op + number_op(n, int(i), s) * number_op(n, int(j), 1 - s) * rng.normal()
    fock = dense_matrix(op, Sector.fermion(n))
    spin = dense_matrix(jordan_wigner(op), Sector.spin(2 * n))
    assert np.allclose(fock, spin, atol=1e-12)


def test_hubbard_dimer_ground_energy():
    # two sites at half filling: E0 = (U - sqrt(U^2 + 16 t^2)) / 2
    t, U = 1.0, 4.0
    H = hopping(2, 0, 1, 0) * (-t) + hopping(2, 0, 1, 1) * (-t)
    for s in range(2):
        H = H + number_op(2, s, 0) * number_op(2, s, 1) * U
    e = np.linalg.eigvalsh(dense_matrix(H, Sector.fermion(2, 1, 1)))
    assert e[0] == pytest.approx((U - np.sqrt(U**2 + 16 * t**2)) / 2, abs=1e-12)


def test_sector_matrix_is_block_of_fock_matrix():
    H = hubbard_ladder(2, -1.0, -1.0, 4.0)
    full = Sector.fermion(4)
    sub = Sector.fermion(4, 2, 1)
    idx = full.index_of(sub.basis())
    assert np.allclose(dense_matrix(H, full)[np.ix_(idx, idx)], dense_matrix(H, sub), atol=1e-13)


def test_number_changing_operator_violates_sector():
    with pytest.raises(SectorViolation):
        build_matrix(fermion(2, [(0, 0, True)]), Sector.fermion(2, 1, 1))


def test_sector_dimensions():
    assert Sector.fermion(8, 2, 2).dimension == 28 * 28
    assert Sector.spin(8, 0).dimension == 70
    with pytest.raises(ValueError):
        Sector.spin(3, 0)


# -- ladder observables ---------------------------------------------------------


def test_ladder_terms_are_hermitian_and_number_conserving():
    sec = Sector.fermion(6, 2, 1)
    for op in (ladder_hopping_x(3), ladder_hopping_diagonal(3), ladder_density_pairs(3, "d"), dwave_sum(3)):
        assert op.is_hermitian()
        m = dense_matrix(op, sec)
        assert np.allclose(m, m.conj().T)


def test_dwave_correlator_is_real_part_of_pair_hopping(rng):
    R = 3
    sec = Sector.fermion(2 * R, 2, 2)
    v = rng.normal(size=sec.dimension) + 1j * rng.normal(size=sec.dimension)
    psi = QuantumState(sec, v / np.linalg.norm(v))
    d0, d2 = rung_singlet_annihilator(R, 0), rung_singlet_annihilator(R, 2)
    raw = expectation(psi, d0.adjoint() * d2)
    assert expectation(psi, dwave_correlator(0, 2, R)) == pytest.approx(raw.real, abs=1e-12)


def test_ladder_reference_energy_frozen():
    # frozen from dense diagonalization; the dimension is 784
    H = hubbard_ladder(4, -1.0, -1.0, 4.0)
    e = np.linalg.eigvalsh(dense_matrix(H, Sector.fermion(8, 2, 2)))
    assert e[0] == pytest.approx(-7.274487013496249, abs=1e-9)


# -- states and serialization -----------------------------------------------------


def test_mixed_state_expectation_and_purity(rng):
    sec = Sector.spin(3)
    q, _ = np.linalg.qr(rng.normal(size=(8, 3)) + 1j * rng.normal(size=(8, 3)))
    p = np.array([0.5, 0.3, 0.2])
    rho = MixedState(sec, p, q)
    op = random_pauli_sum(rng, 3)
    dm = rho.density_matrix()
    assert expectation(rho, op) == pytest.approx(np.trace(dm @ dense_matrix(op, sec)), abs=1e-12)
    assert rho.purity == pytest.approx(np.real(np.trace(dm @ dm)), abs=1e-14)


def test_embed_rejects_foreign_basis():
    psi = QuantumState.basis_state(Sector.spin(2, 0), 0b01)
    assert psi.embed(Sector.spin(2)).amplitudes[1] == 1
    with pytest.raises(SectorViolation):
        QuantumState.basis_state(Sector.spin(2, 0), 0b11)


def test_json_round_trips(rng):
    op = random_pauli_sum(rng, 3, hermitian=False)
    assert OperatorSum.from_json(op.to_json()) == op
    ferm = hubbard_ladder(2, -1.0, -0.5, 3.0)
    back = OperatorSum.from_dict(json.loads(json.dumps(ferm.to_dict())))
    assert back.coefficient_map() == ferm.coefficient_map()
    sec = Sector.fermion(4, 1, 1)
    v = rng.normal(size=sec.dimension) + 1j * rng.normal(size=sec.dimension)
    st_ = QuantumState(sec, v)
    back = QuantumState.from_dict(json.loads(json.dumps(st_.to_dict())))
    assert back.sector == sec and np.array_equal(back.amplitudes, st_.amplitudes)
