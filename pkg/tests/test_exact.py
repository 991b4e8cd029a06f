import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iqsim import shl
from iqsim.exact import (
    PoleList,
    Susceptibility,
    absorption_peaks,
    adiabatic_unprepare,
    diagonalize,
    energy_variance,
    fidelity,
    gibbs_state,
    ground_state,
    kubo_poles,
    kubo_susceptibility,
    propagate,
    spectrum,
    structure_peaks,
    subspace_fidelity,
)
from iqsim.opalg import QuantumState, Sector, dense_matrix, pauli, spin_sum

from conftest import random_pauli_sum


def tfim(n, g):
    entries = [("".join("Z" if k in (i, (i + 1) % n) else "I" for k in range(n)), -1.0) for i in range(n)]
    entries += [("".join("X" if k == i else "I" for k in range(n)), -g) for i in range(n)]
    return spin_sum(n, entries)


def test_ground_state_matches_numpy():
    H = tfim(6, 0.7)
    gs = ground_state(H, Sector.spin(6))
    e = np.linalg.eigvalsh(dense_matrix(H, Sector.spin(6)))
    assert gs.energy == pytest.approx(e[0], abs=1e-12)
    assert gs.gap == pytest.approx(e[1] - e[0], abs=1e-10)
    assert not gs.degenerate


def test_lanczos_agrees_with_dense():
    H = tfim(8, 1.3)
    dense = ground_state(H, Sector.spin(8))
    sparse = ground_state(H, Sector.spin(8), dense_limit=0)
    assert sparse.energy == pytest.approx(dense.energy, abs=1e-10)
    assert fidelity(sparse.state, dense.state) == pytest.approx(1.0, abs=1e-8)


def test_degenerate_ground_space_flagged():
    H = spin_sum(2, [("ZZ", -1.0)])
    gs = ground_state(H, Sector.spin(2))
    assert gs.degenerate
    assert subspace_fidelity(gs.state, H) == pytest.approx(1.0)


def test_spectrum_slice_sorted():
    s = spectrum(tfim(4, 0.5), Sector.spin(4), k=5)
    assert len(s.states) == 5 and np.all(np.diff(s.energies) >= 0)


def test_eigenstate_has_zero_variance():
    H = tfim(5, 0.9)
    assert abs(energy_variance(ground_state(H, Sector.spin(5)).state, H)) < 1e-10


@pytest.mark.parametrize("T", [1e-3, 1e-2])
def test_gibbs_zero_temperature_limit(T):
    H = tfim(6, 1.5)  # gap near 1
    rho = gibbs_state(H, T, Sector.spin(6))
    gs = ground_state(H, Sector.spin(6))
    w = np.abs(rho.vectors.conj().T @ gs.state.amplitudes) ** 2
    assert float(rho.probabilities @ w) >= 1 - 1e-6


def test_gibbs_high_temperature_is_maximally_mixed():
    rho = gibbs_state(tfim(4, 1.0), 1e6, Sector.spin(4))
    assert rho.purity == pytest.approx(1 / 16, rel=1e-4)


def test_gibbs_truncation_renormalizes():
    rho = gibbs_state(tfim(6, 0.8), 0.5, Sector.spin(6), min_weight=1e-6, mass=0.999)
    assert len(rho.probabilities) < 64
    assert rho.probabilities.sum() == pytest.approx(1.0, abs=1e-14)


# -- linear response -------------------------------------------------------------


@given(st.integers(0, 10_000))
def test_kubo_antisymmetry(seed):
    # chi(-w) = conj(chi(w)) for a Hermitian drive equal to the probe
    rng = np.random.default_rng(seed)
    H = random_pauli_sum(rng, 3, 8)
    V = random_pauli_sum(rng, 3, 3)
    gs = ground_state(H, Sector.spin(3))
    grid = np.linspace(-5, 5, 201)
    chi = kubo_susceptibility(H, gs.state, V, V, grid, 0.1).values
    mirror = kubo_susceptibility(H, gs.state, V, V, -grid, 0.1).values
    assert np.abs(mirror - chi.conj()).max() < 1e-12


def test_kubo_lehmann_matches_resolvent():
    # direct resolvent oracle: chi(z) = <O (z - (H - E0))^-1 V> - <V (z + (H - E0))^-1 O>
    rng = np.random.default_rng(3)
    sec = Sector.spin(3)
    H = random_pauli_sum(rng, 3, 8)
    V, O = random_pauli_sum(rng, 3, 3), random_pauli_sum(rng, 3, 3)
    gs = ground_state(H, sec)
    Hm, Vm, Om = (dense_matrix(x, sec) for x in (H, V, O))
    psi = gs.state.amplitudes
    E = Hm - gs.energy * np.eye(8)
    for w in (-2.0, 0.3, 4.1):
        z = w + 0.05j
        ref = psi.conj() @ Om @ np.linalg.solve(z * np.eye(8) - E, Vm @ psi)
        ref -= psi.conj() @ Vm @ np.linalg.solve(z * np.eye(8) + E, Om @ psi)
        val = kubo_poles(H, gs.state, V, O).evaluate([w], 0.05)[0]
        assert val == pytest.approx(ref, abs=1e-12)


def test_two_spin_poles_at_closed_form():
    H = shl.two_spin_model(1.0, 0.5, 0.3)
    gs = ground_state(H, Sector.spin(2))
    X = shl.two_spin_field("X")
    peaks = absorption_peaks(kubo_poles(H, gs.state, X, X))
    assert peaks.omegas == pytest.approx([3.0])
    assert peaks.residues.real == pytest.approx([1.0])


def test_magnon_peaks_follow_dispersion():
    N, Bz, J = 6, 1.0, 1.5
    H = shl.heisenberg_chain(N, Bz, J)
    gs = ground_state(H, Sector.spin(N))
    for k, p in structure_peaks(H, gs.state, shl.momenta(N)).items():
        assert len(p.omegas) == 1
        assert p.omegas[0] == pytest.approx(shl.magnon_energy(k, Bz, J), abs=1e-10)


def test_pole_list_merging_and_round_trip():
    p = PoleList([1.0, 1.0 + 1e-12, -2.0, 3.0], [0.5, 0.25, 1.0, 0.0])
    a = absorption_peaks(p)
    assert a.omegas == pytest.approx([1.0]) and a.residues == pytest.approx([0.75])
    back = PoleList.from_dict(json.loads(json.dumps(p.to_dict())))
    assert np.array_equal(back.omegas, p.omegas) and np.array_equal(back.residues, p.residues)


def test_susceptibility_round_trip():
    s = Susceptibility(np.linspace(0, 1, 5), np.arange(5) + 1j * np.arange(5)[::-1], 0.05)
    back = Susceptibility.from_dict(json.loads(s.to_json()))
    assert np.array_equal(back.values, s.values) and back.broadening == s.broadening
    assert s.to_csv().splitlines()[0] == "omega,re,im"


# -- dynamics ----------------------------------------------------------------------


def test_propagate_is_unitary_and_matches_expm():
    H = tfim(4, 0.6)
    psi = QuantumState.basis_state(Sector.spin(4), 0)
    out = propagate(H, psi, 0.7)
    e, v = np.linalg.eigh(dense_matrix(H, Sector.spin(4)))
    ref = v @ (np.exp(-0.7j * e) * (v.conj().T @ psi.amplitudes))
    assert np.allclose(out.amplitudes, ref, atol=1e-12)


def test_slow_sweep_follows_ground_state():
    # adiabatic theorem: slow interpolation between gapped TFIMs keeps the ground state
    sec = Sector.spin(4)
    Ha, Hb = tfim(4, 2.0), tfim(4, 1.2)
    start = ground_state(Ha, sec).state
    target = ground_state(Hb, sec).state
    _, fast = adiabatic_unprepare(Ha, Hb, start, 0.1, 10, target=target)
    _, slow = adiabatic_unprepare(Ha, Hb, start, 40.0, 400, target=target)
    assert slow > 0.999 and slow > fast


def test_diagonalize_cap():
    from iqsim.errors import DimensionCap

    with pytest.raises(DimensionCap):
        diagonalize(tfim(6, 1.0), Sector.spin(6), cap=10)
