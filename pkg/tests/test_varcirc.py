import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from iqsim import varcirc as vc
from iqsim.errors import NonHermitianPool
from iqsim.exact import gibbs_state, ground_state
from iqsim.opalg import MixedState, QuantumState, Sector, dense_matrix, expectation, pauli, spin_sum

from conftest import random_pauli_sum

SEC3 = Sector.spin(3)


def random_state(rng, sec):
    v = rng.normal(size=sec.dimension) + 1j * rng.normal(size=sec.dimension)
    return QuantumState(sec, v / np.linalg.norm(v))


def dense_circuit_state(circuit):
    """Oracle: product of dense matrix exponentials."""
    sec = circuit.reference.sector
    U = np.eye(sec.dimension, dtype=complex)
    for g, t in circuit.layers:
        U = linalg.expm(-1j * t * dense_matrix(g, sec)) @ U
    return U


def fd_gradient(circuit, cost, h=1e-6):
    x = circuit.angles
    out = np.zeros(len(x))
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = h
        out[k] = (vc.cost_value(circuit, cost, x + e) - vc.cost_value(circuit, cost, x - e)) / (2 * h)
    return out


@given(st.integers(0, 10_000))
def test_evolution_matches_dense_exponential(seed):
    rng = np.random.default_rng(seed)
    gens = [random_pauli_sum(rng, 3, 3) for _ in range(3)]
    ref = random_state(rng, SEC3)
    circ = vc.VariationalCircuit.from_generators(gens, ref, rng.uniform(-2, 2, 3))
    U = dense_circuit_state(circ)
    assert np.allclose(vc.apply(circ).amplitudes, U @ ref.amplitudes, atol=1e-11)


@given(st.integers(0, 10_000), st.booleans())
def test_gradient_matches_finite_differences(seed, mixed):
    rng = np.random.default_rng(seed)
    gens = [random_pauli_sum(rng, 3, 3) for _ in range(4)]
    H = random_pauli_sum(rng, 3, 6)
    if mixed:
        ref = gibbs_state(random_pauli_sum(rng, 3, 5), 1.0, SEC3)
    else:
        ref = random_state(rng, SEC3)
    circ = vc.VariationalCircuit.from_generators(gens, ref, rng.uniform(-1, 1, 4))
    cost = vc.CostSpec(H)
    _, g = vc.cost_and_gradient(circ, cost)
    assert np.abs(g - fd_gradient(circ, cost)).max() < 1e-6


def test_gradient_with_bonus_term(rng):
    gens = [random_pauli_sum(rng, 3, 3) for _ in range(3)]
    cost = vc.CostSpec(random_pauli_sum(rng, 3, 4), random_pauli_sum(rng, 3, 2), 0.7)
    circ = vc.VariationalCircuit.from_generators(gens, random_state(rng, SEC3), rng.uniform(-1, 1, 3))
    value, g = vc.cost_and_gradient(circ, cost)
    assert value == pytest.approx(vc.cost_value(circ, cost), abs=1e-13)
    assert np.abs(g - fd_gradient(circ, cost)).max() < 1e-6


@given(st.integers(0, 10_000))
def test_purity_is_invariant(seed):
    rng = np.random.default_rng(seed)
    rho = gibbs_state(random_pauli_sum(rng, 3, 5), 0.7, SEC3)
    circ = vc.VariationalCircuit.from_generators([random_pauli_sum(rng, 3, 3) for _ in range(3)], rho,
                                                 rng.uniform(-3, 3, 3))
    assert abs(vc.apply(circ).purity - rho.purity) < 1e-12


def test_single_qubit_rotation():
    # exp(-i t Y)|0> = cos t |0> + sin t |1>, so <Z> = cos 2t
    circ = vc.VariationalCircuit.from_generators([pauli(1, {0: "Y"})], QuantumState.basis_state(Sector.spin(1), 0))
    for t in (0.1, 0.4, 1.3):
        assert vc.cost_value(circ, vc.CostSpec(pauli(1, {0: "Z"})), [t]) == pytest.approx(np.cos(2 * t), abs=1e-14)
        _, g = vc.cost_and_gradient(circ, vc.CostSpec(pauli(1, {0: "Z"})), [t])
        assert g[0] == pytest.approx(-2 * np.sin(2 * t), abs=1e-13)


def test_non_hermitian_generator_rejected():
    with pytest.raises(NonHermitianPool):
        vc.VariationalCircuit.from_generators([spin_sum(1, [("X", 1j)])], QuantumState.basis_state(Sector.spin(1), 0))


# -- ADAPT ---------------------------------------------------------------------


def test_real_pool_on_real_state_has_zero_gradient():
    # real Hamiltonian, real eigenstate, real symmetric generators: <[A, H]> = 0
    n = 3
    H = spin_sum(n, [("ZZI", -1.0), ("IZZ", -1.0), ("XII", -0.6), ("IXI", -0.6), ("IIX", -0.6)])
    gs = ground_state(H, Sector.spin(n))
    pool = vc.OperatorPool((pauli(n, {0: "X"}), pauli(n, {0: "Z", 1: "Z"}), pauli(n, {1: "X"})))
    assert np.abs(vc.adapt_gradient(pool, gs.state, H)).max() < 1e-12


@given(st.integers(0, 10_000))
def test_adapt_gradient_and_hessian_match_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    H = random_pauli_sum(rng, 3, 6)
    psi = random_state(rng, SEC3)
    ops = [random_pauli_sum(rng, 3, 2) for _ in range(3)]
    Hm = dense_matrix(H, SEC3)
    A = [dense_matrix(o, SEC3) for o in ops]
    v = psi.amplitudes
    grad = [np.real(1j * v.conj() @ (Ai @ Hm - Hm @ Ai) @ v) for Ai in A]
    # second derivative of <exp(i a.A) H exp(-i a.A)> at a = 0: -<[A_i,[A_j,H]]>, symmetrized over i, j
    hess = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            cij = A[i] @ (A[j] @ Hm - Hm @ A[j]) - (A[j] @ Hm - Hm @ A[j]) @ A[i]
            hess[i, j] = -np.real(v.conj() @ cij @ v)
    hess = 0.5 * (hess + hess.T)
    pool = vc.OperatorPool(tuple(ops))
    assert np.allclose(vc.adapt_gradient(pool, psi, H), grad, atol=1e-12)
    h = vc.adapt_hessian(pool, psi, H)
    assert np.allclose(h.matrix, h.matrix.T, atol=1e-13)
    assert np.allclose(h.matrix, hess, atol=1e-11)


def test_adapt_quantities_are_derivatives_of_pool_energy(rng):
    H = random_pauli_sum(rng, 3, 6)
    psi = random_state(rng, SEC3)
    pool = vc.OperatorPool(tuple(random_pauli_sum(rng, 3, 2) for _ in range(2)))
    g = vc.adapt_gradient(pool, psi, H)
    h = vc.adapt_hessian(pool, psi, H).matrix
    e0 = vc.pool_energy(pool, psi, H, [0, 0])
    for d in (np.array([1.0, 0.0]), np.array([0.3, -0.8])):
        eps = 1e-4
        ep, em = vc.pool_energy(pool, psi, H, eps * d), vc.pool_energy(pool, psi, H, -eps * d)
        assert (ep - em) / (2 * eps) == pytest.approx(g @ d, abs=1e-7)
        assert (ep + em - 2 * e0) / eps**2 == pytest.approx(d @ h @ d, abs=1e-4)


# -- optimization ------------------------------------------------------------------


def test_optimize_at_ground_state_returns_immediately():
    H = spin_sum(2, [("ZZ", -1.0), ("XI", -0.5), ("IX", -0.5)])
    gs = ground_state(H, Sector.spin(2))
    circ = vc.VariationalCircuit.from_generators([pauli(2, {0: "Y"})], gs.state)
    res = vc.optimize(circ, vc.CostSpec(H))
    assert res.cost == pytest.approx(gs.energy, abs=1e-12)
    assert res.added_layers == 0 and np.allclose(res.circuit.angles, 0.0)


def test_optimize_reaches_ground_state_of_one_qubit():
    H = spin_sum(1, [("X", 1.0), ("Z", 0.5)])
    circ = vc.VariationalCircuit.from_generators([pauli(1, {0: "Y"})], QuantumState.basis_state(Sector.spin(1), 0))
    res = vc.optimize(circ, vc.CostSpec(H))
    assert res.cost == pytest.approx(-np.sqrt(1.25), abs=1e-10)


def test_saddle_escape_leaves_zero_gradient_point():
    # theta = 0 is a saddle of <exp(iX)Z exp(-iX)> + ... for |0>: gradient zero, curvature negative
    H = pauli(1, {0: "Z"})
    circ = vc.VariationalCircuit.from_generators([pauli(1, {0: "X"})], QuantumState.basis_state(Sector.spin(1), 0))
    _, g = vc.cost_and_gradient(circ, vc.CostSpec(H))
    assert abs(g[0]) < 1e-14
    res = vc.optimize(circ, vc.CostSpec(H))
    assert res.cost == pytest.approx(-1.0, abs=1e-10) and res.rescues >= 1


def test_finite_temperature_optimization_keeps_purity():
    H = spin_sum(2, [("ZZ", -1.0), ("XI", -0.4), ("IX", -0.4)])
    rho = gibbs_state(H, 0.8, Sector.spin(2))
    circ = vc.VariationalCircuit.from_generators([pauli(2, {0: "Y"}), pauli(2, {1: "Y"})], rho)
    res = vc.optimize(circ, vc.CostSpec(H, pauli(2, {0: "X"}), 1.0))
    assert abs(vc.apply(res.circuit).purity - rho.purity) < 1e-12
    assert res.cost <= vc.cost_value(circ, vc.CostSpec(H, pauli(2, {0: "X"}), 1.0)) + 1e-12


# -- shot noise ---------------------------------------------------------------------


def test_shot_estimate_unbiased_within_three_stderr(rng):
    H = random_pauli_sum(rng, 3, 5)
    psi = random_state(rng, SEC3)
    exact = float(np.real(expectation(psi, H)))
    est, se = vc.sampled_expectation(psi, vc.measurement_terms(H), 10**6, np.random.default_rng(7))
    assert abs(est - exact) < 3 * se


def test_eigenstate_has_zero_sample_variance():
    H = spin_sum(2, [("ZZ", -1.0), ("XX", 0.3)])
    gs = ground_state(H, Sector.spin(2))
    est, se = vc.sampled_expectation(gs.state, [H], 50, np.random.default_rng(1))
    assert est == pytest.approx(gs.energy, abs=1e-12) and se == 0.0


def test_mixed_state_sampling(rng):
    rho = gibbs_state(random_pauli_sum(rng, 3, 5), 1.0, SEC3)
    ob = random_pauli_sum(rng, 3, 2)
    est, se = vc.sampled_expectation(rho, [ob], 400_000, np.random.default_rng(3))
    assert abs(est - np.real(expectation(rho, ob))) < 4 * se


def test_shot_stream_independent_of_call_order(rng):
    circ = vc.VariationalCircuit.from_generators([pauli(2, {0: "Y"})], random_state(rng, Sector.spin(2)), [0.3])
    cost = vc.CostSpec(spin_sum(2, [("ZZ", 1.0), ("XI", 0.5)]))
    model = vc.ShotModel(20, 5)
    a = [vc.sampled_cost(circ, cost, model, i) for i in (0, 1, 2)]
    b = [vc.sampled_cost(circ, cost, model, i) for i in (2, 0, 1)]
    assert a == [b[1], b[2], b[0]]


def test_zero_budget_returns_input(rng):
    circ = vc.VariationalCircuit.from_generators([pauli(1, {0: "Y"})], QuantumState.basis_state(Sector.spin(1), 0), [0.2])
    res = vc.pattern_search(circ, vc.CostSpec(pauli(1, {0: "Z"})), vc.ShotModel(10), 0)
    assert res.shots_used == 0 and np.array_equal(res.circuit.angles, circ.angles)


def test_pattern_search_descends_quadratic_toy():
    # <Z> after exp(-i t Y)|0> is cos 2t, minimum at t = pi/2
    circ = vc.VariationalCircuit.from_generators([pauli(1, {0: "Y"})], QuantumState.basis_state(Sector.spin(1), 0), [0.4])
    cost = vc.CostSpec(pauli(1, {0: "Z"}))
    res = vc.pattern_search(circ, cost, vc.ShotModel(200, 11), 20_000)
    assert res.shots_used <= 20_000
    assert vc.cost_value(res.circuit, cost) < -0.95


def test_gibbs_reference_truncation():
    H = spin_sum(3, [("ZZI", -1.0), ("IZZ", -1.0), ("XII", -0.5)])
    rho = vc.truncated_gibbs(H, 0.2, SEC3)
    assert isinstance(rho, MixedState) and rho.probabilities.min() > 1e-8
