"""Spectral Hamiltonian learning.

Linearized McLachlan dynamics around a ground state give a variational
susceptibility chi_var(w) = o . (-i(w + i delta) M + K)^-1 . v built from
tangent vectors u_j = A_j|psi0>. Comparing chi_var with a target spectrum
defines a cost over Hamiltonian parameters that the outer loop minimizes.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import DegenerateGroundState, IterationCap, NonHermitianPool, NotGroundState, SingularSystem
from .exact import (
    DEFAULT_BROADENING,
    PoleList,
    Susceptibility,
    absorption_peaks,
    ground_state,
    kubo_poles,
)
from .opalg import (
    PAULI_MATRICES,
    SIGMA_PLUS,
    OperatorSum,
    QuantumState,
    Sector,
    build_matrix,
    pauli,
    spin_sum,
)

PINV_CUTOFF = 1e-10


# --------------------------------------------------------------------------
# types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TangentAnsatz:
    """Hermitian generators A_j spanning the tangent space at the ground state."""

    generators: tuple
    labels: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        gens = tuple(self.generators)
        for g in gens:
            if not g.is_hermitian(1e-12):
                raise NonHermitianPool("tangent generators must be Hermitian")
        object.__setattr__(self, "generators", gens)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"A{j}" for j in range(len(gens))))

    def __len__(self):
        return len(self.generators)

    def matrices(self, sector: Sector) -> list:
        if sector not in self._cache:
            self._cache[sector] = [build_matrix(g, sector) for g in self.generators]
        return self._cache[sector]

    def tangent_vectors(self, state: QuantumState) -> np.ndarray:
        mats = self.matrices(state.sector)
        if not mats:
            return np.zeros((state.sector.dimension, 0), dtype=complex)
        return np.column_stack([m @ state.amplitudes for m in mats])


@dataclass(frozen=True, eq=False)
class ResponseProblem:
    H0: OperatorSum
    ground: QuantumState
    V: OperatorSum
    O: OperatorSum
    ansatz: TangentAnsatz
    grid: np.ndarray | None = None
    delta: float = DEFAULT_BROADENING


@dataclass(frozen=True, eq=False)
class TDVPMatrices:
    """Tangent-space matrices. ``v`` and ``o`` are complex when V, O are not Hermitian."""

    M: np.ndarray
    K: np.ndarray
    v: np.ndarray
    o: np.ndarray
    energy: float
    variance: float


# --------------------------------------------------------------------------
# tangent-space matrices
# --------------------------------------------------------------------------


def tdvp_matrices(problem: ResponseProblem, variance_tol: float = 1e-8, strict: bool = False) -> TDVPMatrices:
    """M, K, v, o at the ground state (stationary parameters vanish).

    M_ij = Re<u_i|u_j> - <A_i><A_j>, K_ij = Im<u_j|H0 - E|u_i>,
    v_j = (<u_j|dV|psi> + <psi|dV|u_j>)/2 with dV = V - <V>,
    o_j = i(<u_j|O|psi> - <psi|O|u_j>).
    """
    psi = problem.ground.amplitudes
    sector = problem.ground.sector
    H = build_matrix(problem.H0, sector)
    hpsi = H @ psi
    energy = float(np.real(np.vdot(psi, hpsi)))
    variance = float(np.real(np.vdot(hpsi, hpsi)) - energy**2)
    if variance > variance_tol:
        msg = f"reference state has energy variance {variance:.3e}"
        if strict:
            raise NotGroundState(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    U = problem.ansatz.tangent_vectors(problem.ground)
    a = np.real(psi.conj() @ U)
    M = np.real(U.conj().T @ U) - np.outer(a, a)
    M = 0.5 * (M + M.T)
    HU = H @ U - energy * U
    K = np.imag(U.conj().T @ HU).T
    Vm = build_matrix(problem.V, sector)
    Om = build_matrix(problem.O, sector)
    vpsi = Vm @ psi
    v_mean = np.vdot(psi, vpsi)
    dv_psi = vpsi - v_mean * psi
    dvh_psi = Vm.conj().T @ psi - np.conj(v_mean) * psi
    v = 0.5 * (U.conj().T @ dv_psi + (dvh_psi.conj() @ U))
    opsi = Om @ psi
    ohpsi = Om.conj().T @ psi
    o = 1j * (U.conj().T @ opsi - ohpsi.conj() @ U)
    return TDVPMatrices(M, K, v, o, energy, variance)


def tdvp_matrices_hermitian(problem: ResponseProblem) -> TDVPMatrices:
    """Same matrices from expectation values of Hermitian operator combinations only.

    Uses <{A_i, A_j}>/2, <(i/2)[A_j (H-E) A_i - A_i (H-E) A_j]>, the Hermitian
    and anti-Hermitian parts of V and O, and i<[A_j, O]>. Each expectation
    is of a Hermitian operator, so every value is real up to rounding; the
    largest imaginary residue is stored in ``variance`` slot of the check.
    """
    psi = problem.ground.amplitudes
    sector = problem.ground.sector
    H = build_matrix(problem.H0, sector).toarray()
    E = float(np.real(np.vdot(psi, H @ psi)))
    Hs = H - E * np.eye(len(psi))
    A = [m.toarray() for m in problem.ansatz.matrices(sector)]
    n = len(A)

    def ev(X):
        return np.vdot(psi, X @ psi)

    residue = 0.0
    means = []
    for Ai in A:
        m = ev(Ai)
        residue = max(residue, abs(m.imag))
        means.append(m.real)
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            anti = ev(0.5 * (A[i] @ A[j] + A[j] @ A[i]))
            kk = ev(0.5j * (A[j] @ Hs @ A[i] - A[i] @ Hs @ A[j]))
            residue = max(residue, abs(anti.imag), abs(kk.imag))
            M[i, j] = anti.real - means[i] * means[j]
            # Im<u_j|Hs|u_i> = <(1/2i)(A_j Hs A_i - A_i Hs A_j)>
            K[i, j] = -kk.real
    Vm = build_matrix(problem.V, sector).toarray()
    Om = build_matrix(problem.O, sector).toarray()
    vr, vi = 0.5 * (Vm + Vm.conj().T), -0.5j * (Vm - Vm.conj().T)
    orr, oi = 0.5 * (Om + Om.conj().T), -0.5j * (Om - Om.conj().T)
    v = np.zeros(n, dtype=complex)
    o = np.zeros(n, dtype=complex)
    for j in range(n):
        parts = []
        for X in (vr, vi):
            dX = X - ev(X).real * np.eye(len(psi))
            val = ev(0.5 * (A[j] @ dX + dX @ A[j]))
            parts.append(val)
        residue = max(residue, abs(parts[0].imag), abs(parts[1].imag))
        v[j] = parts[0].real + 1j * parts[1].real
        oparts = []
        for X in (orr, oi):
            val = ev(1j * (A[j] @ X - X @ A[j]))
            oparts.append(val)
        residue = max(residue, abs(oparts[0].imag), abs(oparts[1].imag))
        o[j] = oparts[0].real + 1j * oparts[1].real
    return TDVPMatrices(M, K, v, o, E, residue)


# --------------------------------------------------------------------------
# variational susceptibility
# --------------------------------------------------------------------------


def _whiten(mats: TDVPMatrices, cutoff: float):
    lam, Q = np.linalg.eigh(mats.M)
    if len(lam) == 0 or lam.max() <= 0:
        return None
    keep = lam > cutoff * lam.max()
    S = Q[:, keep] / np.sqrt(lam[keep])
    return S.T @ mats.K @ S, S.T @ mats.v, S.T @ mats.o


def variational_poles(mats: TDVPMatrices, cutoff: float = PINV_CUTOFF) -> PoleList:
    """Pole representation of chi_var on the range of M.

    In whitened coordinates K is real antisymmetric, so i*K is Hermitian
    with real eigenvalues mu_k and chi_var(z) = sum_k i (o.w_k)(w_k^+ v)/(z + mu_k).
    """
    w = _whiten(mats, cutoff)
    if w is None:
        return PoleList([], [])
    Kt, vt, ot = w
    Kt = 0.5 * (Kt - Kt.T)
    mu, W = np.linalg.eigh(1j * Kt)
    residues = 1j * (ot @ W) * (W.conj().T @ vt)
    return PoleList(-mu, residues)


def variational_susceptibility(
    mats: TDVPMatrices,
    grid,
    delta: float = DEFAULT_BROADENING,
    method: str = "poles",
    cutoff: float = PINV_CUTOFF,
) -> Susceptibility:
    """chi_var on a frequency grid, via the pole form or a linear solve per point."""
    grid = np.asarray(grid, dtype=float)
    if method == "poles":
        return Susceptibility(grid, variational_poles(mats, cutoff).evaluate(grid, delta), delta)
    if method != "solve":
        raise ValueError(f"unknown method {method!r}")
    w = _whiten(mats, cutoff)
    if w is None:
        return Susceptibility(grid, np.zeros(len(grid), dtype=complex), delta)
    Kt, vt, ot = w
    n = Kt.shape[0]
    vals = np.empty(len(grid), dtype=complex)
    for i, om in enumerate(grid):
        A = -1j * (om + 1j * delta) * np.eye(n) + Kt
        if np.linalg.cond(A) > 1.0 / cutoff:
            raise SingularSystem(f"response matrix singular at omega={om}")
        vals[i] = ot @ np.linalg.solve(A, vt)
    return Susceptibility(grid, vals, delta)


# --------------------------------------------------------------------------
# spectral costs
# --------------------------------------------------------------------------


def _pole_l2(a: PoleList, b: PoleList, delta: float) -> float:
    """Integral of |a - b|^2 d(omega)/2pi over the real line for equal broadening."""
    w = np.concatenate([a.omegas, b.omegas])
    c = np.concatenate([a.residues, -b.residues])
    if len(w) == 0:
        return 0.0
    kern = 1j / (w[None, :] - w[:, None] + 2j * delta)
    return float(np.real(c @ kern @ c.conj()))


def spectral_cost(chi_var, chi_tar=None, variant: str = "overlap", omega_star: float | None = None,
                  delta: float = DEFAULT_BROADENING, inner: str = "overlap") -> float:
    """Response-based cost.

    ``chi_var`` / ``chi_tar`` may be Susceptibility objects on a common grid
    or PoleList objects; for ``momentum_sum`` they are mappings k -> spectrum.

    * peak: Im chi_var(omega_star).
    * overlap: -int Im chi_var Im chi_tar d(omega)/2pi; with a peak-list target
      the integral reduces to sum_n w_n Im chi_var(omega_n).
    * l2: int |chi_var - chi_tar|^2 d(omega)/2pi (closed form for pole lists).
    * momentum_sum: sum over k of the ``inner`` variant.
    """
    if variant == "momentum_sum":
        return float(sum(spectral_cost(chi_var[k], chi_tar[k], inner, omega_star, delta) for k in chi_tar))
    if variant == "peak":
        if omega_star is None:
            raise ValueError("peak variant needs omega_star")
        if isinstance(chi_var, PoleList):
            return float(np.imag(chi_var.evaluate([omega_star], delta)[0]))
        re = np.interp(omega_star, chi_var.frequencies, chi_var.values.real)
        im = np.interp(omega_star, chi_var.frequencies, chi_var.values.imag)
        return float(np.imag(re + 1j * im))
    if variant == "overlap":
        if isinstance(chi_tar, PoleList):
            if isinstance(chi_var, PoleList):
                vals = chi_var.evaluate(chi_tar.omegas, delta)
            else:
                vals = np.interp(chi_tar.omegas, chi_var.frequencies, chi_var.values.imag) * 1j
            return float(np.sum(np.real(chi_tar.residues) * np.imag(vals)))
        _same_grid(chi_var, chi_tar)
        integrand = chi_var.values.imag * chi_tar.values.imag
        return float(-np.trapezoid(integrand, chi_var.frequencies) / (2 * np.pi))
    if variant == "l2":
        if isinstance(chi_var, PoleList) and isinstance(chi_tar, PoleList):
            return _pole_l2(chi_var, chi_tar, delta)
        _same_grid(chi_var, chi_tar)
        integrand = np.abs(chi_var.values - chi_tar.values) ** 2
        return float(np.trapezoid(integrand, chi_var.frequencies) / (2 * np.pi))
    raise ValueError(f"unknown cost variant {variant!r}")


def _same_grid(a, b):
    if not isinstance(a, Susceptibility) or not isinstance(b, Susceptibility):
        raise TypeError("grid variants need Susceptibility inputs")
    if a.frequencies.shape != b.frequencies.shape or not np.allclose(a.frequencies, b.frequencies):
        raise ValueError("spectra live on different grids")


# --------------------------------------------------------------------------
# model library
# --------------------------------------------------------------------------


def _placed(n, sites_letters):
    letters = ["I"] * n
    for s, l in sites_letters:
        letters[s] = l
    return "".join(letters)


def two_spin_model(Bz: float, J_I: float, J_H: float) -> OperatorSum:
    """Bz(Z1 + Z2) - J_I Z1 Z2 - J_H (X1X2 + Y1Y2 + Z1Z2)."""
    return spin_sum(
        2,
        [("ZI", Bz), ("IZ", Bz), ("ZZ", -J_I), ("XX", -J_H), ("YY", -J_H), ("ZZ", -J_H)],
    )


def two_spin_ansatz() -> TangentAnsatz:
    """Single-spin generators ordered (X1, Y1, X2, Y2)."""
    gens = [pauli(2, {0: "X"}), pauli(2, {0: "Y"}), pauli(2, {1: "X"}), pauli(2, {1: "Y"})]
    return TangentAnsatz(tuple(gens), ("X1", "Y1", "X2", "Y2"))


def two_spin_field(letter: str) -> OperatorSum:
    """Global field (s_1 + s_2)/sqrt(2) along ``letter``; the 1/sqrt(2) gives the closed form unit weights."""
    return (pauli(2, {0: letter}) + pauli(2, {1: letter})).scale(1 / np.sqrt(2))


def two_spin_analytic(Bz: float, J_I: float, grid, delta: float = DEFAULT_BROADENING):
    """Closed-form chi_xx, chi_xy with poles at +-2(Bz + J_I) and unit weight.

    chi_ab probes along a and drives along b with ``two_spin_field``; J_H
    drops out because the global field never reaches the singlet.
    """
    z = np.asarray(grid, dtype=float) + 1j * delta
    lam = 2 * (Bz + J_I)
    xx = 1 / (z - lam) - 1 / (z + lam)
    xy = -1j / (z - lam) - 1j / (z + lam)
    return xx, xy


def three_spin_model(Bz: float, J_H: float, J_RE: float) -> OperatorSum:
    """Bz sum Z - J_H sum_{i<j} s_i.s_j + J_RE sum eps_abc s^a_1 s^b_2 s^c_3."""
    entries = []
    for i in range(3):
        entries.append((_placed(3, [(i, "Z")]), Bz))
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for a in "XYZ":
            entries.append((_placed(3, [(i, a), (j, a)]), -J_H))
    for perm in itertools.permutations("XYZ"):
        sign = _perm_sign(perm)
        entries.append(("".join(perm), J_RE * sign))
    return spin_sum(3, entries)


def _perm_sign(perm) -> int:
    idx = ["XYZ".index(p) for p in perm]
    sign = 1
    for i in range(len(idx)):
        for j in range(i + 1, len(idx)):
            if idx[i] > idx[j]:
                sign = -sign
    return sign


def three_spin_ansatz() -> TangentAnsatz:
    """9 one-spin and 27 two-spin Pauli generators."""
    gens, labels = [], []
    for i in range(3):
        for a in "XYZ":
            gens.append(pauli(3, {i: a}))
            labels.append(f"{a}{i + 1}")
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for a in "XYZ":
            for b in "XYZ":
                gens.append(pauli(3, {i: a, j: b}))
                labels.append(f"{a}{i + 1}{b}{j + 1}")
    return TangentAnsatz(tuple(gens), tuple(labels))


def heisenberg_chain(n_sites: int, Bz: float, J: float) -> OperatorSum:
    """Periodic chain Bz sum_j Z_j - J sum_j s_j . s_{j+1}."""
    entries = []
    for j in range(n_sites):
        entries.append((_placed(n_sites, [(j, "Z")]), Bz))
        for a in "XYZ":
            entries.append((_placed(n_sites, [(j, a), ((j + 1) % n_sites, a)]), -J))
    return spin_sum(n_sites, entries)


def magnon_energy(k: float, Bz: float, J: float) -> float:
    return 2 * Bz + 4 * J * (1 - np.cos(k))


def spinon_bounds(q: float, J: float) -> tuple[float, float]:
    """Lower and upper edges of the two-spinon continuum for J < 0."""
    return -2 * np.pi * J * abs(np.sin(q)), -4 * np.pi * J * abs(np.sin(q / 2))


def momenta(n_sites: int) -> list:
    return [2 * np.pi * n / n_sites for n in range(n_sites)]


_Z = PAULI_MATRICES["Z"]


def _momentum_product(n_sites: int, zmomenta: Sequence[float], kplus: float) -> OperatorSum:
    """N^{-(m+1)/2} sum over sites of prod_i e^{i k_i a_i} Z_{a_i} times e^{i q c} sigma^+_c."""
    nfac = len(zmomenta) + 1
    norm = n_sites ** (-nfac / 2)
    acc: dict = {}
    # Expand site by site: each factor contributes a 2x2 local matrix.
    for sites in itertools.product(range(n_sites), repeat=nfac):
        phase = np.exp(1j * (sum(k * s for k, s in zip(zmomenta, sites[:-1])) + kplus * sites[-1]))
        per_site: dict = {}
        for s in sites[:-1]:
            per_site[s] = per_site[s] @ _Z if s in per_site else _Z
        c = sites[-1]
        per_site[c] = per_site[c] @ SIGMA_PLUS if c in per_site else SIGMA_PLUS
        # Pauli expansion of the product of local matrices
        letters_by_site = {}
        for s, m in per_site.items():
            comps = []
            for letter, pm in PAULI_MATRICES.items():
                cc = np.trace(pm @ m) / 2
                if abs(cc) > 1e-15:
                    comps.append((letter, cc))
            letters_by_site[s] = comps
        sites_sorted = sorted(letters_by_site)
        for combo in itertools.product(*(letters_by_site[s] for s in sites_sorted)):
            letters = ["I"] * n_sites
            coef = phase * norm
            for s, (l, cc) in zip(sites_sorted, combo):
                letters[s] = l
                coef *= cc
            key = "".join(letters)
            acc[key] = acc.get(key, 0) + coef
    return spin_sum(n_sites, acc.items())


def _hermitian_pair(X: OperatorSum):
    Xd = X.adjoint()
    return (X + Xd).simplify(), ((X - Xd) * 1j).simplify()


def momentum_ansatz(model: str, n_sites: int, k: float, level: str = "1p") -> TangentAnsatz:
    """Momentum-resolved generator pairs X + X^dagger and i(X - X^dagger).

    1p: X = sigma^+_k. 2p adds X = sigma^z_{k'} sigma^+_{k-k'} for every k'.
    3p adds X = sigma^z_{k'} sigma^z_{k''} sigma^+_{k-k'-k''} for k' <= k''
    (the two z factors commute, so unordered pairs suffice).
    """
    if model not in ("FM", "AFM"):
        raise ValueError(f"unknown model {model!r}")
    levels = {"1p": 1, "1p2p": 2, "1p2p3p": 3}
    if level not in levels:
        raise ValueError(f"unknown ansatz level {level!r}")
    depth = levels[level]
    ks = momenta(n_sites)
    gens, labels = [], []

    def add(X, label):
        a, b = _hermitian_pair(X)
        gens.extend([a, b])
        labels.extend([f"{label}+h.c.", f"i({label}-h.c.)"])

    add(_momentum_product(n_sites, [], k), f"s+[{k:.4f}]")
    if depth >= 2:
        for kp in ks:
            add(_momentum_product(n_sites, [kp], k - kp), f"z[{kp:.4f}]s+")
    if depth >= 3:
        for i1, i2 in itertools.combinations_with_replacement(range(n_sites), 2):
            k1, k2 = ks[i1], ks[i2]
            add(_momentum_product(n_sites, [k1, k2], k - k1 - k2), f"z[{k1:.4f}]z[{k2:.4f}]s+")
    return TangentAnsatz(tuple(gens), tuple(labels))


# --------------------------------------------------------------------------
# outer learning loop
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Channel:
    """One drive/probe pair with its tangent ansatz (e.g. one momentum)."""

    V: OperatorSum
    O: OperatorSum
    ansatz: TangentAnsatz
    label: str = ""


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Parameterized Hamiltonian family with response channels.

    The ground state is searched in ``ground_sector`` and embedded into
    ``sector`` where all response operators act.
    """

    family: Callable
    channels: tuple
    sector: Sector
    ground_sector: Sector | None = None


@dataclass
class SHLOptions:
    variant: str = "overlap"
    delta: float = DEFAULT_BROADENING
    fd_step: float = 1e-4
    xtol: float = 1e-6
    gtol: float = 1e-10
    max_iter: int = 200
    scan: Sequence | None = None
    delta_schedule: Sequence | None = None
    degeneracy_tol: float = 1e-10


@dataclass
class SHLResult:
    params: np.ndarray
    cost: float
    trajectory: list
    converged: bool
    message: str = ""


def model_ground_state(model: SpectralModel, params) -> QuantumState:
    H = model.family(np.asarray(params, dtype=float))
    gs = ground_state(H, model.ground_sector or model.sector)
    if gs.degenerate:
        raise DegenerateGroundState(f"ground-state gap {gs.gap:.2e} at params {list(params)}")
    return gs.state.embed(model.sector)


def model_response(model: SpectralModel, params) -> list:
    """Variational pole lists for every channel at the given parameters."""
    H = model.family(np.asarray(params, dtype=float))
    psi = model_ground_state(model, params)
    out = []
    for ch in model.channels:
        prob = ResponseProblem(H, psi, ch.V, ch.O, ch.ansatz)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out.append(variational_poles(tdvp_matrices(prob)))
    return out


def target_peaks(model: SpectralModel, params) -> list:
    """Exact Kubo absorption peaks for every channel (the learning target)."""
    from .exact import diagonalize

    H = model.family(np.asarray(params, dtype=float))
    psi = model_ground_state(model, params)
    eig = diagonalize(H, model.sector)
    return [absorption_peaks(kubo_poles(H, psi, ch.V, ch.O, eig=eig)) for ch in model.channels]


def shl_cost(model: SpectralModel, params, targets: Sequence[PoleList], variant: str, delta: float) -> float:
    """Spectral cost summed over channels; the response is reduced to its absorption peaks like the targets."""
    resp = [absorption_peaks(r) for r in model_response(model, params)]
    return float(sum(spectral_cost(r, t, variant, delta=delta) for r, t in zip(resp, targets)))


def shl_learn(model: SpectralModel, targets: Sequence[PoleList], x0, options: SHLOptions | None = None) -> SHLResult:
    """Minimize the spectral cost over Hamiltonian parameters.

    An optional coarse scan (``options.scan``: one grid per parameter)
    seeds the start. Refinement is BFGS with central finite-difference
    gradients, run once per broadening in ``options.delta_schedule`` (widest
    first, the scan uses the first entry) and finally at ``options.delta``.
    Wide Lorentzians smooth out the narrow basins of sharp spectra.
    """
    opts = options or SHLOptions()
    trajectory: list = []
    stages = list(opts.delta_schedule or ()) + [opts.delta]

    def make_cost(delta):
        def cost(x):
            val = shl_cost(model, x, targets, opts.variant, delta)
            trajectory.append({"params": [float(t) for t in x], "cost": val, "delta": delta})
            return val
        return cost

    x = np.asarray(x0, dtype=float)
    if opts.scan is not None:
        cost = make_cost(stages[0])
        best = cost(x)
        grids = [np.asarray(g, dtype=float) for g in opts.scan]
        for point in itertools.product(*grids):
            p = np.array(point)
            c = cost(p)
            if c < best:
                x, best = p, c

    h = opts.fd_step
    res = None
    for delta in stages:
        cost = make_cost(delta)

        def grad(y, cost=cost):
            g = np.zeros_like(y)
            for i in range(len(y)):
                e = np.zeros_like(y)
                e[i] = h
                g[i] = (cost(y + e) - cost(y - e)) / (2 * h)
            return g

        res = optimize.minimize(cost, x, jac=grad, method="BFGS",
                                options={"gtol": opts.gtol, "xrtol": opts.xtol, "maxiter": opts.max_iter})
        if res.nit >= opts.max_iter:
            raise IterationCap(f"parameter search did not converge within {opts.max_iter} iterations")
        x = np.asarray(res.x)
    return SHLResult(x, float(res.fun), trajectory, bool(res.success), str(res.message))
