"""Exact-diagonalization services.

Ground states, Gibbs states, linear-response functions from the Lehmann
representation, dynamical structure factors of spin chains, and
time-ordered adiabatic sweeps.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure, DimensionCap, DimensionMismatch
from .opalg import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SPIN,
    MixedState,
    OperatorSum,
    QuantumState,
    Sector,
    build_matrix,
    local_product,
    state_columns,
)

DENSE_LIMIT = 4096
DEGENERACY_TOL = 1e-10
DEFAULT_BROADENING = 0.05


def fix_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest-magnitude amplitude is real positive."""
    vec = np.asarray(vec, dtype=complex)
    k = int(np.argmax(np.abs(vec)))
    if abs(vec[k]) == 0:
        return vec
    return vec * (abs(vec[k]) / vec[k])


class GroundState(NamedTuple):
    energy: float
    state: QuantumState
    gap: float

    @property
    def degenerate(self) -> bool:
        return self.gap < DEGENERACY_TOL


@dataclass(frozen=True, eq=False)
class SpectrumSlice:
    energies: np.ndarray
    states: list = field(repr=False)
    count: int

    def to_dict(self) -> dict:
        return {"count": self.count, "energies": [float(e) for e in self.energies]}


def _hermitian_dense(H: OperatorSum, sector: Sector) -> np.ndarray:
    mat = build_matrix(H, sector).toarray()
    return 0.5 * (mat + mat.conj().T)


@dataclass(frozen=True, eq=False)
class Eigensystem:
    """Full eigendecomposition of a Hamiltonian in one sector."""

    sector: Sector
    energies: np.ndarray
    vectors: np.ndarray


def diagonalize(H: OperatorSum, sector: Sector, cap: int = DENSE_LIMIT) -> Eigensystem:
    if sector.dimension > cap:
        raise DimensionCap(f"sector dimension {sector.dimension} exceeds dense cap {cap}")
    e, v = np.linalg.eigh(_hermitian_dense(H, sector))
    return Eigensystem(sector, e, v)


def ground_state(
    H: OperatorSum,
    sector: Sector,
    dense_limit: int = DENSE_LIMIT,
    tol: float = 1e-12,
    maxiter: int | None = None,
) -> GroundState:
    """Lowest eigenpair of ``H`` in ``sector``.

    Dense ``eigh`` up to ``dense_limit`` basis states, Lanczos (ARPACK)
    beyond. The returned ``gap`` is E_1 - E_0; ``degenerate`` flags gaps
    below 1e-10, in which case one member of the ground space is returned.
    """
    dim = sector.dimension
    if dim <= dense_limit:
        e, v = np.linalg.eigh(_hermitian_dense(H, sector))
        gap = float(e[1] - e[0]) if dim > 1 else np.inf
        return GroundState(float(e[0]), QuantumState(sector, fix_phase(v[:, 0])), gap)
    mat = build_matrix(H, sector)
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(dim) + 0j
    try:
        e, v = spla.eigsh(mat, k=2, which="SA", tol=tol, maxiter=maxiter, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceFailure(str(exc)) from exc
    order = np.argsort(e)
    e, v = e[order], v[:, order]
    vec = v[:, 0] / np.linalg.norm(v[:, 0])
    return GroundState(float(e[0]), QuantumState(sector, fix_phase(vec)), float(e[1] - e[0]))


def spectrum(H: OperatorSum, sector: Sector, k: int | None = None, cap: int = DENSE_LIMIT) -> SpectrumSlice:
    es = diagonalize(H, sector, cap)
    k = len(es.energies) if k is None else min(k, len(es.energies))
    states = [QuantumState(sector, fix_phase(es.vectors[:, i])) for i in range(k)]
    return SpectrumSlice(es.energies[:k].copy(), states, k)


def gibbs_state(
    H: OperatorSum,
    T: float,
    sector: Sector,
    cap: int = DENSE_LIMIT,
    min_weight: float = 0.0,
    mass: float = 1.0,
) -> MixedState:
    """Thermal state p_a ~ exp(-E_a / T).

    With ``min_weight``/``mass`` set, eigenvectors are kept while p_a exceeds
    ``min_weight`` and until the retained mass reaches ``mass``; the kept
    weights are renormalized. The purity is available as ``.purity``.
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    es = diagonalize(H, sector, cap)
    logits = -(es.energies - es.energies[0]) / T
    p = np.exp(logits - logits.max())
    p /= p.sum()
    keep = len(p)
    if min_weight > 0 or mass < 1.0:
        cum = np.cumsum(p)
        keep = int(np.searchsorted(cum, mass) + 1)
        keep = min(keep, int(np.sum(p > min_weight)) or 1)
        keep = max(keep, 1)
    pk = p[:keep] / p[:keep].sum()
    return MixedState(sector, pk, es.vectors[:, :keep])


def fidelity(a: QuantumState, b: QuantumState) -> float:
    return float(abs(a.overlap(b)) ** 2)


def subspace_fidelity(state: QuantumState, H: OperatorSum, tol: float = DEGENERACY_TOL) -> float:
    """Weight of ``state`` in the (possibly degenerate) ground space of ``H``."""
    es = diagonalize(H, state.sector)
    ground = es.vectors[:, es.energies - es.energies[0] < tol * max(1.0, abs(es.energies[0]))]
    return float(np.sum(np.abs(ground.conj().T @ state.amplitudes) ** 2))


# --------------------------------------------------------------------------
# linear response
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PoleList:
    """Response function sum_p r_p / (z - w_p) evaluated at z = omega + i*delta."""

    omegas: np.ndarray
    residues: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omegas", np.asarray(self.omegas, dtype=float))
        object.__setattr__(self, "residues", np.asarray(self.residues, dtype=complex))

    def evaluate(self, grid, delta: float) -> np.ndarray:
        z = np.asarray(grid, dtype=float) + 1j * delta
        if len(self.omegas) == 0:
            return np.zeros(z.shape, dtype=complex)
        terms = self.residues[None, :] / (z[:, None] - self.omegas[None, :])
        m = len(self.omegas) // 2
        if 2 * m == len(self.omegas) and np.array_equal(self.omegas[m:], -self.omegas[:m]):
            # add each +-omega pair before the running sum so that chi(-w) = conj(chi(w))
            # holds to the last bit when the residues are paired as well
            return (terms[:, :m] + terms[:, m:]).sum(axis=1)
        return terms.sum(axis=1)

    def positive(self, tol: float = 1e-9) -> "PoleList":
        """Poles at strictly positive frequency (the absorption peaks)."""
        m = self.omegas > tol
        return PoleList(self.omegas[m], self.residues[m])

    def merged(self, tol: float = 1e-9) -> "PoleList":
        """Combine coincident poles and drop vanishing residues."""
        if len(self.omegas) == 0:
            return self
        order = np.argsort(self.omegas, kind="stable")
        w, r = self.omegas[order], self.residues[order]
        out_w, out_r = [w[0]], [r[0]]
        for wi, ri in zip(w[1:], r[1:]):
            if abs(wi - out_w[-1]) < tol:
                out_r[-1] += ri
            else:
                out_w.append(wi)
                out_r.append(ri)
        out_w, out_r = np.array(out_w), np.array(out_r)
        keep = np.abs(out_r) > tol
        return PoleList(out_w[keep], out_r[keep])

    def to_dict(self) -> dict:
        return {
            "peaks": [
                {"omega": float(w), "weight": float(r.real), "weight_im": float(r.imag)}
                for w, r in zip(self.omegas, self.residues)
            ]
        }

    @classmethod
    def from_dict(cls, d) -> "PoleList":
        peaks = d["peaks"]
        return cls(
            [p["omega"] for p in peaks],
            [complex(p["weight"], p.get("weight_im", 0.0)) for p in peaks],
        )


@dataclass(frozen=True, eq=False)
class Susceptibility:
    frequencies: np.ndarray
    values: np.ndarray
    broadening: float

    def __post_init__(self):
        if self.broadening <= 0:
            raise ValueError("broadening must be positive")
        object.__setattr__(self, "frequencies", np.asarray(self.frequencies, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["omega", "re", "im"])
        for om, v in zip(self.frequencies, self.values):
            w.writerow([repr(float(om)), repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "broadening": self.broadening,
            "omega": self.frequencies.tolist(),
            "re": self.values.real.tolist(),
            "im": self.values.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Susceptibility":
        return cls(np.array(d["omega"]), np.array(d["re"]) + 1j * np.array(d["im"]), d["broadening"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def kubo_poles(
    H: OperatorSum,
    ground: QuantumState,
    V: OperatorSum,
    O: OperatorSum,
    eig: Eigensystem | None = None,
    cap: int = DENSE_LIMIT,
) -> PoleList:
    """Lehmann representation of the retarded response of O to a drive V.

    chi(w) = sum_n <0|O|n><n|V|0>/(w+id-(E_n-E_0)) - <0|V|n><n|O|0>/(w+id+(E_n-E_0)),
    summed over every eigenstate n of H in the ground state's sector.
    """
    sector = ground.sector
    if eig is None:
        eig = diagonalize(H, sector, cap)
    elif eig.sector != sector:
        raise DimensionMismatch("eigensystem and ground state live in different sectors")
    psi = ground.amplitudes
    Hm = build_matrix(H, sector)
    e0 = float(np.real(np.vdot(psi, Hm @ psi)))
    Vm = build_matrix(V, sector)
    Om = build_matrix(O, sector)
    U = eig.vectors
    n_V_0 = U.conj().T @ (Vm @ psi)
    n_O_0 = U.conj().T @ (Om @ psi)
    # <0|X|n> = conj(<n|X|0>) for Hermitian X; reusing it keeps the +-omega residues exact conjugates
    zero_O_n = n_O_0.conj() if O.is_hermitian(1e-12) else (Om.conj().T @ psi).conj() @ U
    zero_V_n = n_V_0.conj() if V.is_hermitian(1e-12) else (Vm.conj().T @ psi).conj() @ U
    de = eig.energies - e0
    omegas = np.concatenate([de, -de])
    residues = np.concatenate([zero_O_n * n_V_0, -(zero_V_n * n_O_0)])
    return PoleList(omegas, residues)


def kubo_susceptibility(
    H: OperatorSum,
    ground: QuantumState,
    V: OperatorSum,
    O: OperatorSum,
    grid,
    delta: float = DEFAULT_BROADENING,
    eig: Eigensystem | None = None,
    cap: int = DENSE_LIMIT,
) -> Susceptibility:
    if delta <= 0:
        raise ValueError("broadening must be positive")
    poles = kubo_poles(H, ground, V, O, eig=eig, cap=cap)
    grid = np.asarray(grid, dtype=float)
    return Susceptibility(grid, poles.evaluate(grid, delta), delta)


def absorption_peaks(poles: PoleList, tol: float = 1e-9) -> PoleList:
    """Positive-frequency peaks with merged degeneracies."""
    return poles.positive(tol).merged(tol)


# --------------------------------------------------------------------------
# spin-chain momentum operators and structure factors
# --------------------------------------------------------------------------


def momentum_raising(n_sites: int, k: float) -> OperatorSum:
    """sigma_k^+ = N^(-1/2) sum_j e^{ikj} sigma_j^+ with sigma^+ = |up><down|."""
    total = OperatorSum.zero(SPIN, n_sites)
    for j in range(n_sites):
        total = total + local_product(n_sites, [(j, SIGMA_PLUS)], np.exp(1j * k * j) / np.sqrt(n_sites))
    return total


def momentum_lowering(n_sites: int, k: float) -> OperatorSum:
    """Adjoint of ``momentum_raising(n, k)``: N^(-1/2) sum_j e^{-ikj} sigma_j^-."""
    return momentum_raising(n_sites, k).adjoint()


def momentum_z(n_sites: int, k: float) -> OperatorSum:
    from .opalg import pauli

    total = OperatorSum.zero(SPIN, n_sites)
    for j in range(n_sites):
        total = total + pauli(n_sites, {j: "Z"}, np.exp(1j * k * j) / np.sqrt(n_sites))
    return total


def structure_probes(n_sites: int, k: float, channel: str = "+-") -> tuple[OperatorSum, OperatorSum]:
    """(V, O) pair for momentum k.

    ``"+-"``: V = sigma_k^+, O = V^dagger. ``"sym"``: V = O = sigma_k^+ + h.c.
    """
    sp_ = momentum_raising(n_sites, k)
    if channel == "+-":
        return sp_, sp_.adjoint()
    if channel == "sym":
        v = sp_ + sp_.adjoint()
        return v, v
    raise ValueError(f"unknown channel {channel!r}")


def structure_factor(
    H: OperatorSum,
    ground: QuantumState,
    k_list: Sequence[float],
    grid,
    delta: float = DEFAULT_BROADENING,
    channel: str = "+-",
    cap: int = DENSE_LIMIT,
) -> dict:
    """Per-momentum Kubo susceptibility on a periodic chain; returns {k: Susceptibility}."""
    eig = diagonalize(H, ground.sector, cap)
    out = {}
    for k in k_list:
        V, O = structure_probes(H.n_sites, k, channel)
        out[float(k)] = kubo_susceptibility(H, ground, V, O, grid, delta, eig=eig)
    return out


def structure_peaks(
    H: OperatorSum, ground: QuantumState, k_list: Sequence[float], channel: str = "+-", cap: int = DENSE_LIMIT
) -> dict:
    """Per-momentum absorption peak lists {k: PoleList}."""
    eig = diagonalize(H, ground.sector, cap)
    out = {}
    for k in k_list:
        V, O = structure_probes(H.n_sites, k, channel)
        out[float(k)] = absorption_peaks(kubo_poles(H, ground, V, O, eig=eig))
    return out


# --------------------------------------------------------------------------
# adiabatic sweeps
# --------------------------------------------------------------------------


def adiabatic_unprepare(
    H_start: OperatorSum,
    H_end: OperatorSum,
    state: QuantumState,
    total_time: float,
    steps: int,
    target: QuantumState | None = None,
    cap: int = DENSE_LIMIT,
):
    """Evolve under (1-tau) H_start + tau H_end, tau = t / total_time.

    Each step applies the exponential of the midpoint Hamiltonian (sparse
    Krylov action, exact to rounding).
    Returns ``(final_state, return_probability)``; the probability is
    ``None`` without a target.
    """
    if total_time <= 0 or steps < 1:
        raise ValueError("total_time must be positive and steps >= 1")
    sector = state.sector
    if sector.dimension > cap:
        raise DimensionCap(f"sector dimension {sector.dimension} exceeds cap {cap}")
    A = build_matrix(H_start, sector).tocsr()
    B = build_matrix(H_end, sector).tocsr()
    dt = total_time / steps
    psi = state.amplitudes.copy()
    for s in range(steps):
        tau = (s + 0.5) / steps
        psi = spla.expm_multiply(-1j * dt * ((1 - tau) * A + tau * B), psi)
    final = QuantumState(sector, psi / np.linalg.norm(psi))
    prob = None if target is None else fidelity(target, final)
    return final, prob


def propagate(H: OperatorSum, state: QuantumState, time: float) -> QuantumState:
    """exp(-i H t)|state> by dense exponential."""
    mat = _hermitian_dense(H, state.sector)
    return QuantumState(state.sector, sla.expm(-1j * time * mat) @ state.amplitudes)


def energy_variance(state, H: OperatorSum) -> float:
    vecs, w = state_columns(state)
    mat = build_matrix(H, state.sector)
    hv = mat @ vecs
    e1 = np.real(np.einsum("ia,ia->a", vecs.conj(), hv))
    e2 = np.real(np.einsum("ia,ia->a", hv.conj(), hv))
    return float(np.sum(w * e2) - np.sum(w * e1) ** 2)
