"""Staircase circuits built from one repeated two-qubit gate.

The circuit prepares |+>|0>...|0> and applies the same gate to sites
(0,1), (1,2), ..., (N-2,N-1). Because every site is touched by only two
gates, expectation values of Pauli strings and MPOs contract right to left
with constant 4x4 algebra per site (one trace-preserving map per gate).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from . import kernels
from .errors import DimensionMismatch
from .opalg import PAULI_MATRICES, PauliString, QuantumState, Sector

LETTERS = "IXYZ"
_P = np.array([PAULI_MATRICES[c] for c in LETTERS])
_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PLUS_DENSITY = np.full((2, 2), 0.5, dtype=complex)

# xx, xy, ..., zz, then x1 y1 z1, then x2 y2 z2
GENERATOR_LABELS = tuple(a + b for a in "xyz" for b in "xyz") + ("x1", "y1", "z1", "x2", "y2", "z2")
_GENERATORS = np.array(
    [np.kron(_P[1 + i], _P[1 + j]) for i in range(3) for j in range(3)]
    + [np.kron(_P[1 + i], _P[0]) for i in range(3)]
    + [np.kron(_P[0], _P[1 + i]) for i in range(3)]
)


@dataclass(frozen=True)
class TwoQubitGate:
    """exp(-i sum_k theta_k G_k) over the 15 traceless two-qubit Paulis (order in GENERATOR_LABELS)."""

    thetas: tuple

    def __post_init__(self):
        th = tuple(float(t) for t in np.asarray(self.thetas, dtype=float).ravel())
        if len(th) != 15:
            raise DimensionMismatch(f"a two-qubit gate has 15 parameters, got {len(th)}")
        object.__setattr__(self, "thetas", th)

    @classmethod
    def identity(cls) -> "TwoQubitGate":
        return cls((0.0,) * 15)

    def generator(self) -> np.ndarray:
        return np.tensordot(np.asarray(self.thetas), _GENERATORS, axes=1)

    def to_json(self) -> str:
        return json.dumps(list(self.thetas))

    @classmethod
    def from_json(cls, text: str) -> "TwoQubitGate":
        return cls(tuple(json.loads(text)))


def gate_matrix(gate: TwoQubitGate) -> np.ndarray:
    """4x4 unitary; qubit 1 is the left (more significant) tensor factor."""
    w, v = np.linalg.eigh(gate.generator())
    return (v * np.exp(-1j * w)) @ v.conj().T


def gate_from_unitary(U: np.ndarray) -> TwoQubitGate:
    """Parameters reproducing U up to a global phase."""
    U = np.asarray(U, dtype=complex)
    T, Z = linalg.schur(U, output="complex")
    phases = np.angle(np.diag(T))
    G = -(Z * phases) @ Z.conj().T
    G = 0.5 * (G + G.conj().T)
    thetas = [np.real(np.trace(P @ G)) / 4 for P in _GENERATORS]
    return TwoQubitGate(tuple(thetas))


@dataclass(frozen=True)
class StaircaseCircuit:
    gate: TwoQubitGate
    n_sites: int

    def __post_init__(self):
        if self.n_sites < 2:
            raise DimensionMismatch("a staircase circuit needs at least two sites")


def statevector(circuit: StaircaseCircuit) -> QuantumState:
    """Dense state of the circuit (oracle; practical up to ~20 sites)."""
    n = circuit.n_sites
    U = gate_matrix(circuit.gate).reshape(2, 2, 2, 2)
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    psi = psi.reshape(2, -1)
    psi = (_HADAMARD @ psi).reshape(-1)
    for j in range(n - 1):
        t = psi.reshape(2**j, 2, 2, 2 ** (n - j - 2))
        t = np.einsum("abcd,xcdy->xaby", U, t)
        psi = t.reshape(-1)
    return QuantumState(Sector.spin(n), psi)


def transfer_matrices(gate: TwoQubitGate) -> np.ndarray:
    """T[a] maps vec(R) (row-major 2x2) to (I x <0|) U^+ (P_a x R) U (I x |0>)."""
    U = gate_matrix(gate)
    Ud = U.conj().T
    T = np.zeros((4, 4, 4), dtype=complex)
    for a in range(4):
        for k in range(4):
            R = np.zeros(4, dtype=complex)
            R[k] = 1.0
            full = Ud @ np.kron(_P[a], R.reshape(2, 2)) @ U
            # keep the |0> component of the right qubit on both sides
            T[a, :, k] = full.reshape(2, 2, 2, 2)[:, 0, :, 0].reshape(-1)
    return T


def kraus_operators(gate: TwoQubitGate) -> list:
    """K_m = (<m| x I) U (I x |0>): measure-and-reset of the left qubit, state moves right."""
    U = gate_matrix(gate).reshape(2, 2, 2, 2)
    return [U[m, :, :, 0].copy() for m in range(2)]


def _letters(P, n) -> tuple[np.ndarray, complex]:
    if isinstance(P, PauliString):
        letters, coef = P.letters, P.coefficient
    else:
        letters, coef = str(P), 1.0
    if len(letters) != n:
        raise DimensionMismatch(f"Pauli string of length {len(letters)} on {n} sites")
    return np.array([LETTERS.index(c) for c in letters], dtype=np.int8), coef


def pauli_expectation(circuit: StaircaseCircuit, P, transfer: np.ndarray | None = None) -> float:
    """<P> by contracting from the right end: O(N) with 4x4 algebra per site."""
    n = circuit.n_sites
    codes, coef = _letters(P, n)
    T = transfer_matrices(circuit.gate) if transfer is None else transfer
    seed = _P[codes[-1]].reshape(-1).astype(complex)
    v = kernels.pauli_chain(np.ascontiguousarray(T), np.ascontiguousarray(codes[:-1]), seed)
    val = coef * (PLUS_DENSITY.T.reshape(-1) @ np.asarray(v))
    return float(np.real(val))


# --------------------------------------------------------------------------
# matrix product operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MPO:
    """Translation-invariant MPO with Pauli-letter coefficients.

    ``first`` (chi, 4), ``bulk`` (chi, chi, 4), ``last`` (chi, 4): entry
    [..., l] is the weight of letter LETTERS[l] in the operator block.
    """

    first: np.ndarray
    bulk: np.ndarray
    last: np.ndarray

    def __post_init__(self):
        f, b, l = (np.asarray(x, dtype=complex) for x in (self.first, self.bulk, self.last))
        chi = b.shape[0]
        if b.shape != (chi, chi, 4) or f.shape != (chi, 4) or l.shape != (chi, 4):
            raise DimensionMismatch("inconsistent MPO block shapes")
        for name, val in (("first", f), ("bulk", b), ("last", l)):
            object.__setattr__(self, name, val)

    @property
    def bond_dimension(self) -> int:
        return self.bulk.shape[0]

    def __add__(self, other: "MPO") -> "MPO":
        c1, c2 = self.bond_dimension, other.bond_dimension
        bulk = np.zeros((c1 + c2, c1 + c2, 4), dtype=complex)
        bulk[:c1, :c1] = self.bulk
        bulk[c1:, c1:] = other.bulk
        return MPO(np.vstack([self.first, other.first]), bulk, np.vstack([self.last, other.last]))


def _block(letter_weights) -> np.ndarray:
    w = np.zeros(4, dtype=complex)
    for letter, c in letter_weights:
        w[LETTERS.index(letter)] += c
    return w


def cim_mpo(g: float, n_sites: int | None = None) -> MPO:
    """Bond-dimension-4 MPO of the open cluster-Ising chain.

    States: 0 idle, 1 after the first Z, 2 after the middle X, 3 done.
    ``n_sites`` is accepted for symmetry with the dense builder; the MPO
    itself is length independent.
    """
    a, b = (1 - g) / 2, (1 + g) / 2
    bulk = np.zeros((4, 4, 4), dtype=complex)
    bulk[0, 0] = _block([("I", 1)])
    bulk[0, 1] = _block([("Z", 1)])
    bulk[1, 2] = _block([("X", -a)])
    bulk[1, 3] = _block([("Z", -b)])
    bulk[2, 3] = _block([("Z", 1)])
    bulk[3, 3] = _block([("I", 1)])
    first = np.array([_block([("I", 1)]), _block([("Z", 1)]), _block([("X", -a)]), np.zeros(4)])
    last = np.array([np.zeros(4), _block([("Z", -b), ("X", -a)]), _block([("Z", 1)]), _block([("I", 1)])])
    return MPO(first, bulk, last)


def pauli_string_mpo(letters: str, coefficient: complex = 1.0) -> MPO:
    """Bond-dimension-1 MPO; only uniform strings (one letter in the bulk) fit this form."""
    if len(set(letters[1:-1])) > 1:
        raise ValueError("a bond-dimension-1 translation-invariant MPO needs a uniform bulk")
    mid = letters[1] if len(letters) > 2 else "I"
    return MPO(
        _block([(letters[0], coefficient)])[None, :],
        _block([(mid, 1)])[None, None, :],
        _block([(letters[-1], 1)])[None, :],
    )


def mpo_dense(mpo: MPO, n_sites: int) -> np.ndarray:
    """Dense 2^N x 2^N operator (oracle)."""
    if n_sites < 2:
        raise DimensionMismatch("MPO needs at least two sites")
    ops = lambda w: np.tensordot(w, _P, axes=(-1, 0))  # noqa: E731
    row = list(ops(mpo.first))
    bulk = ops(mpo.bulk)
    chi = mpo.bond_dimension
    for _ in range(n_sites - 2):
        row = [sum(np.kron(row[a], bulk[a, b]) for a in range(chi)) for b in range(chi)]
    last = ops(mpo.last)
    return sum(np.kron(row[a], last[a]) for a in range(chi))


def mpo_expectation(circuit: StaircaseCircuit, mpo: MPO, transfer: np.ndarray | None = None) -> float:
    """<W> in one right-to-left sweep carrying chi operator blocks on the open site."""
    n = circuit.n_sites
    T = transfer_matrices(circuit.gate) if transfer is None else transfer
    chi = mpo.bond_dimension
    x = np.tensordot(mpo.last, _P, axes=(-1, 0)).reshape(chi * 4)
    bulk = sum(np.kron(mpo.bulk[:, :, l], T[l]) for l in range(4))
    x = kernels.repeated_matvec(np.ascontiguousarray(bulk), np.ascontiguousarray(x, dtype=complex), n - 2)
    head = sum(np.kron(mpo.first[:, l][None, :], T[l]) for l in range(4))
    y = head @ np.asarray(x)
    return float(np.real(PLUS_DENSITY.T.reshape(-1) @ y))


# --------------------------------------------------------------------------
# fidelity optimization
# --------------------------------------------------------------------------


@dataclass
class FidelityFit:
    gate: TwoQubitGate
    fidelity: float


def circuit_fidelity(thetas, target: QuantumState) -> float:
    n = target.sector.n_sites
    psi = statevector(StaircaseCircuit(TwoQubitGate(tuple(thetas)), n))
    return float(abs(np.vdot(target.amplitudes, psi.amplitudes)) ** 2)


def fidelity_optimize(targets, n_sites: int | None = None, starts: int = 32, seed: int = 0,
                      scale: float = np.pi) -> list:
    """Best staircase gate per target state from seeded multi-start L-BFGS-B.

    ``targets`` is one QuantumState or a sequence of them (one per g);
    starts are drawn uniformly in [-scale, scale]^15.
    """
    single = isinstance(targets, QuantumState)
    items = [targets] if single else list(targets)
    out = []
    for idx, tgt in enumerate(items):
        if n_sites is not None and tgt.sector.n_sites != n_sites:
            raise DimensionMismatch("target size differs from n_sites")
        if tgt.sector.dimension != 2**tgt.sector.n_sites:
            tgt = tgt.embed(Sector.spin(tgt.sector.n_sites))
        rng = np.random.default_rng([seed, idx])
        best = None
        for _ in range(starts):
            x0 = rng.uniform(-scale, scale, 15)
            res = optimize.minimize(lambda t: -circuit_fidelity(t, tgt), x0, method="L-BFGS-B")
            if best is None or res.fun < best.fun:
                best = res
        out.append(FidelityFit(TwoQubitGate(tuple(best.x)), float(-best.fun)))
    return out[0] if single else out
