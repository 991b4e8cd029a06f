"""Operator algebra and Hilbert-space representation.

Spin operators are sums of Pauli strings; fermionic operators are sums of
normal-ordered products of creation/annihilation operators on spinful sites.
Matrices are assembled in a fixed symmetry sector with a deterministic,
lexicographically ordered basis.

Basis conventions
-----------------
* Spin: site ``i`` is bit ``N-1-i`` of the basis integer (site 0 is the most
  significant bit); bit value 0 is the Z=+1 state.
* Fermion: mode ``m = site + spin * N`` (all spin-up modes before all
  spin-down modes); mode ``m`` is bit ``2N-1-m``; bit value 1 means occupied.
  The Jordan-Wigner string of mode ``m`` runs over all modes ``< m``.
"""

from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DimensionMismatch, IndexOutOfRange, SectorViolation

SPIN = "spin"
FERMION = "fermion"
UP, DOWN = 0, 1
_SPIN_NAMES = {UP: "up", DOWN: "down"}
_SPIN_CODES = {"up": UP, "down": DOWN, "u": UP, "d": DOWN, 0: UP, 1: DOWN}

# Pauli letter products: (a, b) -> (phase, letter) with a*b = phase*letter.
_PAULI_MUL = {}
for _a in "IXYZ":
    _PAULI_MUL[("I", _a)] = (1, _a)
    _PAULI_MUL[(_a, "I")] = (1, _a)
    _PAULI_MUL[(_a, _a)] = (1, "I")
for _a, _b, _c in (("X", "Y", "Z"), ("Y", "Z", "X"), ("Z", "X", "Y")):
    _PAULI_MUL[(_a, _b)] = (1j, _c)
    _PAULI_MUL[(_b, _a)] = (-1j, _c)

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DROP_TOL = 1e-13


# --------------------------------------------------------------------------
# terms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PauliString:
    """A coefficient times a tensor product of Pauli letters."""

    letters: str
    coefficient: complex = 1.0

    def __post_init__(self):
        if any(ch not in "IXYZ" for ch in self.letters):
            raise ValueError(f"invalid Pauli letters {self.letters!r}")
        object.__setattr__(self, "coefficient", complex(self.coefficient))

    @property
    def length(self) -> int:
        return len(self.letters)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return abs(self.coefficient.imag) <= tol

    def adjoint(self) -> "PauliString":
        return PauliString(self.letters, self.coefficient.conjugate())

    def key(self):
        return self.letters


@dataclass(frozen=True)
class FermionTerm:
    """A coefficient times an ordered product of fermion operators.

    ``factors`` holds ``(site, spin, dagger)`` triples, leftmost first.
    """

    factors: tuple = ()
    coefficient: complex = 1.0

    def __post_init__(self):
        facs = tuple((int(s), _SPIN_CODES[sp_], bool(d)) for s, sp_, d in self.factors)
        object.__setattr__(self, "factors", facs)
        object.__setattr__(self, "coefficient", complex(self.coefficient))

    def adjoint(self) -> "FermionTerm":
        facs = tuple((s, sp_, not d) for s, sp_, d in reversed(self.factors))
        return FermionTerm(facs, self.coefficient.conjugate())

    def key(self):
        return self.factors


def _fermion_sort_key(f):
    site, spin, dagger = f
    return (0 if dagger else 1, site, spin)


@functools.lru_cache(maxsize=65536)
def _normal_order(factors: tuple) -> tuple:
    """Normal-order a product of fermion operators.

    Returns a tuple of ``(factors, coefficient)`` pairs: creation operators
    left of annihilation operators, each group sorted by ``(site, spin)``.
    """
    f = list(factors)
    for i in range(len(f) - 1):
        a, b = f[i], f[i + 1]
        ka, kb = _fermion_sort_key(a), _fermion_sort_key(b)
        if ka == kb:
            return ()
        if ka > kb:
            out: dict = {}
            for fac, c in _normal_order(tuple(f[:i] + [b, a] + f[i + 2 :])):
                out[fac] = out.get(fac, 0) - c
            if a[0] == b[0] and a[1] == b[1]:
                # c c^dagger = 1 - c^dagger c on the same mode
                for fac, c in _normal_order(tuple(f[:i] + f[i + 2 :])):
                    out[fac] = out.get(fac, 0) + c
            return tuple((k, v) for k, v in out.items() if v != 0)
    return ((tuple(f), 1),)


# --------------------------------------------------------------------------
# operator sums
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorSum:
    """Immutable weighted sum of Pauli strings or fermion terms.

    ``n_sites`` is the number of spins (spin kind) or spatial sites (fermion
    kind, two spin modes per site).
    """

    kind: str
    n_sites: int
    terms: tuple = ()

    def __post_init__(self):
        if self.kind not in (SPIN, FERMION):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        terms = tuple(self.terms)
        for t in terms:
            if self.kind == SPIN:
                if not isinstance(t, PauliString) or t.length != self.n_sites:
                    raise DimensionMismatch("Pauli string length does not match site count")
            else:
                if not isinstance(t, FermionTerm):
                    raise DimensionMismatch("fermion operator expects FermionTerm entries")
                for site, _, _ in t.factors:
                    if not 0 <= site < self.n_sites:
                        raise IndexOutOfRange(f"site {site} outside 0..{self.n_sites - 1}")
        object.__setattr__(self, "terms", terms)

    # construction helpers ------------------------------------------------
    @classmethod
    def zero(cls, kind: str, n_sites: int) -> "OperatorSum":
        return cls(kind, n_sites, ())

    @classmethod
    def identity(cls, kind: str, n_sites: int, coefficient: complex = 1.0) -> "OperatorSum":
        if kind == SPIN:
            return cls(kind, n_sites, (PauliString("I" * n_sites, coefficient),))
        return cls(kind, n_sites, (FermionTerm((), coefficient),))

    def __len__(self):
        return len(self.terms)

    @property
    def is_empty(self) -> bool:
        return len(self.terms) == 0

    # algebra ------------------------------------------------------------
    def _check_compatible(self, other: "OperatorSum"):
        if self.kind != other.kind or self.n_sites != other.n_sites:
            raise DimensionMismatch(
                f"cannot combine {self.kind}/{self.n_sites} with {other.kind}/{other.n_sites}"
            )

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = OperatorSum.identity(self.kind, self.n_sites, other)
        self._check_compatible(other)
        return OperatorSum(self.kind, self.n_sites, self.terms + other.terms).simplify()

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float, complex)):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, s: complex) -> "OperatorSum":
        s = complex(s)
        terms = tuple(type(t)(t.key(), t.coefficient * s) for t in self.terms)
        return OperatorSum(self.kind, self.n_sites, terms)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(other)
        if not isinstance(other, OperatorSum):
            return NotImplemented
        self._check_compatible(other)
        acc: dict = {}
        if self.kind == SPIN:
            for a in self.terms:
                for b in other.terms:
                    phase = 1.0 + 0j
                    letters = []
                    for la, lb in zip(a.letters, b.letters):
                        ph, lc = _PAULI_MUL[(la, lb)]
                        phase *= ph
                        letters.append(lc)
                    key = "".join(letters)
                    acc[key] = acc.get(key, 0) + phase * a.coefficient * b.coefficient
            terms = [PauliString(k, c) for k, c in acc.items()]
        else:
            for a in self.terms:
                for b in other.terms:
                    c0 = a.coefficient * b.coefficient
                    for fac, c in _normal_order(a.factors + b.factors):
                        acc[fac] = acc.get(fac, 0) + c * c0
            terms = [FermionTerm(k, c) for k, c in acc.items()]
        return OperatorSum(self.kind, self.n_sites, tuple(terms)).simplify()

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self.scale(other)
        return NotImplemented

    def __truediv__(self, other):
        return self.scale(1.0 / complex(other))

    def adjoint(self) -> "OperatorSum":
        return OperatorSum(self.kind, self.n_sites, tuple(t.adjoint() for t in self.terms)).simplify()

    def simplify(self, tol: float = DROP_TOL) -> "OperatorSum":
        """Canonicalize: normal-order fermion terms, merge equal terms, drop zeros."""
        acc: dict = {}
        if self.kind == SPIN:
            for t in self.terms:
                acc[t.letters] = acc.get(t.letters, 0) + t.coefficient
            terms = tuple(PauliString(k, c) for k, c in acc.items() if abs(c) > tol)
        else:
            for t in self.terms:
                for fac, c in _normal_order(t.factors):
                    acc[fac] = acc.get(fac, 0) + c * t.coefficient
            terms = tuple(FermionTerm(k, c) for k, c in acc.items() if abs(c) > tol)
        return OperatorSum(self.kind, self.n_sites, terms)

    def coefficient_map(self) -> dict:
        return {t.key(): t.coefficient for t in self.simplify().terms}

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        a = self.coefficient_map()
        b = self.adjoint().coefficient_map()
        for k in set(a) | set(b):
            if abs(a.get(k, 0) - b.get(k, 0)) > tol:
                return False
        return True

    def norm_bound(self) -> float:
        """Sum of absolute coefficients (an upper bound on the operator norm for spins)."""
        return float(sum(abs(t.coefficient) for t in self.terms))

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        terms = []
        for t in self.terms:
            entry = {"re": t.coefficient.real, "im": t.coefficient.imag}
            if self.kind == SPIN:
                entry = {"letters": t.letters, **entry}
            else:
                entry = {
                    "factors": [[s, _SPIN_NAMES[sp_], d] for s, sp_, d in t.factors],
                    **entry,
                }
            terms.append(entry)
        return {"kind": self.kind, "siteCount": self.n_sites, "terms": terms}

    @classmethod
    def from_dict(cls, data: Mapping) -> "OperatorSum":
        kind = data["kind"]
        n = int(data["siteCount"])
        terms = []
        for t in data["terms"]:
            c = complex(t.get("re", 0.0), t.get("im", 0.0))
            if kind == SPIN:
                terms.append(PauliString(t["letters"], c))
            else:
                terms.append(FermionTerm(tuple(tuple(f) for f in t["factors"]), c))
        return cls(kind, n, tuple(terms))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "OperatorSum":
        return cls.from_dict(json.loads(text))


def spin_sum(n_sites: int, entries: Iterable) -> OperatorSum:
    """Build a spin operator from ``(letters, coefficient)`` pairs."""
    return OperatorSum(SPIN, n_sites, tuple(PauliString(l, c) for l, c in entries)).simplify()


def pauli(n_sites: int, ops: Mapping[int, str], coefficient: complex = 1.0) -> OperatorSum:
    """Single Pauli string with letters placed on the given sites."""
    letters = ["I"] * n_sites
    for site, letter in ops.items():
        if not 0 <= site < n_sites:
            raise IndexOutOfRange(f"site {site} outside 0..{n_sites - 1}")
        letters[site] = letter
    return OperatorSum(SPIN, n_sites, (PauliString("".join(letters), coefficient),))


def local_product(n_sites: int, ops: Sequence[tuple], coefficient: complex = 1.0) -> OperatorSum:
    """Product of single-site 2x2 matrices, expanded in Pauli strings.

    ``ops`` is a sequence of ``(site, matrix)`` in operator order; repeated
    sites are multiplied together first.
    """
    per_site: dict = {}
    for site, mat in ops:
        mat = np.asarray(mat, dtype=complex)
        per_site[site] = per_site[site] @ mat if site in per_site else mat
    sites = sorted(per_site)
    expansions = []
    for s in sites:
        m = per_site[s]
        comps = []
        for letter, pm in PAULI_MATRICES.items():
            c = np.trace(pm @ m) / 2
            if abs(c) > 1e-15:
                comps.append((letter, c))
        expansions.append(comps)
    entries = []
    for combo in itertools.product(*expansions):
        letters = ["I"] * n_sites
        c = complex(coefficient)
        for s, (letter, cc) in zip(sites, combo):
            letters[s] = letter
            c *= cc
        entries.append(("".join(letters), c))
    return spin_sum(n_sites, entries)


SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)


def fermion(n_sites: int, factors: Sequence[tuple], coefficient: complex = 1.0) -> OperatorSum:
    """Single fermion product, normal-ordered on construction."""
    return OperatorSum(FERMION, n_sites, (FermionTerm(tuple(factors), coefficient),)).simplify()


def number_op(n_sites: int, site: int, spin: int) -> OperatorSum:
    return fermion(n_sites, [(site, spin, True), (site, spin, False)])


def hopping(n_sites: int, i: int, j: int, spin: int) -> OperatorSum:
    """c^dagger_i c_j + h.c. for one spin species."""
    return fermion(n_sites, [(i, spin, True), (j, spin, False)]) + fermion(
        n_sites, [(j, spin, True), (i, spin, False)]
    )


def jordan_wigner(op: OperatorSum) -> OperatorSum:
    """Map a fermionic operator to Pauli strings on ``2 * n_sites`` qubits.

    Qubit ``m`` carries mode ``m``; the resulting matrix in the full spin
    space equals the fermionic matrix in the full Fock space.
    """
    if op.kind != FERMION:
        raise DimensionMismatch("jordan_wigner expects a fermionic operator")
    n = op.n_sites
    nq = 2 * n
    total = OperatorSum.zero(SPIN, nq)
    cache: dict = {}
    for t in op.terms:
        prod = OperatorSum.identity(SPIN, nq, t.coefficient)
        for site, spin, dagger in t.factors:
            m = site + spin * n
            key = (m, dagger)
            if key not in cache:
                local = SIGMA_MINUS if dagger else SIGMA_PLUS
                cache[key] = local_product(nq, [(q, PAULI_MATRICES["Z"]) for q in range(m)] + [(m, local)])
            prod = prod * cache[key]
        total = total + prod
    return total


# --------------------------------------------------------------------------
# sectors and states
# --------------------------------------------------------------------------


def _fixed_popcount(nbits: int, count: int) -> np.ndarray:
    states = []
    for combo in itertools.combinations(range(nbits), count):
        s = 0
        for b in combo:
            s |= 1 << (nbits - 1 - b)
        states.append(s)
    return np.array(sorted(states), dtype=np.uint64)


@dataclass(frozen=True)
class Sector:
    """Symmetry sector of a spin or spinful-fermion Hilbert space.

    ``magnetization`` is the eigenvalue of sum_i Z_i (spin kind only).
    Fermion sectors fix ``(n_up, n_down)``; leaving both ``None`` selects the
    full Fock space.
    """

    kind: str
    n_sites: int
    n_up: int | None = None
    n_down: int | None = None
    magnetization: int | None = None

    def __post_init__(self):
        if self.kind == SPIN:
            if self.n_up is not None or self.n_down is not None:
                raise ValueError("spin sectors take a magnetization, not particle numbers")
            if self.magnetization is not None:
                m = self.magnetization
                if abs(m) > self.n_sites or (self.n_sites - m) % 2:
                    raise ValueError(f"magnetization {m} impossible for {self.n_sites} spins")
        elif self.kind == FERMION:
            if (self.n_up is None) != (self.n_down is None):
                raise ValueError("fermion sectors fix both particle numbers or neither")
            if self.n_up is not None and not (
                0 <= self.n_up <= self.n_sites and 0 <= self.n_down <= self.n_sites
            ):
                raise ValueError("particle numbers out of range")
            if self.magnetization is not None:
                raise ValueError("fermion sectors take particle numbers")
        else:
            raise ValueError(f"unknown sector kind {self.kind!r}")

    @classmethod
    def spin(cls, n_sites: int, magnetization: int | None = None) -> "Sector":
        return cls(SPIN, n_sites, magnetization=magnetization)

    @classmethod
    def fermion(cls, n_sites: int, n_up: int | None = None, n_down: int | None = None) -> "Sector":
        return cls(FERMION, n_sites, n_up=n_up, n_down=n_down)

    @property
    def n_modes(self) -> int:
        return self.n_sites if self.kind == SPIN else 2 * self.n_sites

    def basis(self) -> np.ndarray:
        return _basis(self)

    @property
    def dimension(self) -> int:
        return len(_basis(self))

    def index_of(self, states) -> np.ndarray:
        """Basis positions of the given basis integers (-1 when absent)."""
        basis = _basis(self)
        states = np.asarray(states, dtype=np.uint64)
        idx = np.searchsorted(basis, states)
        idx = np.minimum(idx, len(basis) - 1)
        return np.where(basis[idx] == states, idx, -1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "siteCount": self.n_sites,
            "nUp": self.n_up,
            "nDown": self.n_down,
            "magnetization": self.magnetization,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Sector":
        return cls(d["kind"], int(d["siteCount"]), d.get("nUp"), d.get("nDown"), d.get("magnetization"))


@functools.lru_cache(maxsize=128)
def _basis(sector: Sector) -> np.ndarray:
    n = sector.n_sites
    if sector.kind == SPIN:
        if n > 30:
            raise DimensionMismatch("spin sectors above 30 sites are not supported")
        if sector.magnetization is None:
            b = np.arange(2**n, dtype=np.uint64)
        else:
            b = _fixed_popcount(n, (n - sector.magnetization) // 2)
    else:
        if n > 16:
            raise DimensionMismatch("fermion sectors above 16 sites are not supported")
        if sector.n_up is None:
            b = np.arange(4**n, dtype=np.uint64)
        else:
            ups = _fixed_popcount(n, sector.n_up)
            downs = _fixed_popcount(n, sector.n_down)
            b = ((ups[:, None] << np.uint64(n)) | downs[None, :]).ravel()
    b.flags.writeable = False
    return b


def _as_vector(a) -> np.ndarray:
    v = np.array(a, dtype=np.complex128)
    v.flags.writeable = False
    return v


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Dense amplitude vector over a sector basis."""

    sector: Sector
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = _as_vector(self.amplitudes)
        if a.ndim != 1 or a.shape[0] != self.sector.dimension:
            raise DimensionMismatch(
                f"amplitude length {a.shape} does not match sector dimension {self.sector.dimension}"
            )
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def basis_state(cls, sector: Sector, state_int: int) -> "QuantumState":
        idx = sector.index_of([state_int])[0]
        if idx < 0:
            raise SectorViolation(f"basis state {state_int} not in sector")
        a = np.zeros(sector.dimension, dtype=complex)
        a[idx] = 1.0
        return cls(sector, a)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "QuantumState":
        return QuantumState(self.sector, self.amplitudes / self.norm)

    def overlap(self, other: "QuantumState") -> complex:
        if other.sector != self.sector:
            raise DimensionMismatch("states live in different sectors")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def embed(self, target: Sector) -> "QuantumState":
        """Re-express the state in a larger sector containing its basis."""
        if target == self.sector:
            return self
        idx = target.index_of(self.sector.basis())
        if np.any(idx < 0):
            raise SectorViolation("target sector does not contain the state's basis")
        a = np.zeros(target.dimension, dtype=complex)
        a[idx] = self.amplitudes
        return QuantumState(target, a)

    def to_dict(self) -> dict:
        return {
            "sector": self.sector.to_dict(),
            "re": self.amplitudes.real.tolist(),
            "im": self.amplitudes.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QuantumState":
        return cls(Sector.from_dict(d["sector"]), np.array(d["re"]) + 1j * np.array(d["im"]))


@dataclass(frozen=True, eq=False)
class MixedState:
    """Density operator sum_a p_a |v_a><v_a| stored in factored form.

    ``vectors`` holds the orthonormal eigenvectors as columns.
    """

    sector: Sector
    probabilities: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        v = np.array(self.vectors, dtype=np.complex128)
        if v.ndim != 2 or v.shape[0] != self.sector.dimension or v.shape[1] != p.shape[0]:
            raise DimensionMismatch("eigenvector matrix does not match sector/probabilities")
        if np.any(p < -1e-15):
            raise ValueError("negative probabilities")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to one")
        p.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "vectors", v)

    @classmethod
    def from_pure(cls, state: QuantumState) -> "MixedState":
        return cls(state.sector, np.array([1.0]), state.amplitudes[:, None])

    @property
    def states(self) -> list:
        return [QuantumState(self.sector, self.vectors[:, a]) for a in range(self.vectors.shape[1])]

    @property
    def purity(self) -> float:
        """tr rho^2 computed from the factored form (exact for orthonormal vectors)."""
        gram = self.vectors.conj().T @ self.vectors
        pw = self.probabilities
        return float(np.real(np.einsum("a,b,ab,ab->", pw, pw, gram, gram.conj())))

    def density_matrix(self) -> np.ndarray:
        return (self.vectors * self.probabilities) @ self.vectors.conj().T


def state_columns(state) -> tuple[np.ndarray, np.ndarray]:
    """(vectors as columns, weights) for a pure or mixed state."""
    if isinstance(state, QuantumState):
        return state.amplitudes[:, None], np.array([1.0])
    if isinstance(state, MixedState):
        return state.vectors, state.probabilities
    raise TypeError(f"expected QuantumState or MixedState, got {type(state).__name__}")


# --------------------------------------------------------------------------
# matrices
# --------------------------------------------------------------------------


def _check_sector(op: OperatorSum, sector: Sector):
    if op.kind != sector.kind or op.n_sites != sector.n_sites:
        raise DimensionMismatch(
            f"operator {op.kind}/{op.n_sites} incompatible with sector {sector.kind}/{sector.n_sites}"
        )


def _pauli_masks(terms, n):
    xm = np.zeros(len(terms), dtype=np.uint64)
    zm = np.zeros(len(terms), dtype=np.uint64)
    ny = np.zeros(len(terms), dtype=np.int64)
    for t, term in enumerate(terms):
        x = z = y = 0
        for i, ch in enumerate(term.letters):
            bit = 1 << (n - 1 - i)
            if ch == "X":
                x |= bit
            elif ch == "Z":
                z |= bit
            elif ch == "Y":
                x |= bit
                z |= bit
                y += 1
        xm[t], zm[t], ny[t] = x, z, y
    return xm, zm, ny


def _apply_terms(op: OperatorSum, sector: Sector, states: np.ndarray):
    coeffs = np.array([t.coefficient for t in op.terms], dtype=np.complex128)
    if op.kind == SPIN:
        xm, zm, ny = _pauli_masks(op.terms, op.n_sites)
        return kernels.pauli_terms_apply(states, xm, zm, ny, coeffs)
    n = op.n_sites
    modes, dags, offsets = [], [], [0]
    for t in op.terms:
        for site, spin, dagger in t.factors:
            modes.append(site + spin * n)
            dags.append(1 if dagger else 0)
        offsets.append(len(modes))
    return kernels.fermion_terms_apply(
        states,
        np.array(modes, dtype=np.int64),
        np.array(dags, dtype=np.int8),
        np.array(offsets, dtype=np.int64),
        coeffs,
        2 * n,
    )


@functools.lru_cache(maxsize=512)
def _build_matrix_cached(op: OperatorSum, sector: Sector) -> sp.csr_matrix:
    basis = sector.basis()
    dim = len(basis)
    if op.is_empty:
        return sp.csr_matrix((dim, dim), dtype=np.complex128)
    new, vals = _apply_terms(op, sector, basis)
    cols = np.broadcast_to(np.arange(dim), new.shape).ravel()
    new = new.ravel()
    vals = vals.ravel()
    keep = vals != 0
    new, vals, cols = new[keep], vals[keep], cols[keep]
    rows = sector.index_of(new)
    inside = rows >= 0
    if not np.all(inside):
        # Out-of-sector amplitudes may cancel between terms (e.g. XX + YY).
        lk_state, lk_col, lk_val = new[~inside], cols[~inside], vals[~inside]
        keys = np.stack([lk_state, lk_col.astype(np.uint64)])
        _, inv = np.unique(keys, axis=1, return_inverse=True)
        inv = np.asarray(inv).ravel()
        summed = np.bincount(inv, weights=lk_val.real) + 1j * np.bincount(inv, weights=lk_val.imag)
        scale = max(1.0, float(np.max(np.abs([t.coefficient for t in op.terms]))))
        if np.max(np.abs(summed)) > 1e-10 * scale:
            raise SectorViolation("operator does not conserve the sector's quantum numbers")
    mat = sp.coo_matrix((vals[inside], (rows[inside], cols[inside])), shape=(dim, dim)).tocsr()
    mat.sum_duplicates()
    mat.data.flags.writeable = False
    return mat


def build_matrix(op: OperatorSum, sector: Sector) -> sp.csr_matrix:
    """Sparse matrix of ``op`` restricted to ``sector`` (CSR, complex128).

    Raises SectorViolation when the operator connects the sector to states
    outside it.
    """
    _check_sector(op, sector)
    return _build_matrix_cached(op, sector)


def dense_matrix(op: OperatorSum, sector: Sector) -> np.ndarray:
    return build_matrix(op, sector).toarray()


def apply_op(op: OperatorSum, state: QuantumState) -> np.ndarray:
    """Unnormalized vector op|state>."""
    return build_matrix(op, state.sector) @ state.amplitudes


def expectation(state, op: OperatorSum) -> complex:
    """<op> in a pure state or sum_a p_a <v_a|op|v_a> in a mixed state."""
    vecs, w = state_columns(state)
    mat = build_matrix(op, state.sector)
    mv = mat @ vecs
    return complex(np.sum(w * np.einsum("ia,ia->a", vecs.conj(), mv)))


# --------------------------------------------------------------------------
# Hubbard ladder
# --------------------------------------------------------------------------


def ladder_site(rung: int, leg: int) -> int:
    """Rung-major site index on a two-leg ladder."""
    return 2 * rung + leg


def ladder_hopping_x(rungs: int) -> OperatorSum:
    """Sum over leg bonds and spins of c^dagger c + h.c. (open along legs)."""
    n = 2 * rungs
    total = OperatorSum.zero(FERMION, n)
    for r in range(rungs - 1):
        for leg in (0, 1):
            for spin in (UP, DOWN):
                total = total + hopping(n, ladder_site(r, leg), ladder_site(r + 1, leg), spin)
    return total


def ladder_hopping_y(rungs: int) -> OperatorSum:
    """Sum over rung bonds and spins of c^dagger c + h.c."""
    n = 2 * rungs
    total = OperatorSum.zero(FERMION, n)
    for r in range(rungs):
        for spin in (UP, DOWN):
            total = total + hopping(n, ladder_site(r, 0), ladder_site(r, 1), spin)
    return total


def ladder_onsite(rungs: int) -> OperatorSum:
    """Sum over sites of n_up n_down."""
    n = 2 * rungs
    total = OperatorSum.zero(FERMION, n)
    for s in range(n):
        total = total + fermion(n, [(s, UP, True), (s, UP, False), (s, DOWN, True), (s, DOWN, False)])
    return total


def hubbard_ladder(rungs: int, t_x: float, t_y: float, U: float) -> OperatorSum:
    """Two-leg Hubbard ladder: -t_x (legs) - t_y (rungs) hopping + U n_up n_down."""
    if rungs < 1:
        raise IndexOutOfRange("a ladder needs at least one rung")
    return (
        ladder_hopping_x(rungs) * (-t_x) + ladder_hopping_y(rungs) * (-t_y) + ladder_onsite(rungs) * U
    )


def ladder_hopping_diagonal(rungs: int) -> OperatorSum:
    """Plaquette-diagonal hopping (r,0)-(r+1,1) and (r,1)-(r+1,0), both spins."""
    n = 2 * rungs
    total = OperatorSum.zero(FERMION, n)
    for r in range(rungs - 1):
        for a, b in ((0, 1), (1, 0)):
            for spin in (UP, DOWN):
                total = total + hopping(n, ladder_site(r, a), ladder_site(r + 1, b), spin)
    return total


def site_density(n_sites: int, site: int) -> OperatorSum:
    return number_op(n_sites, site, UP) + number_op(n_sites, site, DOWN)


def ladder_density_pairs(rungs: int, bond: str) -> OperatorSum:
    """Sum of n_i n_j over leg ("x"), rung ("y") or plaquette-diagonal ("d") pairs."""
    n = 2 * rungs
    if bond == "x":
        pairs = [(ladder_site(r, l), ladder_site(r + 1, l)) for r in range(rungs - 1) for l in (0, 1)]
    elif bond == "y":
        pairs = [(ladder_site(r, 0), ladder_site(r, 1)) for r in range(rungs)]
    elif bond == "d":
        pairs = [(ladder_site(r, a), ladder_site(r + 1, 1 - a)) for r in range(rungs - 1) for a in (0, 1)]
    else:
        raise ValueError(f"bond must be x, y or d, not {bond!r}")
    total = OperatorSum.zero(FERMION, n)
    for i, j in pairs:
        total = total + site_density(n, i) * site_density(n, j)
    return total.simplify()


def rung_singlet_annihilator(rungs: int, rung: int) -> OperatorSum:
    """Delta_i = c_{(i,0) up} c_{(i,1) down} - c_{(i,0) down} c_{(i,1) up}."""
    if not 0 <= rung < rungs:
        raise IndexOutOfRange(f"rung {rung} outside 0..{rungs - 1}")
    n = 2 * rungs
    a, b = ladder_site(rung, 0), ladder_site(rung, 1)
    return fermion(n, [(a, UP, False), (b, DOWN, False)]) - fermion(n, [(a, DOWN, False), (b, UP, False)])


def dwave_correlator(rung_i: int, rung_j: int, rungs: int) -> OperatorSum:
    """Hermitian part of Delta_i^dagger Delta_j, i.e. (D_i^+ D_j + D_j^+ D_i)/2.

    Its expectation is Re<Delta_i^dagger Delta_j>; for i == j it is the rung
    singlet density Delta_i^dagger Delta_i.
    """
    di = rung_singlet_annihilator(rungs, rung_i)
    dj = rung_singlet_annihilator(rungs, rung_j)
    prod = di.adjoint() * dj
    return (prod + prod.adjoint()) * 0.5


def dwave_sum(rungs: int, origin: int = 0) -> OperatorSum:
    """Sum over r >= 0 of the symmetrized correlator between rung ``origin`` and ``origin + r``."""
    total = OperatorSum.zero(FERMION, 2 * rungs)
    for r in range(origin, rungs):
        total = total + dwave_correlator(origin, r, rungs)
    return total
