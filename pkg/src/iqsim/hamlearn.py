"""Hamiltonian learning by variance minimization, plus Gibbs-state fitting.

For a state psi and ansatz H = H0 + sum_i c_i h_i the energy variance is the
quadratic form c^T G c - 2 v^T c + var(H0) with

    G_ij = <{h_i, h_j}>/2 - <h_i><h_j>,   v_i = <H0><h_i> - <{H0, h_i}>/2.

An energy bias 2 alpha <H> and ridge weights w_i c_i^2 turn this into a
regularized least-squares problem, solved in closed form or as a convex QP
when linear constraints are present.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import DimensionMismatch, IndexOutOfRange, IterationCap, NoSolution
from .exact import energy_variance
from .opalg import (
    MixedState,
    OperatorSum,
    build_matrix,
    ladder_density_pairs,
    ladder_hopping_diagonal,
    ladder_hopping_x,
    ladder_hopping_y,
    ladder_onsite,
    state_columns,
)
from .qp import solve_qp

KERNEL_TOL = 1e-10
ORTHOGONALITY_TOL = 1e-8


@dataclass(frozen=True)
class LinearConstraint:
    """sum_i coefficients[i] * c_i (==, >=, <=) bound."""

    coefficients: tuple
    kind: str
    bound: float = 0.0

    def __post_init__(self):
        if self.kind not in ("eq", "ge", "le"):
            raise ValueError(f"constraint kind must be eq, ge or le, not {self.kind!r}")
        object.__setattr__(self, "coefficients", tuple((int(i), float(a)) for i, a in dict(self.coefficients).items()))

    def row(self, n: int) -> np.ndarray:
        r = np.zeros(n)
        for i, a in self.coefficients:
            if not 0 <= i < n:
                raise IndexOutOfRange(f"constraint refers to term {i} of {n}")
            r[i] += a
        return r


def nonnegative(i: int) -> LinearConstraint:
    return LinearConstraint(((i, 1.0),), "ge", 0.0)


def fixed(i: int, value: float) -> LinearConstraint:
    return LinearConstraint(((i, 1.0),), "eq", float(value))


@dataclass(frozen=True, eq=False)
class LearnProblem:
    """Ansatz, regularization and constraints for one learning solve.

    ``reference`` may be None (empty H0). ``normalize`` requests the unit
    norm condition sum c_i^2 = 1, meaningful when H0 is empty.
    """

    terms: tuple
    reference: OperatorSum | None = None
    weights: tuple | None = None
    alpha: float = 0.0
    constraints: tuple = ()
    kernel_tolerance: float = KERNEL_TOL
    normalize: bool = False
    labels: tuple = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        w = tuple(np.zeros(len(terms))) if self.weights is None else tuple(float(x) for x in self.weights)
        if len(w) != len(terms):
            raise DimensionMismatch("one weight per ansatz term is required")
        if any(x < 0 for x in w):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for con in self.constraints:
            con.row(len(terms))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"h{i}" for i in range(len(terms))))

    def hamiltonian(self, coefficients) -> OperatorSum:
        out = self.reference if self.reference is not None else OperatorSum.zero(self.terms[0].kind, self.terms[0].n_sites)
        for c, h in zip(coefficients, self.terms):
            out = out + h.scale(float(c))
        return out.simplify()


@dataclass
class LearnResult:
    coefficients: np.ndarray
    variance: float
    kernel_dimension: int
    kernel_basis: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    labels: tuple = ()
    weights: tuple = ()
    constrained: tuple = ()

    def rescaled(self, index: int) -> np.ndarray:
        """Coefficients divided so that term ``index`` equals one."""
        ref = self.coefficients[index]
        if abs(ref) < 1e-14:
            raise NoSolution("reference coefficient is zero")
        return self.coefficients / ref

    def to_dict(self) -> dict:
        return {
            "terms": [
                {"label": l, "coefficient": float(c), "weight": float(w), "constrained": bool(k)}
                for l, c, w, k in zip(self.labels, self.coefficients, self.weights, self.constrained)
            ],
            "variance": self.variance,
            "kernel_dimension": self.kernel_dimension,
            "kernel_basis": np.asarray(self.kernel_basis, dtype=float).T.tolist(),
            "diagnostics": {k: v for k, v in self.diagnostics.items() if isinstance(v, (int, float, str, bool))},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnResult":
        terms = d["terms"]
        n = len(terms)
        basis = np.array(d.get("kernel_basis", []), dtype=float).reshape(-1, n).T
        return cls(
            np.array([t["coefficient"] for t in terms], dtype=float),
            float(d["variance"]),
            int(d["kernel_dimension"]),
            basis,
            dict(d.get("diagnostics", {})),
            tuple(t["label"] for t in terms),
            tuple(float(t["weight"]) for t in terms),
            tuple(bool(t["constrained"]) for t in terms),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# --------------------------------------------------------------------------
# correlation matrix
# --------------------------------------------------------------------------


def correlation_from_vectors(vecs, weights, term_vectors, reference_vectors=None):
    """(G, v, means) from h_i applied to the state columns (and H0 applied, if any)."""
    w = np.asarray(weights, dtype=float)
    n = len(term_vectors)
    means = np.array([np.real(np.einsum("a,ia,ia->", w, vecs.conj(), x)) for x in term_vectors])
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = np.real(np.einsum("a,ia,ia->", w, term_vectors[i].conj(), term_vectors[j])) - means[i] * means[j]
    v = np.zeros(n)
    if reference_vectors is not None:
        h0 = reference_vectors
        e0 = np.real(np.einsum("a,ia,ia->", w, vecs.conj(), h0))
        for i in range(n):
            v[i] = e0 * means[i] - np.real(np.einsum("a,ia,ia->", w, h0.conj(), term_vectors[i]))
    return G, v, means


def correlation_system(state, problem: LearnProblem):
    """(G, v, means) for a pure or mixed state; means_i = <h_i>."""
    vecs, w = state_columns(state)
    hv = [build_matrix(op, state.sector) @ vecs for op in problem.terms]
    h0 = None if problem.reference is None else build_matrix(problem.reference, state.sector) @ vecs
    return correlation_from_vectors(vecs, w, hv, h0)


def kernel(G: np.ndarray, tol: float = KERNEL_TOL):
    """Eigen-decomposition split: (eigenvalues, eigenvectors, kernel mask)."""
    lam, U = np.linalg.eigh(G)
    top = abs(lam).max() if len(lam) else 0.0
    return lam, U, lam < tol * top + 1e-14


def variance(state, H: OperatorSum) -> float:
    """<H^2> - <H>^2 with rounding noise below 1e-10 clipped to zero."""
    val = energy_variance(state, H)
    return max(val, 0.0) if val > -1e-10 else val


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------


def learn(state, problem: LearnProblem) -> LearnResult:
    """Minimize var(H) + 2 alpha <H> + sum_i w_i c_i^2 subject to the constraints.

    Without constraints the stationarity condition (G + W) c = v - alpha b
    (b_i = <h_i>) is solved in the eigenbasis with kernel eigenvalues
    dropped, i.e. the minimum-norm solution. With ``normalize`` and an empty
    reference the unit-norm minimizer is taken inside ker(G) when that is
    nonempty (the bias then picks the lowest-energy kernel direction) and
    from the lowest eigenvector of G + W otherwise.
    """
    G, v, b = correlation_system(state, problem)
    n = len(v)
    W = np.diag(problem.weights)
    lam, U, ker = kernel(G, problem.kernel_tolerance)
    kbasis = U[:, ker]
    vk = kbasis.T @ v
    diag = {"kernel_overlap": float(np.linalg.norm(vk))}
    if np.linalg.norm(vk) > ORTHOGONALITY_TOL * (np.linalg.norm(v) + 1):
        raise NoSolution(f"v has a component {np.linalg.norm(vk):.2e} in ker(G)")

    constrained = [False] * n
    for con in problem.constraints:
        for i, _ in con.coefficients:
            constrained[i] = True

    if problem.normalize:
        if problem.reference is not None and problem.reference.simplify().terms:
            raise ValueError("unit-norm learning requires an empty reference Hamiltonian")
        c = _normalized_solution(G + W, kbasis, b, problem.alpha)
    elif problem.constraints:
        c, kkt = _constrained_solution(G + W, v - problem.alpha * b, problem.constraints, n)
        diag.update(kkt)
    else:
        c = solve_unconstrained(G, W, v, b, problem.alpha, problem.kernel_tolerance)

    H = problem.hamiltonian(c)
    var = variance(state, H)
    diag["objective"] = float(c @ G @ c - 2 * v @ c + 2 * problem.alpha * b @ c + c @ W @ c)
    return LearnResult(np.asarray(c, dtype=float), float(var), int(ker.sum()), kbasis, diag,
                       tuple(problem.labels), tuple(problem.weights), tuple(constrained))


def solve_unconstrained(G, W, v, b, alpha: float = 0.0, tol: float = KERNEL_TOL):
    """Minimum-norm solution of (G + W) c = v - alpha b."""
    A = G + W
    rhs = v - alpha * b
    lam, U, ker = kernel(A, tol)
    proj = U[:, ker].T @ rhs
    if np.linalg.norm(proj) > ORTHOGONALITY_TOL * (np.linalg.norm(rhs) + 1):
        # linear bias along a flat direction: no minimum exists
        raise NoSolution("energy bias has a component along a zero-variance direction; add ridge weights")
    keep = ~ker
    return U[:, keep] @ ((U[:, keep].T @ rhs) / lam[keep])


def _normalized_solution(A, kbasis, b, alpha):
    if kbasis.shape[1]:
        pb = kbasis @ (kbasis.T @ b)
        if alpha > 0 and np.linalg.norm(pb) > 1e-12:
            return -pb / np.linalg.norm(pb)
        c = kbasis[:, 0].copy()
    else:
        _, U = np.linalg.eigh(A)
        c = U[:, 0].copy()
    return -c if c @ b > 0 else c


def _constrained_solution(A, rhs, constraints, n):
    eq = [c for c in constraints if c.kind == "eq"]
    ineq = [c for c in constraints if c.kind != "eq"]
    A_eq = np.array([c.row(n) for c in eq]).reshape(-1, n)
    b_eq = np.array([c.bound for c in eq])
    A_in = np.array([c.row(n) if c.kind == "ge" else -c.row(n) for c in ineq]).reshape(-1, n)
    b_in = np.array([c.bound if c.kind == "ge" else -c.bound for c in ineq])
    res = solve_qp(2 * A, -2 * rhs, A_eq, b_eq, A_in, b_in)
    return res.x, {f"kkt_{k}": v for k, v in res.kkt.items()}


# --------------------------------------------------------------------------
# ladder ansatz
# --------------------------------------------------------------------------

LADDER_LABELS = ("hop_x", "hop_y", "hop_diag", "U", "V_x", "V_y", "V_diag")


def ladder_terms(rungs: int) -> tuple:
    """Translation-invariant extended-Hubbard terms, in LADDER_LABELS order."""
    return (
        ladder_hopping_x(rungs),
        ladder_hopping_y(rungs),
        ladder_hopping_diagonal(rungs),
        ladder_onsite(rungs),
        ladder_density_pairs(rungs, "x"),
        ladder_density_pairs(rungs, "y"),
        ladder_density_pairs(rungs, "d"),
    )


def ladder_problem(rungs: int, repulsive: bool = True) -> LearnProblem:
    """Extended-Hubbard learning with the leg hopping pinned to +1 (t_x = -1).

    ``repulsive`` adds U >= 0 and V >= 0 for every density-density term.
    """
    cons = [fixed(0, 1.0)]
    if repulsive:
        cons += [nonnegative(i) for i, l in enumerate(LADDER_LABELS) if l.startswith(("U", "V"))]
    return LearnProblem(ladder_terms(rungs), constraints=tuple(cons), labels=LADDER_LABELS)


# --------------------------------------------------------------------------
# Gibbs states
# --------------------------------------------------------------------------


@dataclass
class GibbsFit:
    coefficients: np.ndarray
    distance: float
    iterations: int


def _gibbs_density(mats, c, beta):
    H = sum(ci * m for ci, m in zip(c, mats))
    w, U = np.linalg.eigh(H)
    p = np.exp(-beta * (w - w.min()))
    p /= p.sum()
    return (U * p) @ U.conj().T


def gibbs_learn(target: MixedState, terms: Sequence[OperatorSum], beta: float = 1.0, x0=None,
                max_iter: int = 2000, gtol: float = 1e-10) -> GibbsFit:
    """Fit exp(-beta H(c))/Z to a target density by minimizing the squared Hilbert-Schmidt distance."""
    rho_t = target.density_matrix()
    mats = [build_matrix(t, target.sector).toarray() for t in terms]
    x0 = np.zeros(len(mats)) if x0 is None else np.asarray(x0, dtype=float)

    def cost(c):
        d = _gibbs_density(mats, c, beta) - rho_t
        return float(np.real(np.vdot(d, d)))

    res = optimize.minimize(cost, x0, method="BFGS", options={"gtol": gtol, "maxiter": max_iter})
    if res.nit >= max_iter:
        raise IterationCap("Gibbs fit did not converge")
    return GibbsFit(np.asarray(res.x), float(res.fun), int(res.nit))
