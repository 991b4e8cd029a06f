"""Variational circuits exp(-i theta_d G_d) ... exp(-i theta_1 G_1) acting on a reference state.

Exact cost values and reverse-sweep gradients, ADAPT gradients and Hessians
over an operator pool, a quasi-Newton optimizer that leaves saddle points
along negative-curvature directions, and a shot-noise model with a
pattern-search optimizer for the finite-budget regime.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize as sopt

from .errors import DimensionMismatch, IterationCap, NonHermitianPool
from .opalg import (
    MixedState,
    OperatorSum,
    QuantumState,
    Sector,
    build_matrix,
    ladder_hopping_x,
    ladder_hopping_y,
    ladder_onsite,
    state_columns,
)

HERMITIAN_TOL = 1e-12
GIBBS_MIN_WEIGHT = 1e-8
GIBBS_MASS = 1.0 - 1e-6


def _check_hermitian(op: OperatorSum, what: str = "generator"):
    if not op.is_hermitian(HERMITIAN_TOL):
        raise NonHermitianPool(f"{what} is not Hermitian")


@functools.lru_cache(maxsize=256)
def _eigensystem(op: OperatorSum, sector: Sector):
    sparse = build_matrix(op, sector)
    if sparse.nnz == np.count_nonzero(sparse.diagonal()) or sparse.nnz == 0:
        # diagonal generator: phases only
        return np.real(sparse.diagonal()), None, None
    mat = sparse.toarray()
    mat = 0.5 * (mat + mat.conj().T)
    if not np.any(mat.imag):
        mat = mat.real
    e, v = np.linalg.eigh(mat)
    return e, v, np.ascontiguousarray(v.conj().T)


def evolve(op: OperatorSum, theta: float, vecs: np.ndarray, sector: Sector) -> np.ndarray:
    """exp(-i theta op) applied to the columns of ``vecs``."""
    e, v, vh = _eigensystem(op, sector)
    if v is None:
        return np.exp(-1j * theta * e)[:, None] * vecs
    if v.dtype.kind == "f":
        x = vh @ vecs.real + 1j * (vh @ vecs.imag)
        x *= np.exp(-1j * theta * e)[:, None]
        return v @ x.real + 1j * (v @ x.imag)
    return v @ (np.exp(-1j * theta * e)[:, None] * (vh @ vecs))


# --------------------------------------------------------------------------
# circuits and costs
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VariationalCircuit:
    """Ordered layers (generator, angle); layer 0 acts first on ``reference``."""

    layers: tuple
    reference: QuantumState | MixedState

    def __post_init__(self):
        layers = tuple((g, float(t)) for g, t in self.layers)
        sec = self.reference.sector
        for g, _ in layers:
            if g.kind != sec.kind or g.n_sites != sec.n_sites:
                raise DimensionMismatch("generator and reference live on different systems")
            _check_hermitian(g)
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_generators(cls, generators: Sequence[OperatorSum], reference, angles=None):
        angles = np.zeros(len(generators)) if angles is None else np.asarray(angles, dtype=float)
        if len(angles) != len(generators):
            raise DimensionMismatch("one angle per generator is required")
        return cls(tuple(zip(generators, angles)), reference)

    @property
    def generators(self) -> tuple:
        return tuple(g for g, _ in self.layers)

    @property
    def angles(self) -> np.ndarray:
        return np.array([t for _, t in self.layers], dtype=float)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def with_angles(self, angles) -> "VariationalCircuit":
        return VariationalCircuit.from_generators(self.generators, self.reference, angles)

    def extended(self, generators: Sequence[OperatorSum], angles=None) -> "VariationalCircuit":
        angles = np.zeros(len(generators)) if angles is None else angles
        return VariationalCircuit(self.layers + tuple(zip(generators, angles)), self.reference)


@dataclass(frozen=True, eq=False)
class CostSpec:
    """cost = <energy_part> - lam * <bonus_part>."""

    energy_part: OperatorSum
    bonus_part: OperatorSum | None = None
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        _check_hermitian(self.energy_part, "energy part")
        if self.bonus_part is not None:
            _check_hermitian(self.bonus_part, "bonus part")

    @property
    def operator(self) -> OperatorSum:
        if self.bonus_part is None or self.lam == 0:
            return self.energy_part
        return (self.energy_part - self.bonus_part * self.lam).simplify()


@dataclass(frozen=True, eq=False)
class OperatorPool:
    candidates: tuple

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise ValueError("empty operator pool")
        for c in cands:
            _check_hermitian(c, "pool operator")
            if (c.kind, c.n_sites) != (cands[0].kind, cands[0].n_sites):
                raise DimensionMismatch("pool operators act on different systems")
        object.__setattr__(self, "candidates", cands)

    def __len__(self):
        return len(self.candidates)


def _columns(circuit: VariationalCircuit, angles=None):
    vecs, w = state_columns(circuit.reference)
    angles = circuit.angles if angles is None else angles
    sec = circuit.reference.sector
    for g, t in zip(circuit.generators, angles):
        vecs = evolve(g, t, vecs, sec)
    return vecs, w


def apply(circuit: VariationalCircuit, angles=None):
    """Output state; mixed references have every eigenvector transformed."""
    vecs, w = _columns(circuit, angles)
    ref = circuit.reference
    if isinstance(ref, QuantumState):
        return QuantumState(ref.sector, vecs[:, 0])
    return MixedState(ref.sector, w, vecs)


def _weighted_expectation(vecs, w, mat) -> float:
    return float(np.real(np.einsum("a,ia,ia->", w, vecs.conj(), mat @ vecs)))


def cost_value(circuit: VariationalCircuit, cost: CostSpec, angles=None) -> float:
    vecs, w = _columns(circuit, angles)
    return _weighted_expectation(vecs, w, build_matrix(cost.operator, circuit.reference.sector))


def cost_and_gradient(circuit: VariationalCircuit, cost: CostSpec, angles=None):
    """Exact cost and its gradient from one forward and one reverse sweep.

    With psi_k the state after layer k and phi_k = U_{k+1}^+ ... U_d^+ C psi_d,
    dC/dtheta_k = 2 Im <phi_k|G_k|psi_k>, summed with weights p_a over the
    eigenvectors of a mixed reference.
    """
    sec = circuit.reference.sector
    angles = circuit.angles if angles is None else np.asarray(angles, dtype=float)
    psi, w = _columns(circuit, angles)
    C = build_matrix(cost.operator, sec)
    phi = C @ psi
    value = float(np.real(np.einsum("a,ia,ia->", w, psi.conj(), phi)))
    grad = np.zeros(len(angles))
    gens = circuit.generators
    for k in range(len(gens) - 1, -1, -1):
        G = build_matrix(gens[k], sec)
        grad[k] = 2.0 * np.imag(np.einsum("a,ia,ia->", w, phi.conj(), G @ psi))
        psi = evolve(gens[k], -angles[k], psi, sec)
        phi = evolve(gens[k], -angles[k], phi, sec)
    return value, grad


# --------------------------------------------------------------------------
# ADAPT gradient and Hessian
# --------------------------------------------------------------------------


class AdaptHessian(NamedTuple):
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def unstable(self) -> bool:
        return bool(self.eigenvalues[0] < 0)


def _pool_ops(pool) -> tuple:
    ops = pool.candidates if isinstance(pool, OperatorPool) else tuple(pool)
    for op in ops:
        _check_hermitian(op, "pool operator")
    return ops


def adapt_gradient(pool, state, H: OperatorSum) -> np.ndarray:
    """dE/dalpha_i = i <[A_i, H]> for the state exp(-i sum alpha A)|state>."""
    ops = _pool_ops(pool)
    vecs, w = state_columns(state)
    Hm = build_matrix(H, state.sector)
    hv = Hm @ vecs
    out = np.empty(len(ops))
    for i, op in enumerate(ops):
        A = build_matrix(op, state.sector)
        av = A @ vecs
        ah = np.einsum("a,ia,ia->", w, vecs.conj(), A @ hv)
        ha = np.einsum("a,ia,ia->", w, vecs.conj(), Hm @ av)
        g = 1j * (ah - ha)
        scale = 1.0 + abs(ah) + abs(ha)
        if abs(g.imag) > 1e-10 * scale:
            raise NonHermitianPool(f"commutator expectation has imaginary residue {g.imag:.2e}")
        out[i] = g.real
    return out


def adapt_hessian(pool, state, H: OperatorSum) -> AdaptHessian:
    """Second derivatives -(<[A_i,[A_j,H]]> + <[A_j,[A_i,H]]>)/2 at alpha = 0.

    With a_i = A_i psi, w_j = A_j H psi and u_j = H a_j the double commutator
    is 2 Re<a_i|w_j> - 2 Re<a_i|u_j>.
    """
    ops = _pool_ops(pool)
    vecs, wts = state_columns(state)
    Hm = build_matrix(H, state.sector)
    hv = Hm @ vecs
    mats = [build_matrix(op, state.sector) for op in ops]
    a = [A @ vecs for A in mats]
    wv = [A @ hv for A in mats]
    u = [Hm @ x for x in a]
    n = len(ops)
    C = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            C[i, j] = 2 * np.real(np.einsum("a,ia,ia->", wts, a[i].conj(), wv[j] - u[j]))
    hess = -0.5 * (C + C.T)
    lam, vec = np.linalg.eigh(hess)
    return AdaptHessian(hess, lam, vec)


def pool_energy(pool, state, H: OperatorSum, alphas) -> float:
    """Exact <H> in exp(-i sum_i alpha_i A_i)|state>; benchmark for the quadratic model."""
    ops = _pool_ops(pool)
    gen = ops[0] * float(alphas[0])
    for op, a in zip(ops[1:], alphas[1:]):
        gen = gen + op * float(a)
    gen = gen.simplify()
    vecs, w = state_columns(state)
    out = evolve(gen, 1.0, vecs, state.sector)
    return _weighted_expectation(out, w, build_matrix(H, state.sector))


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizeOptions:
    max_iter: int = 2000
    gtol: float = 1e-8
    hessian_tol: float = 1e-8
    adapt: bool = False
    pool: OperatorPool | None = None
    weight_cutoff: float = 0.2
    max_layers: int = 60
    max_rescues: int = 50
    starts: int = 1
    seed: int = 0
    init_scale: float = 0.5
    fd_step: float = 1e-4


@dataclass
class OptimizeResult:
    circuit: VariationalCircuit
    cost: float
    trajectory: list = field(default_factory=list)
    added_layers: int = 0
    rescues: int = 0


def parameter_hessian(circuit: VariationalCircuit, cost: CostSpec, angles=None, step: float = 1e-4):
    """Circuit-angle Hessian by central differences of the analytic gradient."""
    x = circuit.angles if angles is None else np.asarray(angles, dtype=float)
    n = len(x)
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        H[i] = (cost_and_gradient(circuit, cost, x + e)[1] - cost_and_gradient(circuit, cost, x - e)[1]) / (2 * step)
    return 0.5 * (H + H.T)


def _descend_along(f, x, d, f0):
    """Best point among a geometric ladder of steps +-s d; None if nothing decreases f."""
    best, best_val = None, f0
    for s in (0.01, 0.03, 0.1, 0.3, 0.6, 1.0):
        for sign in (1.0, -1.0):
            y = x + sign * s * d
            val = f(y)
            if val < best_val - 1e-12 * max(1.0, abs(f0)):
                best, best_val = y, val
    return best, best_val


def _bfgs(circuit, cost, x0, options):
    res = sopt.minimize(
        lambda x: cost_and_gradient(circuit, cost, x), x0, jac=True, method="BFGS",
        options={"gtol": options.gtol, "maxiter": options.max_iter},
    )
    if res.nit >= options.max_iter:
        raise IterationCap(f"quasi-Newton did not reach gtol within {options.max_iter} iterations")
    return np.asarray(res.x), float(res.fun)


def _local_minimize(circuit, cost, x, options, traj, counters):
    """BFGS, then leave saddles along the most negative curvature direction."""
    while True:
        x, val = _bfgs(circuit, cost, x, options)
        traj.append({"iter": len(traj), "theta": x.tolist(), "cost": val, "event": "bfgs"})
        if len(x) == 0:
            return x, val
        hess = parameter_hessian(circuit, cost, x, options.fd_step)
        lam, vec = np.linalg.eigh(hess)
        if lam[0] >= -options.hessian_tol:
            return x, val
        if counters["rescues"] >= options.max_rescues:
            raise IterationCap("too many saddle escapes")
        y, yval = _descend_along(lambda z: cost_value(circuit, cost, z), x, vec[:, 0], val)
        if y is None:
            return x, val
        counters["rescues"] += 1
        traj.append({"iter": len(traj), "theta": y.tolist(), "cost": yval, "event": "saddle-escape"})
        x = y


def optimize(circuit: VariationalCircuit, cost: CostSpec, options: OptimizeOptions = OptimizeOptions()) -> OptimizeResult:
    """Minimize the cost over the circuit angles.

    Every local solve ends with a check of the angle Hessian; a negative
    eigenvalue triggers a line search along its eigenvector and a restart.
    With ``adapt`` on, the circuit grows from ``options.pool``: the operator
    with the largest ADAPT gradient is appended, and when all gradients
    vanish the pool Hessian is consulted and every operator whose weight in
    the most negative eigenvector exceeds ``weight_cutoff`` is appended at
    once. Growth stops when the pool gradient is below ``gtol`` and the pool
    Hessian has no eigenvalue below ``-hessian_tol``.

    ``starts`` > 1 adds seeded random initial angles (uniform in
    +-init_scale) next to the given ones and keeps the best result.
    """
    if options.adapt and options.pool is None:
        raise ValueError("adaptive growth needs an operator pool")
    traj: list = []
    counters = {"rescues": 0}
    rng = np.random.default_rng(options.seed)
    x_best, v_best = None, np.inf
    inits = [circuit.angles] + [rng.uniform(-options.init_scale, options.init_scale, circuit.depth)
                                for _ in range(options.starts - 1)]
    for x0 in inits:
        x, val = _local_minimize(circuit, cost, x0, options, traj, counters)
        if val < v_best:
            x_best, v_best = x, val
    current = circuit.with_angles(x_best)
    added = 0
    while options.adapt:
        state = apply(current)
        H = cost.operator
        grads = adapt_gradient(options.pool, state, H)
        if np.max(np.abs(grads)) >= options.gtol:
            new = [options.pool.candidates[int(np.argmax(np.abs(grads)))]]
            init = np.zeros(1)
        else:
            hess = adapt_hessian(options.pool, state, H)
            if hess.eigenvalues[0] >= -options.hessian_tol:
                break
            d = hess.eigenvectors[:, 0]
            pick = np.flatnonzero(np.abs(d) > options.weight_cutoff)
            new = [options.pool.candidates[i] for i in pick]
            trial = current.extended(new)
            base = np.concatenate([current.angles, np.zeros(len(pick))])
            dirn = np.concatenate([np.zeros(current.depth), d[pick]])
            y, _ = _descend_along(lambda z: cost_value(trial, cost, z), base, dirn, cost_value(trial, cost, base))
            init = d[pick] * 0.0 if y is None else y[current.depth:]
        if current.depth + len(new) > options.max_layers:
            raise IterationCap(f"adaptive circuit exceeds {options.max_layers} layers")
        current = current.extended(new, init)
        added += len(new)
        traj.append({"iter": len(traj), "theta": current.angles.tolist(), "cost": cost_value(current, cost),
                     "event": f"grow+{len(new)}"})
        x, val = _local_minimize(current, cost, current.angles, options, traj, counters)
        current = current.with_angles(x)
    return OptimizeResult(current, cost_value(current, cost), traj, added, counters["rescues"])


# --------------------------------------------------------------------------
# Hubbard-quench circuits
# --------------------------------------------------------------------------


def quench_generators(rungs: int) -> tuple:
    """(leg hopping, rung hopping, on-site interaction) resource generators."""
    return (ladder_hopping_x(rungs), ladder_hopping_y(rungs), ladder_onsite(rungs))


def quench_schedule(rungs: int, depth: int) -> list:
    """Generators of a depth-d circuit: each depth unit applies all three resource generators."""
    return list(quench_generators(rungs)) * depth


def truncated_gibbs(H: OperatorSum, T: float, sector: Sector) -> MixedState:
    """Thermal reference keeping p > 1e-8 up to cumulative mass 1 - 1e-6."""
    from .exact import gibbs_state

    return gibbs_state(H, T, sector, min_weight=GIBBS_MIN_WEIGHT, mass=GIBBS_MASS)


# --------------------------------------------------------------------------
# shot noise
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShotModel:
    shots_per_eval: int
    rng_seed: int = 0
    grouping: str = "per-term"

    def __post_init__(self):
        if self.shots_per_eval < 1:
            raise ValueError("shots_per_eval must be at least 1")
        if self.grouping != "per-term":
            raise ValueError("only per-term grouping is supported")

    def generator(self, eval_index: int) -> np.random.Generator:
        """Counter-based stream for one evaluation, independent of call order."""
        return np.random.Generator(np.random.Philox(key=[int(self.rng_seed) & (2**64 - 1), int(eval_index)]))


def measurement_terms(op: OperatorSum) -> list:
    """Split a Hermitian operator into Hermitian pieces measured separately.

    Each term is paired with its adjoint; self-adjoint terms stand alone.
    The identity part is returned as a constant piece with no shots.
    """
    op = op.simplify()
    _check_hermitian(op, "measured operator")
    by_key = {t.key(): t for t in op.terms}
    seen = set()
    out = []
    for t in op.terms:
        k = t.key()
        if k in seen:
            continue
        adj = t.adjoint()
        ka = adj.key()
        seen.update({k, ka})
        parts = (t,) if ka == k else (t, by_key[ka]) if ka in by_key else (t,)
        out.append(OperatorSum(op.kind, op.n_sites, parts))
    return out


def _is_identity(op: OperatorSum) -> bool:
    if op.kind == "spin":
        return all(set(t.letters) <= {"I"} for t in op.terms)
    return all(len(t.factors) == 0 for t in op.terms)


@functools.lru_cache(maxsize=1024)
def _spectral_projectors(op: OperatorSum, sector: Sector):
    """Distinct eigenvalues and their spectral projectors as polynomials in op."""
    mat = build_matrix(op, sector)
    ev = np.linalg.eigvalsh(mat.toarray())
    levels = []
    for e in np.sort(ev):
        if not levels or e - levels[-1] > 1e-8 * max(1.0, abs(e)):
            levels.append(e)
    return np.array(levels), mat


def _outcome_distribution(op: OperatorSum, sector: Sector, vecs, w) -> tuple:
    levels, mat = _spectral_projectors(op, sector)
    probs = np.empty(len(levels))
    for k, lk in enumerate(levels):
        x = vecs
        for j, lj in enumerate(levels):
            if j != k:
                x = (mat @ x - lj * x) / (lk - lj)
        probs[k] = np.real(np.einsum("a,ia,ia->", w, vecs.conj(), x))
    probs = np.clip(probs, 0.0, None)
    return levels, probs / probs.sum()


def sampled_expectation(state, observables: Sequence[OperatorSum], shots: int, rng: np.random.Generator):
    """Sum of single-observable estimates, each from ``shots`` projective measurements.

    Returns (estimate, stderr). A mixed state is sampled by first drawing the
    eigenvector index from its weights for every shot.
    """
    vecs, w = state_columns(state)
    est, var = 0.0, 0.0
    for ob in observables:
        if _is_identity(ob):
            est += float(np.real(sum(t.coefficient for t in ob.terms)))
            continue
        levels, probs = _outcome_distribution(ob, state.sector, vecs, w)
        counts = rng.multinomial(shots, probs)
        mean = float(counts @ levels) / shots
        sv = float(counts @ (levels - mean) ** 2) / (shots - 1) if shots > 1 else 0.0
        est += mean
        var += sv / shots
    return est, float(np.sqrt(var))


def _cost_observables(cost: CostSpec, observables=None) -> list:
    if observables is not None:
        return list(observables)
    return measurement_terms(cost.operator)


def sampled_cost(circuit: VariationalCircuit, cost: CostSpec, shot_model: ShotModel, eval_index: int = 0,
                 observables=None, angles=None):
    """Shot-noise estimate of the cost and its standard error.

    ``observables`` overrides the default per-term split of the cost
    operator; they must sum to it. Each observable receives
    ``shot_model.shots_per_eval`` shots.
    """
    state = apply(circuit, angles)
    rng = shot_model.generator(eval_index)
    return sampled_expectation(state, _cost_observables(cost, observables), shot_model.shots_per_eval, rng)


@dataclass
class PatternSearchResult:
    circuit: VariationalCircuit
    trajectory: list
    shots_used: int
    estimate: float
    stderr: float


def pattern_search(circuit: VariationalCircuit, cost: CostSpec, shot_model: ShotModel, budget: int,
                   step: float = 0.3, shrink: float = 0.5, margin: float = 1.0, min_step: float = 1e-3,
                   observables=None) -> PatternSearchResult:
    """Coordinate polling under a total shot budget.

    Each poll moves one angle by +-step and estimates the cost with fresh
    shots. A move is accepted when its estimate beats the incumbent by more
    than ``margin`` pooled standard errors. The incumbent's estimate is the
    running mean of all its evaluations. After a sweep without acceptance
    the step shrinks. Trajectory records hold the shots used, the estimate,
    and the exact cost for diagnostics.
    """
    obs = _cost_observables(cost, observables)
    per_eval = shot_model.shots_per_eval * sum(0 if _is_identity(o) else 1 for o in obs)
    if budget < per_eval:
        est = cost_value(circuit, cost)
        return PatternSearchResult(circuit, [], 0, est, float("nan"))
    counter = {"evals": 0, "shots": 0}

    def measure(x):
        e, s = sampled_cost(circuit, cost, shot_model, counter["evals"], obs, x)
        counter["evals"] += 1
        counter["shots"] += per_eval
        return e, s

    x = circuit.angles
    n_inc = 1
    inc, inc_se = measure(x)
    traj = [{"iter": 0, "theta": x.tolist(), "cost": inc, "exact_cost": cost_value(circuit, cost, x),
             "shots_cumulative": counter["shots"]}]
    while counter["shots"] + per_eval <= budget and step >= min_step:
        moved = False
        for i in range(len(x)):
            for sign in (1.0, -1.0):
                if counter["shots"] + per_eval > budget:
                    break
                y = x.copy()
                y[i] += sign * step
                e, s = measure(y)
                if e < inc - margin * np.hypot(s, inc_se):
                    x, inc, inc_se, n_inc, moved = y, e, s, 1, True
                    traj.append({"iter": len(traj), "theta": x.tolist(), "cost": inc,
                                 "exact_cost": cost_value(circuit, cost, x), "shots_cumulative": counter["shots"]})
                    break
        if not moved:
            step *= shrink
            if counter["shots"] + per_eval <= budget:
                e, s = measure(x)
                # pool with earlier evaluations of the same point
                inc = (n_inc * inc + e) / (n_inc + 1)
                inc_se = np.sqrt((n_inc**2 * inc_se**2 + s**2)) / (n_inc + 1)
                n_inc += 1
    return PatternSearchResult(circuit.with_angles(x), traj, counter["shots"], inc, float(inc_se))
