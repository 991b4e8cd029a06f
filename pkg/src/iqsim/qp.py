"""Convex quadratic programs by a primal active-set method.

    minimize   1/2 x^T Q x + q^T x
    subject to A_eq x = b_eq,  A_in x >= b_in

Q must be symmetric positive semidefinite. Singular reduced Hessians are
handled with minimum-norm steps; a zero-curvature descent direction that
no constraint blocks means the objective is unbounded below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import InfeasibleConstraints, IterationCap, NoSolution

FEAS_TOL = 1e-9


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    multipliers_eq: np.ndarray
    multipliers_in: np.ndarray
    active: list
    iterations: int
    kkt: dict


def _as2d(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return A.reshape(-1, n)


def feasible_point(n, A_eq, b_eq, A_in, b_in) -> np.ndarray:
    """Any point satisfying the constraints (phase one by linear programming)."""
    if len(b_eq) == 0 and len(b_in) == 0:
        return np.zeros(n)
    res = optimize.linprog(
        np.zeros(n),
        A_ub=-A_in if len(b_in) else None,
        b_ub=-b_in if len(b_in) else None,
        A_eq=A_eq if len(b_eq) else None,
        b_eq=b_eq if len(b_eq) else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 2:
        raise InfeasibleConstraints("no point satisfies the constraints")
    if res.status != 0:
        raise InfeasibleConstraints(f"phase-one solve failed: {res.message}")
    return np.asarray(res.x)


def _independent_rows(rows: list, A: np.ndarray, tol: float = 1e-10) -> list:
    keep: list = []
    for r in rows:
        trial = keep + [r]
        if np.linalg.matrix_rank(A[trial], tol=tol) == len(trial):
            keep = trial
    return keep


def solve_qp(Q, q, A_eq=None, b_eq=None, A_in=None, b_in=None, x0=None,
             max_iter: int = 500, tol: float = 1e-10) -> QPResult:
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    q = np.asarray(q, dtype=float)
    n = len(q)
    A_eq = _as2d(A_eq, n)
    A_in = _as2d(A_in, n)
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    b_in = np.zeros(0) if b_in is None else np.atleast_1d(np.asarray(b_in, dtype=float))
    A = np.vstack([A_eq, A_in])
    b = np.concatenate([b_eq, b_in])
    m_eq = len(b_eq)

    x = feasible_point(n, A_eq, b_eq, A_in, b_in) if x0 is None else np.asarray(x0, dtype=float)
    if len(b_eq) and np.abs(A_eq @ x - b_eq).max() > 1e-7:
        raise InfeasibleConstraints("equality constraints inconsistent")
    tight = [m_eq + i for i in range(len(b_in)) if A_in[i] @ x - b_in[i] <= FEAS_TOL * (1 + abs(b_in[i]))]
    work = _independent_rows(list(range(m_eq)) + tight, A)

    scale = max(1.0, np.abs(Q).max(), np.abs(q).max())
    lam = np.zeros(len(b))
    for it in range(1, max_iter + 1):
        grad = Q @ x + q
        Aw = A[work] if work else np.zeros((0, n))
        Z = linalg.null_space(Aw) if work else np.eye(n)
        p = np.zeros(n)
        unbounded_dir = False
        if Z.shape[1]:
            Hr = Z.T @ Q @ Z
            gr = Z.T @ grad
            w, V = np.linalg.eigh(0.5 * (Hr + Hr.T))
            cut = 1e-12 * max(scale, np.abs(w).max() if len(w) else 0.0)
            pos = w > cut
            gproj = V.T @ gr
            flat = ~pos
            if np.any(flat) and np.linalg.norm(gproj[flat]) > tol * scale:
                # zero curvature with a descending slope
                d = -(V[:, flat] @ gproj[flat])
                p = Z @ d
                unbounded_dir = True
            else:
                p = -Z @ (V[:, pos] @ (gproj[pos] / w[pos]))
        if not unbounded_dir and np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(x)):
            # stationary on the working face: check multipliers
            if work:
                mult, *_ = np.linalg.lstsq(Aw.T, grad, rcond=None)
            else:
                mult = np.zeros(0)
            lam = np.zeros(len(b))
            lam[work] = mult
            ineq = [(k, lam[k]) for k in work if k >= m_eq]
            if not ineq or min(v for _, v in ineq) >= -1e-10 * scale:
                return _finish(Q, q, x, lam, work, it, A_eq, b_eq, A_in, b_in, m_eq)
            drop = min(ineq, key=lambda t: t[1])[0]
            work = [k for k in work if k != drop]
            continue
        # ratio test over inactive inequalities
        step, block = (np.inf if unbounded_dir else 1.0), None
        for i in range(len(b_in)):
            k = m_eq + i
            if k in work:
                continue
            ap = A_in[i] @ p
            if ap < -1e-14:
                s = (b_in[i] - A_in[i] @ x) / ap
                if s < step:
                    step, block = max(s, 0.0), k
        if not np.isfinite(step):
            raise NoSolution("quadratic program is unbounded below")
        x = x + step * p
        if block is not None:
            work = work + [block]
    raise IterationCap(f"active-set iterations exceeded {max_iter}")


def _finish(Q, q, x, lam, work, it, A_eq, b_eq, A_in, b_in, m_eq) -> QPResult:
    grad = Q @ x + q
    A = np.vstack([A_eq, A_in])
    stationarity = np.linalg.norm(grad - A.T @ lam) if len(lam) else np.linalg.norm(grad)
    lam_in = lam[m_eq:]
    slack = A_in @ x - b_in if len(b_in) else np.zeros(0)
    kkt = {
        "stationarity": float(stationarity),
        "primal_eq": float(np.abs(A_eq @ x - b_eq).max()) if len(b_eq) else 0.0,
        "primal_in": float(max(0.0, -slack.min())) if len(slack) else 0.0,
        "dual": float(max(0.0, -lam_in.min())) if len(lam_in) else 0.0,
        "complementarity": float(np.abs(lam_in * slack).max()) if len(slack) else 0.0,
    }
    obj = float(0.5 * x @ Q @ x + q @ x)
    return QPResult(x, obj, lam[:m_eq], lam_in, list(work), it, kkt)
