"""Desk-scale experiment runners.

Every runner takes a validated parameter dict plus a top-level seed and
returns an ``ExperimentOutput``: a JSON-ready summary and named tables that
the command-line front end writes as CSV. Randomness is drawn from named
sub-streams of the seed so results do not depend on evaluation order or on
how grid cells are spread over worker processes.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import cphl as cp
from . import shl
from . import staircase as sc
from . import varcirc as vc
from .exact import (
    absorption_peaks,
    diagonalize,
    fidelity,
    ground_state,
    kubo_poles,
    structure_probes,
    adiabatic_unprepare,
)
from .hamlearn import LADDER_LABELS, gibbs_learn, ladder_problem, ladder_terms, learn
from .opalg import (
    OperatorSum,
    Sector,
    expectation,
    dwave_correlator,
    dwave_sum,
    hubbard_ladder,
    pauli,
)


@dataclass
class Table:
    columns: tuple
    rows: list = field(default_factory=list)


@dataclass
class ExperimentOutput:
    summary: dict
    tables: dict = field(default_factory=dict)


def substream(seed: int, name: str) -> int:
    """Independent 63-bit seed derived from the top-level seed and a stream name."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# Hubbard ladder studies
# --------------------------------------------------------------------------


class LadderSetup:
    """Reference Hamiltonian, sector, ground state and d-wave cost for one ladder."""

    def __init__(self, p: dict):
        self.rungs = int(p["rungs"])
        self.sector = Sector.fermion(2 * self.rungs, int(p["n_up"]), int(p["n_down"]))
        self.H0 = hubbard_ladder(self.rungs, p["t_x"], p["t_y"], p["U"])
        self.ground = ground_state(self.H0, self.sector)
        self.bonus = dwave_sum(self.rungs)

    def cost(self, lam: float) -> vc.CostSpec:
        return vc.CostSpec(self.H0, self.bonus, float(lam))

    def circuit(self, depth: int, reference=None) -> vc.VariationalCircuit:
        ref = self.ground.state if reference is None else reference
        return vc.VariationalCircuit.from_generators(vc.quench_schedule(self.rungs, depth), ref)

    def correlators(self, state) -> list:
        return [float(np.real(expectation(state, dwave_correlator(0, r, self.rungs)))) for r in range(self.rungs)]

    def dwave(self, state) -> float:
        return float(np.real(expectation(state, self.bonus)))


LADDER_DEFAULTS = {"rungs": 4, "n_up": 2, "n_down": 2, "t_x": -1.0, "t_y": -1.0, "U": 4.0}


def _optimize_and_learn(setup: LadderSetup, lam: float, depth: int, starts: int, seed: int, repulsive: bool):
    circuit = setup.circuit(depth)
    opts = vc.OptimizeOptions(starts=starts, seed=seed)
    res = vc.optimize(circuit, setup.cost(lam), opts)
    state = vc.apply(res.circuit)
    problem = ladder_problem(setup.rungs, repulsive)
    fit = learn(state, problem)
    H_learned = problem.hamiltonian(fit.coefficients)
    gs = ground_state(H_learned, setup.sector)
    return res, state, fit, H_learned, gs, fidelity(state, gs.state)


def _constraint_margin(fit) -> float:
    """Smallest coupling among the sign-constrained density terms."""
    vals = [c for c, l in zip(fit.coefficients, LADDER_LABELS) if l.startswith(("U", "V"))]
    return float(min(vals))


def run_dwave(p: dict, seed: int) -> ExperimentOutput:
    setup = LadderSetup(p)
    res, state, fit, H_learned, gs, fid = _optimize_and_learn(
        setup, p["lambda"], p["depth"], p["starts"], substream(seed, "dwave-starts"), p["repulsive"])
    base = setup.correlators(setup.ground.state)
    opt = setup.correlators(state)
    learned = setup.correlators(gs.state)
    table = Table(("r", "reference", "optimized", "learned_ground"),
                  [(r, base[r], opt[r], learned[r]) for r in range(setup.rungs)])
    summary = {
        "cost": res.cost,
        "angles": [float(a) for a in res.circuit.angles],
        "dwave_sum_reference": setup.dwave(setup.ground.state),
        "dwave_sum_optimized": setup.dwave(state),
        "energy_reference": setup.ground.energy,
        "learned": fit.to_dict(),
        "learned_ground_fidelity": fid,
        "learned_gap": gs.gap,
        "constraint_margin": _constraint_margin(fit) if p["repulsive"] else None,
        "saddle_rescues": res.rescues,
    }
    return ExperimentOutput(summary, {"correlator": table})


def _map_cell(args):
    p, lam, depth, seed = args
    setup = LadderSetup(p)
    res, state, fit, _, gs, fid = _optimize_and_learn(setup, lam, depth, p["starts"], seed, p["repulsive"])
    return (float(lam), int(depth), fit.variance, fid, setup.dwave(state), res.cost)


def run_learning_map(p: dict, seed: int) -> ExperimentOutput:
    cells = [(p, float(lam), int(d), substream(seed, f"cell:{lam}:{d}")) for lam in p["lambdas"] for d in p["depths"]]
    rows = _map(_map_cell, cells, p["workers"])
    table = Table(("lambda", "depth", "variance", "fidelity", "dwave_sum", "cost"), rows)
    good = [r for r in rows if r[3] > p["good_fidelity"]]
    summary = {"cells": len(rows), "good_cells": len(good), "good_fidelity": p["good_fidelity"]}
    return ExperimentOutput(summary, {"learning_map": table})


def run_finite_t(p: dict, seed: int) -> ExperimentOutput:
    setup = LadderSetup(p)
    rho0 = vc.truncated_gibbs(setup.H0, p["temperature"], setup.sector)
    cost = setup.cost(p["lambda"])
    rows = [(0, float(np.real(expectation(rho0, cost.operator))), setup.dwave(rho0), rho0.purity)]
    final = rho0
    for d in p["depths"]:
        circuit = setup.circuit(int(d), rho0)
        res = vc.optimize(circuit, cost, vc.OptimizeOptions(starts=p["starts"], seed=substream(seed, f"finite-t:{d}")))
        final = vc.apply(res.circuit)
        rows.append((int(d), res.cost, setup.dwave(final), final.purity))
    summary = {
        "temperature": p["temperature"],
        "retained_states": len(rho0.probabilities),
        "purity_initial": rho0.purity,
        "purity_final": final.purity,
        "dwave_sum_initial": rows[0][2],
        "dwave_sum_final": rows[-1][2],
    }
    if p["gibbs_fit"]:
        fit = gibbs_learn(final, ladder_terms(setup.rungs), beta=1.0 / p["temperature"])
        summary["gibbs_fit"] = {
            "labels": list(LADDER_LABELS),
            "coefficients": [float(c) for c in fit.coefficients],
            "distance": fit.distance,
        }
    return ExperimentOutput(summary, {"finite_t": Table(("depth", "cost", "dwave_sum", "purity"), rows)})


def budget_observables(rungs: int) -> list:
    """Negated correlators from rung 0; their sum is the cost being minimized."""
    return [dwave_correlator(0, r, rungs) * (-1.0) for r in range(rungs)]


def _budget_run(args):
    p, run, seed = args
    setup = LadderSetup(p)
    cost = vc.CostSpec(OperatorSum.zero("fermion", 2 * setup.rungs), setup.bonus, 1.0)
    circuit = setup.circuit(p["depth"])
    model = vc.ShotModel(p["shots_per_eval"], seed)
    r = vc.pattern_search(circuit, cost, model, p["budget"], step=p["step"], observables=budget_observables(setup.rungs))
    final = -vc.cost_value(r.circuit, cost)
    traj = [(run, t["shots_cumulative"], -t["exact_cost"]) for t in r.trajectory]
    return run, final, -r.estimate, r.shots_used, traj


def run_noise_budget(p: dict, seed: int) -> ExperimentOutput:
    setup = LadderSetup(p)
    baseline = setup.dwave(setup.ground.state)
    jobs = [(p, k, substream(seed, f"shots:{k}")) for k in range(p["runs"])]
    out = _map(_budget_run, jobs, p["workers"])
    finals = np.array([o[1] for o in out])
    if len(finals) > 1 and np.std(finals) > 0:
        pval = float(stats.ttest_1samp(finals, baseline, alternative="greater").pvalue)
    else:
        pval = float("nan")
    runs = Table(("run", "baseline", "final_exact", "final_estimate", "shots_used"),
                 [(o[0], baseline, o[1], o[2], o[3]) for o in out])
    traj = Table(("run", "shots_cumulative", "dwave_sum"), [row for o in out for row in o[4]])
    summary = {
        "baseline": baseline,
        "mean_final": float(finals.mean()),
        "std_final": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
        "p_value": pval,
        "runs": int(p["runs"]),
        "shots_per_observable": int(p["shots_per_eval"]),
        "observables": setup.rungs,
    }
    return ExperimentOutput(summary, {"runs": runs, "trajectory": traj})


def run_unprepare(p: dict, seed: int) -> ExperimentOutput:
    setup = LadderSetup(p)
    res, state, fit, H_learned, gs, fid = _optimize_and_learn(
        setup, p["lambda"], p["depth"], p["starts"], substream(seed, "unprepare-starts"), p["repulsive"])
    rows = []
    for T in p["total_times"]:
        steps = max(1, int(np.ceil(T * p["steps_per_unit"])))
        _, prob = adiabatic_unprepare(H_learned, setup.H0, state, float(T), steps, target=setup.ground.state)
        rows.append((float(T), steps, prob))
    summary = {
        "learned": fit.to_dict(),
        "learned_ground_fidelity": fid,
        "return_probability": {str(r[0]): r[2] for r in rows},
    }
    return ExperimentOutput(summary, {"unprepare": Table(("total_time", "steps", "return_probability"), rows)})


# --------------------------------------------------------------------------
# continuous-phase learning and staircase circuits
# --------------------------------------------------------------------------


def run_cphl(p: dict, seed: int) -> ExperimentOutput:
    n = int(p["n_sites"])
    cfg = cp.CPHLConfig(
        n_grid=p["n_grid"], m_max=p["m_max"], lambda0=p["lambda0"], beta_decay=p["beta_decay"],
        delta0=p["delta0"], kappa=p["kappa"], coefficient_cap=p["coefficient_cap"],
        max_iters=p["max_iters"], tol=p["tol"], weight_base=p["weight_base"],
    )
    grid = cfg.grid_points()
    bare = cp.bare_family(n, m_max=cfg.m_max)
    bare_order = cp.string_order_curve(bare, grid)
    result = cp.cphl_run(cfg, n_sites=n)
    rows = [(float(g), float(o), 0) for g, o in zip(grid, bare_order)]
    for entry in result.log:
        rows += [(float(g), float(o), entry["iter"] + 1) for g, o in zip(grid, entry["string_order"])]
    final_order = cp.string_order_curve(result.family, grid)
    relevance = result.family.relevance()
    summary = {
        "boundary_bare": cp.phase_boundary(grid, bare_order),
        "boundary_final": cp.phase_boundary(grid, final_order),
        "converged": result.converged,
        "iterations": len(result.log),
        "relevance": relevance,
        "top_terms": sorted(relevance, key=relevance.get, reverse=True)[:4],
        "family": result.family.to_dict(),
        "log": [{k: v for k, v in e.items() if k != "string_order"} for e in result.log],
    }
    return ExperimentOutput(summary, {"string_order": Table(("g", "string_order", "iteration"), rows)})


def run_staircase_bench(p: dict, seed: int) -> ExperimentOutput:
    rng = np.random.default_rng(substream(seed, "staircase-gate"))
    gate = sc.TwoQubitGate(tuple(rng.uniform(-np.pi, np.pi, 15)))
    transfer = sc.transfer_matrices(gate)
    rows = []
    for n in p["sizes"]:
        mpo = sc.cim_mpo(p["g"], int(n))
        circuit = sc.StaircaseCircuit(gate, int(n))
        best = np.inf
        for _ in range(p["repeats"]):
            t0 = time.perf_counter()
            energy = sc.mpo_expectation(circuit, mpo, transfer)
            best = min(best, time.perf_counter() - t0)
        rows.append((int(n), best, float(energy)))
    summary = {"gate": list(gate.thetas), "g": p["g"]}
    if p["fidelity_sites"]:
        nf = int(p["fidelity_sites"])
        target = ground_state(cp.cim_hamiltonian(nf, p["g"]), Sector.spin(nf)).state
        fit = sc.fidelity_optimize(target, starts=p["fidelity_starts"], seed=substream(seed, "staircase-fidelity"))
        summary["fidelity"] = {"n_sites": nf, "fidelity": fit.fidelity, "gate": list(fit.gate.thetas)}
    return ExperimentOutput(summary, {"timing": Table(("n_sites", "seconds", "energy"), rows)})


# --------------------------------------------------------------------------
# spectral learning
# --------------------------------------------------------------------------


def ring_model(Bz: float, J_H: float) -> shl.SpectralModel:
    """Three-spin ring probed by X1 Y2 Z3; the single free parameter is the ring exchange."""
    V = pauli(3, {0: "X", 1: "Y", 2: "Z"})
    ch = shl.Channel(V, V, shl.three_spin_ansatz(), "xyz")
    return shl.SpectralModel(lambda q: shl.three_spin_model(Bz, J_H, q[0]), (ch,), Sector.spin(3))


def chain_model(kind: str, n_sites: int) -> shl.SpectralModel:
    """Periodic Heisenberg chain with one channel per lattice momentum; parameters (Bz, J)."""
    if kind == "FM":
        probe, level, ground = "+-", "1p", None
    else:
        probe, level, ground = "sym", "1p2p3p", Sector.spin(n_sites, 0)
    chans = []
    for k in shl.momenta(n_sites):
        V, O = structure_probes(n_sites, k, probe)
        chans.append(shl.Channel(V, O, shl.momentum_ansatz(kind, n_sites, k, level), f"k={k:.6f}"))
    return shl.SpectralModel(lambda q: shl.heisenberg_chain(n_sites, q[0], q[1]), tuple(chans),
                             Sector.spin(n_sites), ground)


def _spectra(model, params, targets, grid, delta, labels):
    learned = [absorption_peaks(r) for r in shl.model_response(model, params)]
    tgt, fit = Table(("k", "omega", "re", "im")), Table(("k", "omega", "re", "im"))
    for lab, t, l in zip(labels, targets, learned):
        for table, poles in ((tgt, t), (fit, l)):
            vals = poles.evaluate(grid, delta)
            table.rows += [(lab, float(w), float(v.real), float(v.imag)) for w, v in zip(grid, vals)]
    return tgt, fit


def _shl_options(p: dict, scan=None) -> shl.SHLOptions:
    return shl.SHLOptions(variant=p["variant"], delta=p["delta"], delta_schedule=tuple(p["delta_schedule"]) or None,
                          scan=scan, max_iter=p["max_iter"])


def _shl_summary(result, truth, labels) -> dict:
    return {
        "labels": labels,
        "truth": [float(t) for t in truth],
        "learned": [float(x) for x in result.params],
        "error": [float(abs(a - b)) for a, b in zip(result.params, truth)],
        "cost": result.cost,
        "converged": result.converged,
        "evaluations": len(result.trajectory),
    }


def run_shl_ring(p: dict, seed: int) -> ExperimentOutput:
    model = ring_model(p["B_z"], p["J_H"])
    truth = [p["J_RE"]]
    targets = shl.target_peaks(model, truth)
    scan = [np.arange(0.0, p["scan_max"] + 1e-9, p["scan_step"])] if p["scan_step"] > 0 else None
    result = shl.shl_learn(model, targets, [p["x0"]], _shl_options(p, scan))
    grid = np.linspace(p["omega_min"], p["omega_max"], p["points"])
    tgt, fit = _spectra(model, result.params, targets, grid, p["delta"], [0.0])
    summary = _shl_summary(result, truth, ["J_RE"])
    summary["target_peaks"] = targets[0].to_dict()
    return ExperimentOutput(summary, {"spectrum_target": tgt, "spectrum_learned": fit})


def _run_chain(kind: str, p: dict) -> ExperimentOutput:
    n = int(p["n_sites"])
    model = chain_model(kind, n)
    truth = [p["B_z"], p["J"]]
    targets = shl.target_peaks(model, truth)
    result = shl.shl_learn(model, targets, list(p["x0"]), _shl_options(p))
    ks = shl.momenta(n)
    grid = np.linspace(p["omega_min"], p["omega_max"], p["points"])
    tgt, fit = _spectra(model, result.params, targets, grid, p["delta"], ks)
    peaks = Table(("k", "omega", "weight"))
    for k, t in zip(ks, targets):
        peaks.rows += [(float(k), float(w), float(abs(r))) for w, r in zip(t.omegas, t.residues)]
    summary = _shl_summary(result, truth, ["B_z", "J"])
    return ExperimentOutput(summary, {"spectrum_target": tgt, "spectrum_learned": fit, "peaks": peaks})


def run_shl_fm(p: dict, seed: int) -> ExperimentOutput:
    out = _run_chain("FM", p)
    rows = out.tables["peaks"].rows
    out.tables["peaks"] = Table(("k", "omega", "weight", "magnon_energy"),
                                [r + (shl.magnon_energy(r[0], p["B_z"], p["J"]),) for r in rows])
    return out


def continuum_check(rows, J: float, n_sites: int, min_weight: float = 0.01, margin: float = 0.15) -> dict:
    """Compare (k, omega, weight) peaks with the two-spinon edges.

    Peaks holding at least ``min_weight`` of their channel's weight must sit
    inside [lower - m, upper + m], m = ``margin`` times the bandwidth. The
    weight found outside those windows is reported either way.
    """
    bandwidth = max(shl.spinon_bounds(q, J)[1] for q in shl.momenta(n_sites))
    pad = margin * bandwidth
    by_k: dict = {}
    for k, w, r in rows:
        by_k.setdefault(k, []).append((w, r))
    violations, outside = [], 0.0
    for k, peaks in by_k.items():
        total = sum(r for _, r in peaks)
        lo, hi = shl.spinon_bounds(k, J)
        for w, r in peaks:
            if lo - pad <= w <= hi + pad:
                continue
            frac = r / total if total > 0 else 0.0
            outside = max(outside, frac)
            if frac >= min_weight:
                violations.append({"k": k, "omega": w, "weight_fraction": frac})
    return {"bandwidth": bandwidth, "margin": pad, "violations": violations,
            "max_outside_weight_fraction": outside, "min_weight": min_weight}


def run_shl_afm(p: dict, seed: int) -> ExperimentOutput:
    out = _run_chain("AFM", p)
    rows = out.tables["peaks"].rows
    out.summary["continuum"] = continuum_check([(r[0], r[1], r[2]) for r in rows], p["J"], int(p["n_sites"]))
    out.tables["peaks"] = Table(("k", "omega", "weight", "lower", "upper"),
                                [r + shl.spinon_bounds(r[0], p["J"]) for r in rows])
    return out


def run_kubo(p: dict, seed: int) -> ExperimentOutput:
    H = shl.two_spin_model(p["B_z"], p["J_I"], p["J_H"])
    sec = Sector.spin(2)
    psi = ground_state(H, sec).state
    grid = np.linspace(p["omega_min"], p["omega_max"], p["points"])
    X, Y = shl.two_spin_field("X"), shl.two_spin_field("Y")
    eig = diagonalize(H, sec)
    xx = kubo_poles(H, psi, X, X, eig=eig).evaluate(grid, p["delta"])
    xy = kubo_poles(H, psi, Y, X, eig=eig).evaluate(grid, p["delta"])
    var = shl.variational_poles(shl.tdvp_matrices(shl.ResponseProblem(H, psi, X, X, shl.two_spin_ansatz())))
    xx_var = var.evaluate(grid, p["delta"])
    axx, axy = shl.two_spin_analytic(p["B_z"], p["J_I"], grid, p["delta"])
    summary = {
        "max_abs_error_analytic_xx": float(np.abs(xx - axx).max()),
        "max_abs_error_analytic_xy": float(np.abs(xy - axy).max()),
        "max_abs_error_variational_xx": float(np.abs(xx - xx_var).max()),
        "pole": 2 * (p["B_z"] + p["J_I"]),
    }
    return ExperimentOutput(summary, {
        "chi_xx": Table(("omega", "re", "im"), [(float(w), float(v.real), float(v.imag)) for w, v in zip(grid, xx)]),
        "chi_xy": Table(("omega", "re", "im"), [(float(w), float(v.real), float(v.imag)) for w, v in zip(grid, xy)]),
    })


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

_SHL_COMMON = {"variant": "l2", "delta": 0.05, "max_iter": 200, "omega_min": 0.0, "points": 1000}

DEFAULTS = {
    "dwave": {**LADDER_DEFAULTS, "lambda": 2.0, "depth": 5, "starts": 4, "repulsive": True},
    "learning-map": {**LADDER_DEFAULTS, "lambdas": [0.5, 1.0, 1.5, 2.0], "depths": [1, 2, 3, 4, 5],
                     "starts": 1, "repulsive": True, "good_fidelity": 0.9, "workers": 1},
    "finite-t": {**LADDER_DEFAULTS, "temperature": 0.32, "lambda": 2.0, "depths": [1, 2, 3], "starts": 1,
                 "gibbs_fit": False},
    "noise-budget": {**LADDER_DEFAULTS, "depth": 5, "shots_per_eval": 15, "budget": 30000, "runs": 50,
                     "step": 0.3, "workers": 1},
    "unprepare": {**LADDER_DEFAULTS, "lambda": 1.0, "depth": 3, "starts": 1, "repulsive": True,
                  "total_times": [1.0, 2.0, 5.0, 10.0, 20.0], "steps_per_unit": 20},
    "cphl": {"n_sites": 8, "n_grid": 21, "m_max": 6, "lambda0": 1.0, "beta_decay": 0.5, "delta0": 0.5,
             "kappa": 1e-3, "coefficient_cap": 2.0, "max_iters": 50, "tol": 1e-4, "weight_base": 0.3},
    "staircase-bench": {"sizes": [10, 100, 1000, 10000], "g": -1.0, "repeats": 3, "fidelity_sites": 5,
                        "fidelity_starts": 32},
    "shl-ring": {**_SHL_COMMON, "B_z": 1.0, "J_H": 0.3, "J_RE": 0.5, "x0": 0.0, "scan_max": 2.0,
                 "scan_step": 0.3, "delta_schedule": [1.0, 0.3, 0.1], "omega_max": 10.0},
    "shl-fm": {**_SHL_COMMON, "n_sites": 10, "B_z": 1.0, "J": 1.5, "x0": [0.5, 1.0],
               "delta_schedule": [1.0, 0.3], "omega_max": 16.0},
    "shl-afm": {**_SHL_COMMON, "n_sites": 8, "B_z": 0.0, "J": -1.5, "x0": [0.3, -1.0],
                "delta_schedule": [1.0, 0.3], "omega_max": 25.0},
    "kubo": {"B_z": 1.0, "J_I": 0.5, "J_H": 0.3, "omega_min": -6.0, "omega_max": 6.0, "points": 2000,
             "delta": 0.05},
}

RUNNERS = {
    "dwave": run_dwave,
    "learning-map": run_learning_map,
    "finite-t": run_finite_t,
    "noise-budget": run_noise_budget,
    "unprepare": run_unprepare,
    "cphl": run_cphl,
    "staircase-bench": run_staircase_bench,
    "shl-ring": run_shl_ring,
    "shl-fm": run_shl_fm,
    "shl-afm": run_shl_afm,
    "kubo": run_kubo,
}
