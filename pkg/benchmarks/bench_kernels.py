"""Time the compiled kernels against their numpy fallbacks on realistic inputs.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--output bench.csv]

Writes one CSV row per (kernel, size, backend) with the best-of-repeats wall
time and a speedup column on the compiled rows.
"""

import argparse
import csv
import sys
import time

import numpy as np

from iqsim import _core_py
from iqsim.opalg import (
    Sector,
    _apply_terms,
    _basis,
    _pauli_masks,
    hubbard_ladder,
    spin_sum,
)
from iqsim import staircase as sc

try:
    from iqsim import _core
except ImportError:
    _core = None


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def heisenberg(n):
    entries = []
    for j in range(n):
        for a in "XYZ":
            letters = ["I"] * n
            letters[j], letters[(j + 1) % n] = a, a
            entries.append(("".join(letters), 1.0))
    return spin_sum(n, entries)


def pauli_case(n):
    op = heisenberg(n)
    states = _basis(Sector.spin(n))
    xm, zm, ny = _pauli_masks(op.terms, n)
    coeffs = np.array([t.coefficient for t in op.terms], dtype=np.complex128)
    return lambda mod: mod.pauli_terms_apply(states, xm, zm, ny, coeffs)


def fermion_case(rungs):
    op = hubbard_ladder(rungs, -1.0, -1.0, 4.0)
    n = 2 * rungs
    sector = Sector.fermion(n, rungs, rungs)
    states = _basis(sector)
    modes, dags, offsets = [], [], [0]
    for t in op.terms:
        for site, spin, dagger in t.factors:
            modes.append(site + spin * n)
            dags.append(1 if dagger else 0)
        offsets.append(len(modes))
    args = (states, np.array(modes, dtype=np.int64), np.array(dags, dtype=np.int8),
            np.array(offsets, dtype=np.int64), np.array([t.coefficient for t in op.terms], dtype=np.complex128), 2 * n)
    return lambda mod: mod.fermion_terms_apply(*args)


def chain_case(n, rng):
    T = np.ascontiguousarray(sc.transfer_matrices(sc.TwoQubitGate(tuple(rng.uniform(-np.pi, np.pi, 15)))))
    letters = np.ascontiguousarray(rng.integers(0, 4, n - 1).astype(np.int8))
    seed = np.array([1.0, 0.0, 0.0, 1.0], dtype=np.complex128)
    return lambda mod: mod.pauli_chain(T, letters, seed)


def matvec_case(n, rng):
    mat = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
    mat = np.ascontiguousarray(mat / np.linalg.norm(mat, 2))
    seed = np.ascontiguousarray(rng.normal(size=12) + 0j)
    return lambda mod: mod.repeated_matvec(mat, seed, n)


def cases(rng):
    for n in (8, 10, 12, 14):
        yield "pauli_terms_apply", n, pauli_case(n)
    for rungs in (3, 4, 5):
        yield "fermion_terms_apply", 2 * rungs, fermion_case(rungs)
    for n in (100, 1000, 10_000, 100_000):
        yield "pauli_chain", n, chain_case(n, rng)
        yield "repeated_matvec", n, matvec_case(n, rng)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--output", help="CSV path (stdout when omitted)")
    args = parser.parse_args(argv)
    backends = [("python", _core_py)] + ([("cython", _core)] if _core is not None else [])
    if _core is None:
        print("compiled extension not built; timing the numpy fallback only", file=sys.stderr)
    rows = []
    for kernel, n, case in cases(np.random.default_rng(0)):
        times = {}
        for name, mod in backends:
            case(mod)  # warm-up
            times[name] = best_of(lambda: case(mod), args.repeats)
        for name, _ in backends:
            speedup = times["python"] / times[name] if name == "cython" else ""
            rows.append((kernel, n, name, times[name], speedup))
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("kernel", "n", "backend", "seconds", "speedup"))
    for kernel, n, name, t, s in rows:
        w.writerow((kernel, n, name, f"{t:.6g}", f"{s:.3g}" if s != "" else ""))
    if args.output:
        out.close()


if __name__ == "__main__":
    main()
