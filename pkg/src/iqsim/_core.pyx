# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for basis-state operator action and channel sweeps."""

import numpy as np
cimport numpy as cnp

from libc.stdint cimport uint64_t, int64_t, int8_t

cnp.import_array()

cdef extern from *:
    """
    static inline int iqs_popcount(unsigned long long x) { return __builtin_popcountll(x); }
    """
    int iqs_popcount(unsigned long long x) nogil


def pauli_terms_apply(const uint64_t[::1] states, const uint64_t[::1] xmasks,
                      const uint64_t[::1] zmasks, const int64_t[::1] nys,
                      const double complex[::1] coeffs):
    """Apply each Pauli string to each basis state.

    Returns ``(new_states, values)`` of shape ``(terms, states)``.
    """
    cdef Py_ssize_t nt = xmasks.shape[0]
    cdef Py_ssize_t nd = states.shape[0]
    out_states = np.empty((nt, nd), dtype=np.uint64)
    out_vals = np.empty((nt, nd), dtype=np.complex128)
    cdef uint64_t[:, ::1] os = out_states
    cdef double complex[:, ::1] ov = out_vals
    cdef Py_ssize_t t, d
    cdef uint64_t s, xm, zm
    cdef double complex base
    cdef double complex ipow[4]
    ipow[0] = 1.0
    ipow[1] = 1.0j
    ipow[2] = -1.0
    ipow[3] = -1.0j
    with nogil:
        for t in range(nt):
            xm = xmasks[t]
            zm = zmasks[t]
            base = coeffs[t] * ipow[nys[t] & 3]
            for d in range(nd):
                s = states[d]
                os[t, d] = s ^ xm
                if iqs_popcount(s & zm) & 1:
                    ov[t, d] = -base
                else:
                    ov[t, d] = base
    return out_states, out_vals


def fermion_terms_apply(const uint64_t[::1] states, const int64_t[::1] modes,
                        const int8_t[::1] daggers, const int64_t[::1] offsets,
                        const double complex[::1] coeffs, int n_modes):
    """Apply each fermionic product (rightmost factor first) to each state.

    Annihilated entries carry value 0 and their input state.
    """
    cdef Py_ssize_t nt = offsets.shape[0] - 1
    cdef Py_ssize_t nd = states.shape[0]
    out_states = np.empty((nt, nd), dtype=np.uint64)
    out_vals = np.empty((nt, nd), dtype=np.complex128)
    cdef uint64_t[:, ::1] os = out_states
    cdef double complex[:, ::1] ov = out_vals
    cdef Py_ssize_t t, d, f
    cdef uint64_t s, bit
    cdef int pos, sign, alive
    with nogil:
        for t in range(nt):
            for d in range(nd):
                s = states[d]
                sign = 1
                alive = 1
                f = offsets[t + 1] - 1
                while f >= offsets[t]:
                    pos = n_modes - 1 - <int>modes[f]
                    bit = (s >> pos) & 1
                    if (daggers[f] and bit) or ((not daggers[f]) and not bit):
                        alive = 0
                        break
                    if pos + 1 < 64 and iqs_popcount(s >> (pos + 1)) & 1:
                        sign = -sign
                    s = s ^ ((<uint64_t>1) << pos)
                    f -= 1
                if alive:
                    os[t, d] = s
                    ov[t, d] = coeffs[t] * sign
                else:
                    os[t, d] = states[d]
                    ov[t, d] = 0.0
    return out_states, out_vals


def pauli_chain(const double complex[:, :, ::1] transfer, const int8_t[::1] letters,
                const double complex[::1] seed):
    """Fold ``transfer[letters[j]]`` into ``seed`` for j from last to first."""
    cdef Py_ssize_t n = letters.shape[0]
    cdef Py_ssize_t j, a, b
    cdef double complex v[4]
    cdef double complex w[4]
    cdef double complex acc
    for a in range(4):
        v[a] = seed[a]
    with nogil:
        j = n - 1
        while j >= 0:
            for a in range(4):
                acc = 0
                for b in range(4):
                    acc = acc + transfer[letters[j], a, b] * v[b]
                w[a] = acc
            for a in range(4):
                v[a] = w[a]
            j -= 1
    out = np.empty(4, dtype=np.complex128)
    for a in range(4):
        out[a] = v[a]
    return out


def repeated_matvec(const double complex[:, ::1] mat, const double complex[::1] seed,
                    Py_ssize_t count):
    """Return ``mat**count @ seed`` by repeated application."""
    cdef Py_ssize_t m = mat.shape[0]
    cur = np.array(seed, dtype=np.complex128)
    nxt = np.empty(m, dtype=np.complex128)
    cdef double complex[::1] c = cur
    cdef double complex[::1] x = nxt
    cdef double complex[::1] tmp
    cdef Py_ssize_t it, a, b
    cdef double complex acc
    with nogil:
        for it in range(count):
            for a in range(m):
                acc = 0
                for b in range(m):
                    acc = acc + mat[a, b] * c[b]
                x[a] = acc
            tmp = c
            c = x
            x = tmp
    return np.asarray(c).copy()
