"""Pure-Python/numpy implementations of the compiled kernels.

Same signatures and results as ``iqsim._core``; used when the extension is
not built or when ``IQSIM_PURE_PYTHON`` is set.
"""

import numpy as np

_IPOW = np.array([1.0, 1.0j, -1.0, -1.0j])


def _parity(x):
    return (np.bitwise_count(x) & 1).astype(bool)


def pauli_terms_apply(states, xmasks, zmasks, nys, coeffs):
    states = np.asarray(states, dtype=np.uint64)
    nt, nd = len(xmasks), len(states)
    out_states = np.empty((nt, nd), dtype=np.uint64)
    out_vals = np.empty((nt, nd), dtype=np.complex128)
    for t in range(nt):
        base = coeffs[t] * _IPOW[int(nys[t]) & 3]
        out_states[t] = states ^ np.uint64(xmasks[t])
        odd = _parity(states & np.uint64(zmasks[t]))
        out_vals[t] = np.where(odd, -base, base)
    return out_states, out_vals


def fermion_terms_apply(states, modes, daggers, offsets, coeffs, n_modes):
    states = np.asarray(states, dtype=np.uint64)
    nt, nd = len(offsets) - 1, len(states)
    out_states = np.empty((nt, nd), dtype=np.uint64)
    out_vals = np.empty((nt, nd), dtype=np.complex128)
    one = np.uint64(1)
    for t in range(nt):
        s = states.copy()
        sign = np.ones(nd)
        alive = np.ones(nd, dtype=bool)
        for f in range(offsets[t + 1] - 1, offsets[t] - 1, -1):
            pos = n_modes - 1 - int(modes[f])
            bit = ((s >> np.uint64(pos)) & one).astype(bool)
            alive &= ~bit if daggers[f] else bit
            if pos + 1 < 64:
                sign = np.where(_parity(s >> np.uint64(pos + 1)), -sign, sign)
            s = s ^ (one << np.uint64(pos))
        out_states[t] = np.where(alive, s, states)
        out_vals[t] = np.where(alive, coeffs[t] * sign, 0.0)
    return out_states, out_vals


def pauli_chain(transfer, letters, seed):
    v = np.array(seed, dtype=np.complex128)
    for j in range(len(letters) - 1, -1, -1):
        v = transfer[letters[j]] @ v
    return v


def repeated_matvec(mat, seed, count):
    v = np.array(seed, dtype=np.complex128)
    for _ in range(count):
        v = mat @ v
    return v
