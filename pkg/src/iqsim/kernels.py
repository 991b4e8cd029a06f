"""Kernel backend selection.

The compiled extension ``iqsim._core`` is used when importable; otherwise,
or when the environment variable ``IQSIM_PURE_PYTHON`` is set to a non-empty
value, the numpy implementations in ``iqsim._core_py`` are used.
"""

import os

from . import _core_py

if os.environ.get("IQSIM_PURE_PYTHON"):
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _core_py
        BACKEND = "python"

pauli_terms_apply = _impl.pauli_terms_apply
fermion_terms_apply = _impl.fermion_terms_apply
pauli_chain = _impl.pauli_chain
repeated_matvec = _impl.repeated_matvec

__all__ = [
    "BACKEND",
    "pauli_terms_apply",
    "fermion_terms_apply",
    "pauli_chain",
    "repeated_matvec",
]
