"""Inverse quantum simulation toolkit.

Exact-diagonalization backed tools for preparing states with enhanced
properties, learning parent Hamiltonians from them, contracting staircase
circuits, and learning Hamiltonians from linear-response spectra.

The hot loops live in a compiled extension (``iqsim._core``) with a numpy
fallback; ``iqsim.kernels.BACKEND`` reports which one is active.

Set ``IQSIM_THREADS`` before the first numpy import to cap BLAS/OpenMP
threads.
"""

import os

if os.environ.get("IQSIM_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["IQSIM_THREADS"])

from .kernels import BACKEND  # noqa: E402

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
