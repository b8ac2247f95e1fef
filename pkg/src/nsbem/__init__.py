"""Desingularised boundary element method for Helmholtz problems with point monopoles.

Set ``NSBEM_THREADS`` before the first import to limit the BLAS thread pools.
"""

import os

_threads = os.environ.get("NSBEM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
