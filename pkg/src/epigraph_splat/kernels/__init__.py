"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba imports cleanly.  Setting the
environment variable ``EPIGRAPH_NO_NUMBA`` to any value other than ``""``
or ``"0"`` forces the pure-numpy backend.  Both backends expose the same
functions and agree to rounding level; outputs are bit-reproducible for a
fixed backend.
"""

import os

from . import _numpy

ENV_FLAG = "EPIGRAPH_NO_NUMBA"


def _load_numba():
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba is a hard dependency in CI
        return None
    return _numba


def get_backend(name=None):
    """Return a backend module by name (``"numba"`` or ``"numpy"``).

    With ``name=None`` the environment flag decides.
    """
    if name is None:
        name = "numpy" if os.environ.get(ENV_FLAG, "") not in ("", "0") else "numba"
    if name == "numpy":
        return _numpy
    if name == "numba":
        mod = _load_numba()
        return mod if mod is not None else _numpy
    raise ValueError(f"unknown kernel backend {name!r}")


backend = get_backend()
BACKEND = backend.NAME

refine_batch = backend.refine_batch
knn_bruteforce = backend.knn_bruteforce
ncc_map = backend.ncc_map
volume_sum = backend.volume_sum

__all__ = [
    "BACKEND",
    "ENV_FLAG",
    "backend",
    "get_backend",
    "knn_bruteforce",
    "ncc_map",
    "refine_batch",
    "volume_sum",
]
