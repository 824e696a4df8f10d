"""Selection of the compute backend for the O(N^2) interaction kernels.

Two implementations of every hot kernel exist: a numba @njit version and a
pure-numpy blocked version.  The active one is chosen by the environment
variable ``VPPC_BACKEND`` (``auto``, ``numba`` or ``numpy``) read at import
time, or programmatically via :func:`set_backend`.  ``auto`` means numba when
importable, numpy otherwise.

Both backends are deterministic run to run.  They are *not* guaranteed to be
bitwise identical to each other: the numpy path uses pairwise summation while
the compiled path accumulates serially per target, so results may differ in
the last bits.  Thread count does not affect the compiled result because each
target row is reduced by a single thread.
"""

from __future__ import annotations

import os

VALID_BACKENDS = ("auto", "numba", "numpy")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def _resolve(name: str) -> str:
    if name not in VALID_BACKENDS:
        raise ValueError(f"unknown backend {name!r}, expected one of {VALID_BACKENDS}")
    if name == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return name


_active = _resolve(os.environ.get("VPPC_BACKEND", "auto").strip().lower() or "auto")


def get_backend() -> str:
    """Return the active backend, either "numba" or "numpy"."""
    return _active


def set_backend(name: str) -> str:
    """Switch backends at runtime; returns the resolved name."""
    global _active
    _active = _resolve(name)
    return _active
