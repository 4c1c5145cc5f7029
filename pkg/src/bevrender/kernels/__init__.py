"""Backend dispatch for the numeric inner loops.

Two interchangeable implementations exist: a numba-compiled one
(default) and a pure-numpy fallback. Selection order:

  1. explicit set_backend() call,
  2. the RENDBEV_BACKEND environment variable ("numba" or "numpy"),
  3. numba if it imports, numpy otherwise.

benchmarks/bench_backends.py times one against the other.
"""

from __future__ import annotations

import os

from ..errors import ConfigurationError
from . import numpy_impl

_KERNEL_NAMES = ("integrate_rays", "composite_probs", "scatter_ce_grad",
                 "scene_sigma", "first_hit")

_forced: str | None = None


def _resolve() -> str:
    if _forced is not None:
        return _forced
    env = os.environ.get("RENDBEV_BACKEND", "").strip().lower()
    if env in ("numba", "numpy"):
        return env
    if env:
        raise ConfigurationError(f"RENDBEV_BACKEND must be 'numba' or 'numpy', got {env!r}")
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


def set_backend(name: str | None) -> None:
    """Force a backend ('numba' / 'numpy') or restore env-based selection (None)."""
    global _forced
    if name is not None and name not in ("numba", "numpy"):
        raise ConfigurationError(f"unknown backend {name!r}")
    _forced = name


def active_backend() -> str:
    return _resolve()


def get_kernels():
    """Module object providing the kernel functions for the active backend."""
    if _resolve() == "numba":
        from . import numba_impl
        return numba_impl
    return numpy_impl


def set_num_threads(n: int) -> int:
    """Clamp and apply the numba thread count; returns the effective value.

    A no-op (returning 1) on the numpy backend, which is single-threaded.
    """
    if _resolve() != "numba":
        return 1
    import numba
    eff = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(eff)
    return eff
