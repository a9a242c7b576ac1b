"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist: a compiled
Cython extension (`_ckernels`) and a pure-numpy fallback (`numpy_kernels`).
The compiled one is preferred when importable; set SUBSCORE_MTL_BACKEND to
"numpy" or "cython" to force a choice. `use()` switches at runtime, which the
benchmark and the cross-backend tests rely on.
"""

import os

from . import numpy_kernels

_IMPLS = {"numpy": numpy_kernels}
try:
    from . import _ckernels

    _IMPLS["cython"] = _ckernels
except ImportError:  # extension not built; numpy fallback only
    _ckernels = None

_FORWARDED = (
    "gelu",
    "gelu_grad",
    "softmax_lastdim",
    "softmax_grad_lastdim",
    "layernorm",
    "layernorm_grad",
    "adam_update",
    "zscore",
)

ACTIVE = None


def available():
    """Names of the importable backends."""
    return tuple(sorted(_IMPLS))


def use(name):
    """Select the active backend by name; rebinds the module-level functions."""
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; available: {available()}")
    impl = _IMPLS[name]
    g = globals()
    for fn in _FORWARDED:
        g[fn] = getattr(impl, fn)
    g["ACTIVE"] = name
    return name


_requested = os.environ.get("SUBSCORE_MTL_BACKEND", "").strip().lower()
if _requested in ("py", "python"):
    _requested = "numpy"
if _requested:
    if _requested not in _IMPLS:
        raise ImportError(
            f"SUBSCORE_MTL_BACKEND={_requested!r} is not available; built: {available()}"
        )
    use(_requested)
else:
    use("cython" if "cython" in _IMPLS else "numpy")
