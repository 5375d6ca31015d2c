"""Backend selection for the stencil kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over.  Set ``PDEFLOW_BACKEND=python`` to force the
fallback.
"""

import os

from . import _kernels_py

try:
    if os.environ.get("PDEFLOW_BACKEND", "").lower() == "python":
        raise ImportError("fallback forced by PDEFLOW_BACKEND")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

rhs = _impl.rhs
rhs_vjp = _impl.rhs_vjp
face_bits = _impl.face_bits


def get_backend(name: str):
    """Return the kernel module named ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
