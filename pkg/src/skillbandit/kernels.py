"""Backend dispatch for the hot kernels.

Prefers the compiled extension; falls back to the pure-Python twin when
the extension is missing or when SKILLBANDIT_PURE is set in the
environment.  Both backends export the same functions with the same
stream semantics, so everything above this module is backend-agnostic.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("SKILLBANDIT_PURE"):
    backend = _kernels_py
else:
    try:
        from . import _kernels_c as backend  # type: ignore[no-redef]
    except ImportError:
        backend = _kernels_py

pure = _kernels_py


def backend_name() -> str:
    return backend.BACKEND_NAME


def has_compiled() -> bool:
    try:
        from . import _kernels_c  # noqa: F401
    except ImportError:
        return False
    return True
