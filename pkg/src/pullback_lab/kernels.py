"""Backend selection for the ensemble stepping kernel.

The compiled extension is used when it imports; otherwise the numpy twin.
Set PULLBACK_LAB_BACKEND=python to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
rk4_advance = _fallback.rk4_advance

if os.environ.get("PULLBACK_LAB_BACKEND", "").lower() != "python":
    try:
        from . import _kernels
    except ImportError:  # pragma: no cover - depends on build
        pass
    else:
        rk4_advance = _kernels.rk4_advance
        BACKEND = "compiled"


def get_backend(name: str | None = None):
    """Return (name, rk4_advance) for an explicit backend or the active one."""
    if name is None:
        return BACKEND, rk4_advance
    if name == "python":
        return "python", _fallback.rk4_advance
    if name == "compiled":
        from . import _kernels
        return "compiled", _kernels.rk4_advance
    raise ValueError(f"unknown backend {name!r}")
