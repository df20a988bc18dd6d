"""Kernel backend selection.

The compiled extension is used when present; otherwise the numpy fallback.
Set FLOWMOE_KERNELS=python or =compiled to force a backend (the latter
fails loudly if the extension is missing).
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _speedups
except ImportError:
    _speedups = None

_forced = os.environ.get("FLOWMOE_KERNELS", "")
if _forced == "python":
    _impl = _kernels_py
elif _forced == "compiled":
    if _speedups is None:
        raise ImportError("FLOWMOE_KERNELS=compiled but flowmoe._speedups is not built")
    _impl = _speedups
elif _forced:
    raise ImportError(f"unknown FLOWMOE_KERNELS value: {_forced!r}")
else:
    _impl = _speedups if _speedups is not None else _kernels_py

BACKEND = _impl.BACKEND_NAME
intern_pairs = _impl.intern_pairs
accumulate_node_features = _impl.accumulate_node_features


def backend_name() -> str:
    """Which kernel implementation this process is using."""
    return BACKEND


def available_backends() -> dict:
    """Name -> module for every backend importable on this machine."""
    out = {"python": _kernels_py}
    if _speedups is not None:
        out["compiled"] = _speedups
    return out
