"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the
NumPy fallback takes over.  Setting ``KGECACHE_PURE=1`` forces the
fallback (useful for the backend benchmark and for debugging).
"""
from __future__ import annotations

import os

from . import pure

if os.environ.get("KGECACHE_PURE") == "1":
    _impl = pure
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = pure

BACKEND: str = _impl.BACKEND

rescale_rows = _impl.rescale_rows
cache_draw = _impl.cache_draw
refresh_select = _impl.refresh_select
sg_chunk_update = _impl.sg_chunk_update


def get_backend(name: str):
    """Return a specific kernel module by name ("pure" or "compiled")."""
    if name == "pure":
        return pure
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
