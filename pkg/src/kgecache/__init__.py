"""Knowledge-graph embedding with cache-based, auto-tuned negative sampling."""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
