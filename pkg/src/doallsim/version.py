"""Source-derived version hash for artifact audit trails."""

from __future__ import annotations

import hashlib
import os

_cached: str | None = None


def source_hash() -> str:
    """sha256 over the package's own .py files, stable for a given tree."""
    global _cached
    if _cached is None:
        root = os.path.dirname(os.path.abspath(__file__))
        digest = hashlib.sha256()
        for name in sorted(os.listdir(root)):
            if name.endswith(".py"):
                with open(os.path.join(root, name), "rb") as fh:
                    digest.update(name.encode())
                    digest.update(fh.read())
        _cached = digest.hexdigest()[:16]
    return _cached
