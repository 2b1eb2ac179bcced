"""Backend selection: compiled extension when available, numpy fallback otherwise.

Set ``CRFMIX_PURE_PYTHON=1`` to force the fallback (used by the parity tests
and the backend benchmark).
"""

import os

if os.environ.get("CRFMIX_PURE_PYTHON"):
    from . import pure as backend
else:
    try:
        from . import _native as backend  # type: ignore[attr-defined]
    except ImportError:
        from . import pure as backend

BACKEND_NAME = backend.NAME

__all__ = ["backend", "BACKEND_NAME"]
