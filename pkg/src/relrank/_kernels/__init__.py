"""Kernel backend selection.

Prefers the compiled extension (``relrank._kernels._core``) and falls back
to the numpy implementation when it is not built.  Override with the
``RELRANK_KERNELS`` environment variable (``compiled`` or ``python``);
forcing ``compiled`` raises if the extension is missing.
"""

import os


def _load():
    forced = os.environ.get("RELRANK_KERNELS", "").strip().lower()
    if forced and forced not in ("compiled", "python"):
        raise ValueError(
            f"RELRANK_KERNELS must be 'compiled' or 'python', got {forced!r}"
        )
    if forced == "python":
        from relrank._kernels import _numpy as impl

        return impl, "python"
    try:
        from relrank._kernels import _core as impl  # type: ignore[attr-defined]

        return impl, "compiled"
    except ImportError:
        if forced == "compiled":
            raise
        from relrank._kernels import _numpy as impl

        return impl, "python"


impl, backend_name = _load()
