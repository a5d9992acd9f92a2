"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
it is missing.  Set ``PLANARSR_NO_CEXT=1`` to force the fallback (useful
for benchmarking and for debugging suspected kernel issues).
"""

from __future__ import annotations

import os

from . import _core_np

if os.environ.get("PLANARSR_NO_CEXT"):
    _impl = _core_np
    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _core_np
        BACKEND = "numpy"

bilinear_sample = _impl.bilinear_sample
bicubic_sample = _impl.bicubic_sample
warp_sample = _impl.warp_sample
stencil_build = _impl.stencil_build
stencil_forward = _impl.stencil_forward
stencil_adjoint = _impl.stencil_adjoint
btv_value_grad = _impl.btv_value_grad
btv_value = _impl.btv_value


def backend() -> str:
    """Name of the active kernel backend: "compiled" or "numpy"."""
    return BACKEND
