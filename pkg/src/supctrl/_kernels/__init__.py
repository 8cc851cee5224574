"""Sweep kernels: compiled extension when importable, pure numpy otherwise.

Set ``SUPCTRL_PURE=1`` to force the fallback.  ``BACKEND`` names the active
implementation; both modules are importable directly for comparisons.
"""

import os

from . import _pykernels as pure

compiled = None
if os.environ.get("SUPCTRL_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else pure
BACKEND = "compiled" if compiled is not None else "pure"

forward_affine_lie = _impl.forward_affine_lie
forward_affine_hard = _impl.forward_affine_hard
sliding_max = _impl.sliding_max
adjoint_sweep = _impl.adjoint_sweep

__all__ = [
    "BACKEND",
    "compiled",
    "pure",
    "forward_affine_lie",
    "forward_affine_hard",
    "sliding_max",
    "adjoint_sweep",
]
