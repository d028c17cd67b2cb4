"""Hot-kernel backend selection.

The compiled extension is preferred; the numpy fallback is picked when the
extension is unavailable or ``KTL_PURE_PYTHON=1`` is set.  Both expose the
same two functions with identical semantics.
"""
import os

from . import pykernels

if os.environ.get("KTL_PURE_PYTHON") == "1":
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = pykernels
        BACKEND = "python"

interp_cubic_periodic = _impl.interp_cubic_periodic
eval_trig_modes = _impl.eval_trig_modes

__all__ = ["interp_cubic_periodic", "eval_trig_modes", "BACKEND", "pykernels"]
