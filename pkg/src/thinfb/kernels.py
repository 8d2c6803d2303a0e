"""Backend selection: compiled sweep kernels when available, numpy otherwise.

Set THINFB_FORCE_PYTHON=1 to force the fallback (used by the benchmark and
the backend-equivalence tests).
"""

import os

if os.environ.get("THINFB_FORCE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
psor_sweep_sym_3d = _impl.psor_sweep_sym_3d
psor_sweep_sym_2d = _impl.psor_sweep_sym_2d
band_sweep = _impl.band_sweep
