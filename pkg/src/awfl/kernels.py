"""Backend selection for the solver's hot loops.

The Cython build is used when importable; set ``AWFL_PURE_PYTHON=1`` to force
the numpy fallback (the benchmark and parity tests do this explicitly).
"""

import os

from . import _pykernels

if os.environ.get("AWFL_PURE_PYTHON", "") not in ("", "0"):
    backend = _pykernels
else:
    try:
        from . import _ckernels as backend
    except ImportError:
        backend = _pykernels

BACKEND = backend.BACKEND


def available_backends():
    mods = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        mods["cython"] = _ckernels
    return mods


lambert_w0 = backend.lambert_w0
w0_branch_shift = backend.w0_branch_shift
bandwidth_shares = backend.bandwidth_shares
bcd_solve = backend.bcd_solve
dual_bandwidth = backend.dual_bandwidth
min_energy_bandwidth = backend.min_energy_bandwidth
