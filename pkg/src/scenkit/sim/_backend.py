"""Select the time-stepping kernel at import.

The compiled kernel is used when it was built; ``SCENKIT_PURE_PYTHON=1``
forces the pure-Python fallback. Both produce bit-identical traces.
"""

import os

from . import _kernel_py

try:
    from . import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None

KERNELS = {"python": _kernel_py}
if _kernel_c is not None:
    KERNELS["cython"] = _kernel_c

if os.environ.get("SCENKIT_PURE_PYTHON") or _kernel_c is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def get_kernel(name=None):
    name = name or BACKEND
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available (have: {sorted(KERNELS)})") from None
