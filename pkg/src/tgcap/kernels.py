"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``TGCAP_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the pure-Python implementations are used. ``BACKEND`` records
which one is active.
"""

import os

from . import _kernels_py

if os.environ.get("TGCAP_PURE_PYTHON", "0") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

gibbs_sweep = _impl.gibbs_sweep
infer_sweep = _impl.infer_sweep
lcs_length = _impl.lcs_length

python_backend = _kernels_py
