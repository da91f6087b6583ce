"""Backend dispatch for the hot array kernels.

The compiled extension (:mod:`st2n._kernels`) is preferred; the NumPy
implementation (:mod:`st2n._kernels_np`) is the fallback when the
extension is missing or when ``ST2N_PURE_PYTHON=1`` is set.  Both expose
the same functions with identical semantics; ``BACKEND`` records which
one is active so benchmarks and logs can report it.
"""

from __future__ import annotations

import os

from st2n import _kernels_np

if os.environ.get("ST2N_PURE_PYTHON", "").strip() in {"1", "true", "yes"}:
    _impl = _kernels_np
    BACKEND = "numpy"
else:
    try:
        from st2n import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_np
        BACKEND = "numpy"

row_norms = _impl.row_norms
st2n_rows = _impl.st2n_rows
st2n_rows_var = _impl.st2n_rows_var
jvp_rows = _impl.jvp_rows
double_threshold_rows = _impl.double_threshold_rows
double_threshold_backward = _impl.double_threshold_backward
cd_sweep = _impl.cd_sweep

__all__ = [
    "BACKEND",
    "row_norms",
    "st2n_rows",
    "st2n_rows_var",
    "jvp_rows",
    "double_threshold_rows",
    "double_threshold_backward",
    "cd_sweep",
]
