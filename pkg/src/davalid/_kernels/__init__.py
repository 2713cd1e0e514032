"""Kernel backend selection.

The compiled extension is used when importable; set ``DAVALID_BACKEND`` to
``python`` or ``compiled`` to force one. Both backends expose the same
functions and agree numerically; see ``benchmarks/kernel_bench.py``.
"""

import os

from . import _py as py_backend

try:
    from . import _fast as compiled_backend
except ImportError:
    compiled_backend = None

_requested = os.environ.get("DAVALID_BACKEND", "auto")
if _requested == "python":
    active = py_backend
elif _requested == "compiled":
    if compiled_backend is None:
        raise ImportError(
            "DAVALID_BACKEND=compiled but the extension is not built; "
            "reinstall with a C compiler and Cython available"
        )
    active = compiled_backend
elif _requested == "auto":
    active = compiled_backend if compiled_backend is not None else py_backend
else:
    raise ImportError(f"unknown DAVALID_BACKEND value {_requested!r}")

pairwise_sqdist = active.pairwise_sqdist
lloyd_step = active.lloyd_step
backend_name = active.NAME
