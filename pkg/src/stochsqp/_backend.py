"""Kernel backend selection.

The compiled ``_ckernels`` module is used when it imports; otherwise the
NumPy fallback in ``_pykernels``. Set ``STOCHSQP_BACKEND=python`` to force
the fallback.
"""

import os

from stochsqp import _pykernels

_forced = os.environ.get("STOCHSQP_BACKEND", "").strip().lower()

kernels = _pykernels
BACKEND = "python"

if _forced != "python":
    try:
        from stochsqp import _ckernels
    except ImportError:
        if _forced == "cython":
            raise
    else:
        kernels = _ckernels
        BACKEND = "cython"


def available_backends():
    names = {"python": _pykernels}
    try:
        from stochsqp import _ckernels
    except ImportError:
        pass
    else:
        names["cython"] = _ckernels
    return names
