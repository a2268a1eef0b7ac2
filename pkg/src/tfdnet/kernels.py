"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the NumPy
implementation is used. Set ``TFDNET_BACKEND=python`` to force the fallback
or ``TFDNET_BACKEND=compiled`` to fail loudly if the extension is missing.
"""

import os

from . import _pykernels

_requested = os.environ.get("TFDNET_BACKEND", "auto").lower()
if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"TFDNET_BACKEND must be auto, python or compiled, got {_requested!r}")

_impl = _pykernels
BACKEND = "python"
if _requested != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise

bin_matvec = _impl.bin_matvec
bin_matvec_grad = _impl.bin_matvec_grad
overlap_add = _impl.overlap_add


def compiled_available():
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True
