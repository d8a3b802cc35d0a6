"""Hot-kernel dispatch: the compiled extension when importable, else numpy/Python.

Set ``DEPTHVISION_PURE=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("DEPTHVISION_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

rasterize_min = _impl.rasterize_min
nearest_site = _impl.nearest_site
