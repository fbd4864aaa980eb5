"""Hot inner loops: preintegration and epipolar scoring.

The compiled core (``_ckernels``) is used when it was built; otherwise the
numpy fallback is selected at import. Set ``ROBUSTVIO_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("ROBUSTVIO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels
else:
    _impl = _pykernels

preintegrate = _impl.preintegrate
sampson_distances = _impl.sampson_distances

__all__ = ["BACKEND", "preintegrate", "sampson_distances", "_pykernels"]
