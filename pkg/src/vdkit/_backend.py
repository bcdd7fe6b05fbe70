"""Kernel backend selection.

The compiled extension ``vdkit._kernels`` is preferred when importable;
``vdkit._kernels_py`` is the pure python fallback. Both produce bit-identical
results, so the choice only affects speed. Override with VDKIT_BACKEND set
to "compiled" or "python".
"""

import os

_ENV_VAR = "VDKIT_BACKEND"


def _load():
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice not in ("", "auto", "compiled", "python"):
        raise ImportError(
            f"{_ENV_VAR} must be 'compiled' or 'python', got {choice!r}"
        )
    if choice == "python":
        from . import _kernels_py

        return _kernels_py, "python"
    try:
        from . import _kernels

        return _kernels, "compiled"
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                f"{_ENV_VAR}=compiled but the vdkit._kernels extension is "
                "not built; reinstall without VDKIT_PURE_PYTHON=1"
            )
        from . import _kernels_py

        return _kernels_py, "python"


kernels, BACKEND = _load()

LOG_FLOOR = kernels.LOG_FLOOR
