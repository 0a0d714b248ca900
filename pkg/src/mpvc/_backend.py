"""Pick the kernel backend once, at import.

Set ``MPVC_PURE_PYTHON=1`` to force the numpy kernels even when the compiled
extension is present.
"""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

python_kernels = _kernels_py
compiled_kernels = None

try:
    from . import _kernels as compiled_kernels  # type: ignore[no-redef]
except ImportError:  # pragma: no cover - depends on the build
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("MPVC_PURE_PYTHON") != "1":
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = python_kernels
    BACKEND = "python"

log.debug("mpvc kernel backend: %s", BACKEND)
