"""Numerical kernel backend selection.

The compiled extension is preferred when it has been built; setting the
environment variable ``CNTM_PURE_KERNELS=1`` forces the numpy fallback
(useful for benchmarking and for debugging the extension itself).
"""

import os

if os.environ.get("CNTM_PURE_KERNELS"):
    from cntm._kernels.pure import *  # noqa: F401,F403

    BACKEND = "pure"
else:
    try:
        from cntm._kernels._core import *  # noqa: F401,F403

        BACKEND = "compiled"
    except ImportError:
        from cntm._kernels.pure import *  # noqa: F401,F403

        BACKEND = "pure"
