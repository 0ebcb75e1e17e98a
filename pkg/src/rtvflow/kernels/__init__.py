"""Backend dispatch for the hot assembly kernels.

The environment variable ``RTVFLOW_BACKEND`` picks the implementation:
``numba`` (the default when numba imports cleanly) or ``numpy``.  Setting
``RTVFLOW_BACKEND=numba`` on a machine without numba raises at import; the
unset default falls back to numpy silently.
"""

import os

_requested = os.environ.get("RTVFLOW_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"RTVFLOW_BACKEND={_requested!r}: expected 'numba' or 'numpy'"
    )

if _requested == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_backend as _impl

        BACKEND = "numpy"

cell_gradients = _impl.cell_gradients
diffusion_residual = _impl.diffusion_residual
diffusion_blocks = _impl.diffusion_blocks
tv_energy = _impl.tv_energy
grad_l1_norm = _impl.grad_l1_norm

__all__ = [
    "BACKEND",
    "cell_gradients",
    "diffusion_residual",
    "diffusion_blocks",
    "tv_energy",
    "grad_l1_norm",
]
