"""Hot-kernel backend selection.

At import time the compiled extension is preferred; the numpy fallback is
used when it is missing or when MVSEG_KERNELS=numpy is set. Both backends
implement the same contracts (see `_numpy` for reference semantics).
"""

import os

_forced = os.environ.get("MVSEG_KERNELS", "").strip().lower()

if _forced == "numpy":
    from . import _numpy as _impl
    BACKEND = "numpy"
elif _forced in ("", "native"):
    try:
        from . import _native as _impl
        BACKEND = "native"
    except ImportError:
        if _forced == "native":
            raise
        from . import _numpy as _impl
        BACKEND = "numpy"
else:
    raise ValueError(f"MVSEG_KERNELS must be 'native' or 'numpy', got {_forced!r}")

conv_out_size = _impl.conv_out_size
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
bilinear_resize = _impl.bilinear_resize
bilinear_accumulate = _impl.bilinear_accumulate
