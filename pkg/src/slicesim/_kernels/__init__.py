"""Hot kernels with a compiled core and a pure-numpy fallback.

The compiled extension is used when it imports cleanly; set
``SLICESIM_PURE=1`` to force the fallback.
"""
import os

from . import _pure

BACKEND = "pure"
_impl = _pure

if os.environ.get("SLICESIM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pure

quantize_groups = _impl.quantize_groups
dequantize_groups = _impl.dequantize_groups
split_codes = _impl.split_codes
merge_codes = _impl.merge_codes
topk = _impl.topk
cumsum_prefix = _impl.cumsum_prefix
topk_rows = _impl.topk_rows


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"pure": _pure}
    try:
        from . import _core
        found["cython"] = _core
    except ImportError:
        pass
    return found
