"""Backend selection for the matching kernels.

The compiled extension is used when it imports; otherwise, or when
``MARKSEQ_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS: dict[str, ModuleType] = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

if _compiled is not None and os.environ.get("MARKSEQ_PURE_PYTHON") != "1":
    BACKEND = "cython"
else:
    BACKEND = "python"


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(name: str | None = None) -> ModuleType:
    """Kernel module by name; ``None`` gives the one selected at import."""
    name = BACKEND if name is None else name
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available (have {available()})") from None


pair_scan = _BACKENDS[BACKEND].pair_scan
query_scan = _BACKENDS[BACKEND].query_scan
