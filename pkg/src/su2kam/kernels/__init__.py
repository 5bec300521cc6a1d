"""Hot loops, compiled when possible.

The Cython module ``_core`` is used when it was built and importable; the
numpy module ``_fallback`` is used otherwise, or always when the environment
variable ``SU2KAM_PURE_PYTHON`` is set to a nonempty value other than ``0``.
Both expose the same functions.
"""
from __future__ import annotations

import importlib
import os

from . import _fallback

_forced = os.environ.get("SU2KAM_PURE_PYTHON", "") not in ("", "0")

_core = None
if not _forced:
    try:
        _core = importlib.import_module("._core", __name__)
    except ImportError:  # pragma: no cover - depends on the build
        _core = None

BACKEND = "compiled" if _core is not None else "python"
_impl = _core if _core is not None else _fallback

block_profile_table = _impl.block_profile_table
dopri5_linear = _impl.dopri5_linear
resonance_scan = _impl.resonance_scan


def backends() -> dict:
    """Every importable backend by name, for equivalence tests and benchmarks."""
    out = {"python": _fallback}
    if _core is not None:
        out["compiled"] = _core
    return out
