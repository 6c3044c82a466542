"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``FRIDA_PURE_PYTHON=1`` is set, the numpy implementation is used. Both
produce identical word and uniform streams; normals agree to the last ulp
or so, since they call different ``log``/``cos`` implementations.
"""
import os

from frida.numcore import _kernels_py

if os.environ.get("FRIDA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from frida.numcore import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

random_words = _impl.random_words
uniform_fill = _impl.uniform_fill
normal_fill = _impl.normal_fill

__all__ = ["BACKEND", "random_words", "uniform_fill", "normal_fill"]
