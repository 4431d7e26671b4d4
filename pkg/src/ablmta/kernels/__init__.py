"""Byte-level kernels with a compiled fast path.

Importing this package selects the Cython extension when it is built and
importable, otherwise the pure-Python fallback. Setting the environment
variable ``ABLMTA_FORCE_PURE=1`` before import skips the extension; the
test suite and the benchmark use that to exercise both backends.
"""
from __future__ import annotations

import os

from . import _pure

if os.environ.get("ABLMTA_FORCE_PURE"):
    _impl = _pure
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

scan_chunk = _impl.scan_chunk
count_ci = _impl.count_ci

LINE_START = _pure.LINE_START
IN_LINE = _pure.IN_LINE
SEEN_CR = _pure.SEEN_CR
SEEN_DOT = _pure.SEEN_DOT
SEEN_DOT_CR = _pure.SEEN_DOT_CR

BACKEND = "pure" if _impl is _pure else "compiled"

__all__ = [
    "BACKEND",
    "IN_LINE",
    "LINE_START",
    "SEEN_CR",
    "SEEN_DOT",
    "SEEN_DOT_CR",
    "count_ci",
    "scan_chunk",
]
