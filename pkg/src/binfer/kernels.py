"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``BINFER_PURE_PYTHON=1`` forces the fallback at import time,
and :func:`use` switches at runtime (tests and the benchmark use it).
"""
import contextlib
import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {}
if _compiled is not None:
    BACKENDS["cython"] = _compiled
BACKENDS["numpy"] = _fallback

if os.environ.get("BINFER_PURE_PYTHON", "").lower() in ("1", "true", "yes"):
    _active = "numpy"
else:
    _active = "cython" if _compiled is not None else "numpy"
    if _compiled is None:
        log.info("compiled kernels unavailable, using numpy fallback")


def backend_name():
    return _active


def impl():
    return BACKENDS[_active]


def available():
    return list(BACKENDS)


@contextlib.contextmanager
def use(name):
    """Temporarily switch the active backend."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    prev, _active = _active, name
    try:
        yield BACKENDS[name]
    finally:
        _active = prev
