"""Kernel backend selection.

Two interchangeable backends provide the hot kernels (matmul, conv2d):

* ``ext``: the compiled Cython core ``boat._kernels`` (OpenMP threaded).
* ``python``: the pure-NumPy fallback ``boat._kernels_py``.

Both accumulate every output element in the same documented order, so they
produce bit-identical results; ``ext`` is simply faster.  Selection happens
once at import: the compiled core if it built, otherwise the fallback.  The
environment variable ``BOAT_BACKEND`` (``auto`` | ``ext`` | ``python``)
overrides the choice, e.g. to benchmark the fallback on a machine where the
extension is available.

Thread count is process-global (`set_num_threads`); it only affects how the
compiled kernels partition output rows across OpenMP threads, never the
arithmetic itself.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _ext
except ImportError:
    _ext = None

_num_threads = 1


def _select():
    choice = os.environ.get("BOAT_BACKEND", "auto")
    if choice not in ("auto", "ext", "python"):
        raise ValueError(f"BOAT_BACKEND must be auto|ext|python, got {choice!r}")
    if choice == "python":
        return _kernels_py, "python"
    if choice == "ext":
        if _ext is None:
            raise ImportError("BOAT_BACKEND=ext but boat._kernels is not built")
        return _ext, "ext"
    return (_ext, "ext") if _ext is not None else (_kernels_py, "python")


_impl, _name = _select()


def backend_name():
    """Name of the active kernel backend: 'ext' or 'python'."""
    return _name


def has_extension():
    return _ext is not None


def get_backend(name):
    """Fetch a specific backend module by name (for benchmarks/tests)."""
    if name == "ext":
        if _ext is None:
            raise ImportError("compiled backend not available")
        return _ext
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r}")


def use_backend(name):
    """Switch the active backend process-wide ('auto' restores the default)."""
    global _impl, _name
    if name == "auto":
        _impl, _name = (_ext, "ext") if _ext is not None else (_kernels_py, "python")
    else:
        _impl, _name = get_backend(name), name


def set_num_threads(n):
    """Set the OpenMP thread count used by the compiled kernels."""
    global _num_threads
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = n


def num_threads():
    return _num_threads


def kernels():
    """The active kernel module."""
    return _impl
