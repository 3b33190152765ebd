"""Navigation kernels: the compiled Cython backend when it was built, numpy
otherwise. ``backend`` is the module in use; both are importable by name."""

import importlib
import logging

from . import _nav_py

try:
    from . import _nav_cy as backend
except ImportError:  # extension not built
    logging.getLogger(__name__).info("compiled kernels unavailable, using numpy")
    backend = _nav_py

BACKENDS = ("cython", "python")


def get_backend(name: str):
    """Return the kernel module called ``name`` (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _nav_py
    if name == "cython":
        return importlib.import_module("._nav_cy", __name__)
    raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        get_backend("cython")
    except ImportError:
        return names
    return ["cython", *names]
