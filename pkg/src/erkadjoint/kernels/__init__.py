"""Backend selection for the hot tape/stage kernels.

The compiled numba backend is used when numba imports, unless the
environment variable ``ERKADJOINT_PURE_NUMPY`` is set to a truthy value,
in which case the level-scheduled numpy kernels run instead.
"""

from __future__ import annotations

import contextlib
import importlib
import os
from types import ModuleType

ENV_FLAG = "ERKADJOINT_PURE_NUMPY"

_loaded: dict[str, ModuleType] = {}


def _load(name: str) -> ModuleType:
    if name not in _loaded:
        if name not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {name!r}")
        _loaded[name] = importlib.import_module(f"{__name__}._{name}")
    return _loaded[name]


def numba_available() -> bool:
    try:
        _load("numba")
    except ImportError:
        return False
    return True


def _default() -> str:
    if os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on"):
        return "numpy"
    return "numba" if numba_available() else "numpy"


_active: ModuleType = _load(_default())


def active() -> ModuleType:
    """The kernel module currently in use."""
    return _active


def backend_name() -> str:
    return _active.name


def set_backend(name: str) -> None:
    global _active
    _active = _load(name)


@contextlib.contextmanager
def use_backend(name: str):
    previous = _active.name
    set_backend(name)
    try:
        yield _active
    finally:
        set_backend(previous)
