"""Global numeric-mode switches.

Default precision is float32, matching ordinary training. Finite-difference
gradient verification needs float64; enable it with the WAVEFUSE_FLOAT64
environment variable or the ``float64_mode`` context manager. Checked mode
(WAVEFUSE_CHECKED) validates that every op output is finite and that fusion
weights stay inside [0, 1].
"""

import os
from contextlib import contextmanager

import numpy as np


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "") not in ("", "0")


_float64 = _env_flag("WAVEFUSE_FLOAT64")
_checked = _env_flag("WAVEFUSE_CHECKED")


def active_dtype():
    """dtype used when creating tensors (parameters, leaves, constants)."""
    return np.float64 if _float64 else np.float32


def float64_enabled() -> bool:
    return _float64


def set_float64(enabled: bool) -> None:
    global _float64
    _float64 = bool(enabled)


def checked_enabled() -> bool:
    return _checked


def set_checked(enabled: bool) -> None:
    global _checked
    _checked = bool(enabled)


@contextmanager
def float64_mode(enabled: bool = True):
    prev = _float64
    set_float64(enabled)
    try:
        yield
    finally:
        set_float64(prev)


@contextmanager
def checked_mode(enabled: bool = True):
    prev = _checked
    set_checked(enabled)
    try:
        yield
    finally:
        set_checked(prev)
