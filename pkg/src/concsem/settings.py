"""Process-wide numeric settings."""

from contextlib import contextmanager

DEFAULT_TOLERANCE = 1e-9
QUBIT_CAP = 6

_tol = DEFAULT_TOLERANCE


def tolerance() -> float:
    return _tol


def set_tolerance(value: float) -> None:
    global _tol
    if not value > 0:
        raise ValueError("tolerance must be positive")
    _tol = float(value)


@contextmanager
def tolerance_override(value: float):
    old = _tol
    set_tolerance(value)
    try:
        yield
    finally:
        set_tolerance(old)
