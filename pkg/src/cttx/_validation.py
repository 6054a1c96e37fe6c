"""Small argument checks shared across modules."""

import math
import numbers

import numpy as np

from .exceptions import ContractError, ParameterError


def check_positive(value, name, error=ParameterError):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise error(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise error(f"{name} must be finite and > 0, got {value!r}")
    return value


def check_nonnegative(value, name, error=ParameterError):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise error(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise error(f"{name} must be finite and >= 0, got {value!r}")
    return value


def check_finite(value, name, error=ParameterError):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise error(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise error(f"{name} must be finite, got {value!r}")
    return value


def check_window(t_start, t_end, error=ParameterError):
    t_start = check_finite(t_start, "t_start", error)
    t_end = check_finite(t_end, "t_end", error)
    if not t_start < t_end:
        raise error(f"empty window [{t_start}, {t_end})")
    return t_start, t_end


def check_seed(seed):
    if not isinstance(seed, numbers.Integral) or isinstance(seed, bool):
        raise ParameterError(f"seed must be an integer, got {seed!r}")
    return int(seed)


def check_int_array(values, name):
    arr = np.asarray(values)
    if arr.dtype.kind not in "iu":
        if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ContractError(f"{name} must hold integer symbols")
        arr = arr.astype(np.int64)
    return arr
