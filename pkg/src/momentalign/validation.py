"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, InputError

QueryInput = Tuple[np.ndarray, str, float]


def check_clip_features(features, name: str = "features") -> np.ndarray:
    """2-D, non-empty, finite float64 copy of ``features``."""
    try:
        arr = np.array(features, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name} is not numeric: {exc}") from None
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InputError(f"{name} must be a non-empty (clips x dim) matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains NaN or infinite values")
    return arr


def check_query(text, name: str = "query") -> str:
    if not isinstance(text, str) or not text.strip():
        raise InputError(f"{name} must be a non-empty string")
    return text


def check_duration(value, name: str = "duration") -> float:
    try:
        duration = float(value)
    except (TypeError, ValueError):
        raise InputError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(duration) or duration <= 0:
        raise InputError(f"{name} must be positive and finite, got {value!r}")
    return duration


def check_interval(start, end, duration: Optional[float] = None) -> Tuple[float, float]:
    s, e = float(start), float(end)
    if not (math.isfinite(s) and math.isfinite(e)) or not 0 <= s < e:
        raise InputError(f"invalid interval [{start}, {end})")
    if duration is not None and e > duration + 1e-9:
        raise InputError(f"interval [{start}, {end}) ends after the video ({duration} s)")
    return s, e


def check_queries(X) -> List[QueryInput]:
    """Normalise ``X`` to a list of (clip features, query text, duration) triples."""
    if X is None or isinstance(X, (str, bytes)):
        raise InputError("X must be a sequence of (features, query, duration) triples")
    out = []
    for i, item in enumerate(X):
        try:
            features, query, duration = item
        except (TypeError, ValueError):
            raise InputError(f"X[{i}] is not a (features, query, duration) triple") from None
        out.append((check_clip_features(features, f"X[{i}] features"),
                    check_query(query, f"X[{i}] query"),
                    check_duration(duration, f"X[{i}] duration")))
    if not out:
        raise InputError("X is empty")
    widths = {f.shape[1] for f, _, _ in out}
    if len(widths) > 1:
        raise InputError(f"clip feature widths differ across X: {sorted(widths)}")
    return out


def check_targets(y, queries: Sequence[QueryInput]) -> np.ndarray:
    """(n, 2) array of [start, end) intervals, one per query."""
    try:
        arr = np.asarray(y, dtype=np.float64)
    except (TypeError, ValueError):
        raise InputError("y must be numeric (start, end) pairs") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError(f"y must have shape (n, 2), got {arr.shape}")
    if arr.shape[0] != len(queries):
        raise InputError(f"y has {arr.shape[0]} rows for {len(queries)} queries")
    for i, (row, q) in enumerate(zip(arr, queries)):
        try:
            check_interval(row[0], row[1], q[2])
        except InputError as exc:
            raise InputError(f"y[{i}]: {exc}") from None
    return arr


def check_positive(value, name: str, integer: bool = False, allow_zero: bool = False):
    ok_type = isinstance(value, (int, np.integer)) if integer else isinstance(
        value, (int, float, np.integer, np.floating))
    if isinstance(value, bool) or not ok_type:
        raise ConfigurationError(f"{name} must be {'an integer' if integer else 'a number'}, "
                                 f"got {value!r}")
    if value < 0 or (value == 0 and not allow_zero) or not math.isfinite(float(value)):
        raise ConfigurationError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, "
                                 f"got {value!r}")
    return value
