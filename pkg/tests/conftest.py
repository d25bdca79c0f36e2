from __future__ import annotations

import time

import numpy as np
import pytest

SESSION_START = time.perf_counter()


def session_elapsed() -> float:
    return time.perf_counter() - SESSION_START


def finite_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function over a flat vector."""
    out = np.zeros_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = h
        out[i] = (fn(x + bump) - fn(x - bump)) / (2.0 * h)
    return out


def mixed_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(1, |a|, |b|)."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
