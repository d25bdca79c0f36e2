"""Deterministic named sub-streams derived from a single master seed.

Every source of randomness in a simulation (topology init, availability
schedule, adversary choice, parameter init, ...) pulls from its own named
stream so that changing how one consumer draws does not shift anybody
else's values. Labels are hashed with sha256 rather than ``hash()`` so the
derivation is stable across interpreter runs and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, label: str) -> np.random.Generator:
    """Return a Generator for the sub-stream ``label`` of ``seed``.

    Same (seed, label) always yields the same stream; distinct labels give
    independent streams.
    """
    ss = np.random.SeedSequence([seed % 2**64, _label_key(label)])
    return np.random.default_rng(ss)


def derive_seed(seed: int, label: str) -> int:
    """Stable integer seed for the sub-stream ``label`` of ``seed``.

    For components that want a plain seed value rather than a Generator.
    """
    digest = hashlib.sha256(f"{seed % 2**64}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
