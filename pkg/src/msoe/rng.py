"""Counter-based random numbers keyed on (master seed, subject, draw counter).

Every uniform is a pure function of its key and counter, so a subject's
draws never depend on which other subjects are simulated alongside it, on
chunking, or on thread scheduling.  The mixer is the SplitMix64 finalizer
applied in a keyed cascade.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "splitmix64",
    "derive_seed",
    "subject_keys",
    "uniforms",
    "SubjectStream",
    "PATH_DOMAIN",
    "CENSOR_DOMAIN",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_MASK64 = (1 << 64) - 1

# separate stream domains so path and censoring draws never collide
PATH_DOMAIN = 0
CENSOR_DOMAIN = 1


def splitmix64(x):
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def derive_seed(master_seed: int, *parts) -> int:
    """Derive a 64-bit seed from a master seed and a tuple of labels.

    Used for replication-level streams, e.g. ``derive_seed(seed, "sweep", M, rep)``.
    """
    text = repr((int(master_seed) & _MASK64,) + tuple(parts)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def subject_keys(seed, subject_ids, domain: int = PATH_DOMAIN) -> np.ndarray:
    """Per-subject 64-bit keys.  ``seed`` may be a scalar or an array
    aligned with ``subject_ids``."""
    ids = np.asarray(subject_ids, dtype=np.int64).astype(np.uint64)
    if np.ndim(seed) == 0:
        s = np.full(ids.shape, int(seed) & _MASK64, dtype=np.uint64)
    else:
        s = np.asarray(seed, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = splitmix64(s)
        k = splitmix64(k ^ ids)
        return splitmix64(k ^ np.uint64(domain))


def uniforms(keys, counters) -> np.ndarray:
    """Uniforms on the open interval (0, 1), one per (key, counter) pair."""
    k = np.asarray(keys, dtype=np.uint64)
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = splitmix64(splitmix64(k ^ (c * _GOLDEN)) ^ k)
    # top 53 bits, shifted by half an ulp so 0 is excluded
    return ((z >> _S11).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


class SubjectStream:
    """Scalar view of one subject's stream, for single-path APIs and tests."""

    def __init__(self, master_seed: int, subject_id: int, domain: int = PATH_DOMAIN):
        self.master_seed = int(master_seed)
        self.subject_id = int(subject_id)
        self.key = subject_keys(self.master_seed, [self.subject_id], domain)[0]
        self.counter = 0

    def uniform(self) -> float:
        u = float(uniforms([self.key], [self.counter])[0])
        self.counter += 1
        return u
