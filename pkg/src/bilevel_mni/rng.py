"""Counter-based random streams.

Every random value used by the ensemble is a pure function of
(trial seed, stream kind, stream index, position): a Philox generator is
keyed by the first three and its 256-bit counter addresses the position.
Normal variates go through the inverse CDF on open-interval uniforms, so
regenerating any slice of any stream in isolation is bit-exact regardless
of block sizes, visit order, or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

# Stream kinds. The kind tag shares a 64-bit key word with the stream index.
KIND_FAVORED = 0  # index = favored feature column (0-based), words = rows
KIND_UNFAVORED = 1  # index = canonical chunk, words = column-major chunk entries
KIND_TEST_HEAD = 2  # index = test point, words = coordinates 0..s-1
KIND_TEST_TAIL = 3  # index = canonical chunk, words = test_idx*CHUNK + offset
KIND_LABEL_STREAM = 4  # free-form per-purpose scalar streams

_KIND_SHIFT = 56
_INDEX_MASK = (1 << _KIND_SHIFT) - 1

# Canonical chunk width for unfavored features. User-facing block sizes are
# re-chunked to this internally so summation order and stream addressing
# never depend on the caller's block size.
CANONICAL_CHUNK = 4096

_U64 = np.uint64
_TWO53_INV = 2.0**-53


def derive_seed(*parts) -> int:
    """Collapse arbitrary labeled parts into a 64-bit stream seed."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def _philox(trial_seed: int, kind: int, index: int, counter: int) -> np.random.Philox:
    if not 0 <= index <= _INDEX_MASK:
        raise ValueError(f"stream index {index} out of range")
    key = np.array([trial_seed & 0xFFFFFFFFFFFFFFFF, (kind << _KIND_SHIFT) | index],
                   dtype=_U64)
    return np.random.Philox(counter=counter, key=key)


def raw_words(trial_seed: int, kind: int, index: int, start: int, count: int) -> np.ndarray:
    """64-bit words [start, start+count) of the addressed stream."""
    if count == 0:
        return np.empty(0, dtype=_U64)
    # Philox emits 4 words per counter tick; align the start down to a tick.
    tick, offset = divmod(start, 4)
    bitgen = _philox(trial_seed, kind, index, tick)
    words = bitgen.random_raw(offset + count)
    return words[offset:] if offset else words


def words_to_uniform(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to open-interval (0,1) doubles: ((w>>11)+0.5)*2^-53."""
    return ((words >> _U64(11)).astype(np.float64) + 0.5) * _TWO53_INV


def normals(trial_seed: int, kind: int, index: int, start: int, count: int) -> np.ndarray:
    """Standard normal variates via inverse CDF on the addressed words."""
    return ndtri(words_to_uniform(raw_words(trial_seed, kind, index, start, count)))
