"""Edit-distance based string similarity and fuzzy slot-value matching."""

from __future__ import annotations

import numpy as np

from .core import normalize_value

FUZZY_THRESHOLD = 0.95


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance (insert/delete/substitute, unit costs).

    Row-vectorized with numpy; the insertion dependency within a row is
    closed with a prefix-minimum over (cur[k] - k), which equals
    min_k(cur[k] + (j - k)) after adding the offsets back.
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(b) > len(a):
        a, b = b, a
    bcodes = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)
    offsets = np.arange(len(b) + 1, dtype=np.int64)
    prev = offsets.copy()
    cur = np.empty_like(prev)
    for i, ch in enumerate(a, start=1):
        cur[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + (bcodes != ord(ch)), out=cur[1:])
        cur = np.minimum.accumulate(cur - offsets) + offsets
        prev, cur = cur, prev
    return int(prev[-1])


def normalized_similarity(a: str, b: str) -> float:
    """1 - levenshtein/max_len, in [0, 1]. Two empty strings are identical."""
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


_ARTICLES = ("the ", "a ", "an ")

# Orthographic variants that denote the same surface value. Applied after
# normalization, both directions.
_ALIASES = {
    "center": "centre",
    "theater": "theatre",
    "guesthouse": "guest house",
    "night club": "nightclub",
    "swimming pool": "swimmingpool",
    "concert hall": "concerthall",
    "mutliple sports": "multiple sports",
    "cheaper": "cheap",
    "moderately priced": "moderate",
}


def _canonical(value: str) -> str:
    s = normalize_value(value)
    for art in _ARTICLES:
        if s.startswith(art):
            s = s[len(art):]
            break
    return _ALIASES.get(s, s)


def fuzzy_match(a: str, b: str, threshold: float = FUZZY_THRESHOLD) -> bool:
    """True when two surface values denote the same thing.

    Symmetric and reflexive but deliberately not transitive: equality after
    normalization and alias folding, or normalized edit similarity at or
    above ``threshold``.
    """
    ca, cb = _canonical(a), _canonical(b)
    if ca == cb:
        return True
    return normalized_similarity(ca, cb) >= threshold
