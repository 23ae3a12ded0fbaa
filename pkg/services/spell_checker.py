"""
Spell Checker Service - Symmetric-delete spelling correction

Candidates are found by intersecting deletion variants of the query with
deletion variants precomputed for every dictionary word, then ranked by the
optimal-string-alignment (restricted Damerau-Levenshtein) distance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

from services.errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_MAX_EDIT_DISTANCE = 3
MAX_SUPPORTED_EDIT_DISTANCE = 4


@dataclass(frozen=True)
class SpellDictionary:
    words: dict[str, int]
    delete_index: dict[str, frozenset[str]] = field(repr=False)
    max_edit_distance: int = DEFAULT_MAX_EDIT_DISTANCE

    def __contains__(self, word: str) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)


# ── Distance ─────────────────────────────────────────────────

def damerau_levenshtein(a: str, b: str) -> int:
    """Optimal string alignment distance between ``a`` and ``b``.

    Counts insertions, deletions, substitutions and transpositions of
    adjacent characters, never editing a substring twice.
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)

    rows, cols = len(a) + 1, len(b) + 1
    # three rolling rows are enough for the transposition lookback
    before = None
    prev = list(range(cols))
    for i in range(1, rows):
        cur = [i] + [0] * (cols - 1)
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if (
                before is not None
                and j > 1
                and a[i - 1] == b[j - 2]
                and a[i - 2] == b[j - 1]
            ):
                best = min(best, before[j - 2] + 1)
            cur[j] = best
        before, prev = prev, cur
    return prev[-1]


# ── Index construction ───────────────────────────────────────

def deletion_variants(word: str, max_deletes: int) -> set[str]:
    """Every string obtained by deleting up to ``max_deletes`` characters."""
    variants = {word}
    length = len(word)
    for count in range(1, min(max_deletes, length) + 1):
        for positions in combinations(range(length), count):
            skip = set(positions)
            variants.add("".join(ch for i, ch in enumerate(word) if i not in skip))
    return variants


def build_delete_index(words: dict[str, int], max_edit_distance: int = DEFAULT_MAX_EDIT_DISTANCE) -> SpellDictionary:
    """Precompute the symmetric-delete index for a word→frequency map."""
    if max_edit_distance < 0:
        raise ConfigError(f"max_edit_distance must be >= 0, got {max_edit_distance}")
    if max_edit_distance > MAX_SUPPORTED_EDIT_DISTANCE:
        raise ConfigError(
            f"max_edit_distance {max_edit_distance} exceeds {MAX_SUPPORTED_EDIT_DISTANCE}; "
            "the delete index would explode in size"
        )

    index: dict[str, set[str]] = {}
    for word, freq in words.items():
        if freq < 0:
            raise ConfigError(f"negative frequency for {word!r}: {freq}")
        for variant in deletion_variants(word, max_edit_distance):
            index.setdefault(variant, set()).add(word)

    logger.debug("[SPELL] indexed %d words into %d delete keys", len(words), len(index))
    return SpellDictionary(
        words=dict(words),
        delete_index={key: frozenset(sources) for key, sources in index.items()},
        max_edit_distance=max_edit_distance,
    )


def load_frequency_dictionary(path: Path | str, max_edit_distance: int = DEFAULT_MAX_EDIT_DISTANCE) -> SpellDictionary:
    """Load a ``word frequency`` file and index it."""
    path = Path(path)
    words: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected 'word frequency'", line=line_no, path=path)
            word, count = parts
            try:
                freq = int(count)
            except ValueError:
                raise ParseError(f"frequency {count!r} is not an integer", line=line_no, path=path)
            if freq < 0:
                raise ParseError(f"negative frequency {freq}", line=line_no, path=path)
            words[word.lower()] = words.get(word.lower(), 0) + freq
    return build_delete_index(words, max_edit_distance)


# ── Lookup ───────────────────────────────────────────────────

def _rank(candidates, token: str, dictionary: SpellDictionary, limit: int) -> str:
    best_key = None
    best_word = token
    for word in candidates:
        distance = damerau_levenshtein(token, word)
        if distance > limit:
            continue
        key = (distance, -dictionary.words[word], word)
        if best_key is None or key < best_key:
            best_key, best_word = key, word
    return best_word


def correct_spelling(token: str, dictionary: SpellDictionary, max_edit_distance: int | None = None) -> str:
    """Closest dictionary word within the edit bound, else the token itself.

    Ties go to the higher corpus frequency, then to lexicographic order.
    """
    limit = dictionary.max_edit_distance if max_edit_distance is None else max_edit_distance
    if limit > dictionary.max_edit_distance:
        raise ConfigError(
            f"lookup distance {limit} exceeds the index distance {dictionary.max_edit_distance}"
        )
    if token in dictionary.words:
        return token

    candidates: set[str] = set()
    for variant in deletion_variants(token, limit):
        sources = dictionary.delete_index.get(variant)
        if sources:
            candidates.update(sources)
    return _rank(candidates, token, dictionary, limit)


def correct_spelling_exhaustive(token: str, dictionary: SpellDictionary, max_edit_distance: int | None = None) -> str:
    """Reference lookup scanning the whole dictionary (same ranking)."""
    limit = dictionary.max_edit_distance if max_edit_distance is None else max_edit_distance
    if token in dictionary.words:
        return token
    return _rank(dictionary.words, token, dictionary, limit)
