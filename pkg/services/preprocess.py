"""
Preprocess Service - Deterministic tweet normalisation pipeline

Steps, in order:
  1. remove the @USER / URL placeholder tokens
  2. remove hashtags, handles and hyperlinks
  3. expand apostrophe contractions ("don't" -> "do not")
  4. correct spelling against a frequency dictionary (edit distance <= 3)
  5. lemmatise by dictionary lookup ("saw" -> "see")
  6. lowercase
Dictionary lookups are case-insensitive, so steps 3-5 behave as if the text
had already been lowercased.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from services.errors import ConfigError, ParseError
from services.spell_checker import (
    DEFAULT_MAX_EDIT_DISTANCE,
    SpellDictionary,
    correct_spelling,
    load_frequency_dictionary,
)

logger = logging.getLogger(__name__)

RESOURCES_DIR = Path(__file__).parent.parent / "data"
CONTRACTIONS_FILE = "contractions.tsv"
DICTIONARY_FILE = "frequency_dictionary.txt"
LEMMAS_FILE = "lemmas.tsv"

PLACEHOLDER_TOKENS = {"@USER", "URL"}
LINK_PATTERN = re.compile(r"(?:https?://|www\.)\S*", re.IGNORECASE)
CURLY_APOSTROPHES = str.maketrans({"’": "'", "‘": "'"})


# ── Resources ────────────────────────────────────────────────

@dataclass(frozen=True)
class ContractionMap:
    entries: dict[str, str]

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("contraction map is empty")
        for key, value in self.entries.items():
            if "'" not in key:
                raise ConfigError(f"contraction key {key!r} has no apostrophe")
            if "'" in value:
                raise ConfigError(f"expansion of {key!r} still contains an apostrophe")

    def lookup(self, token: str) -> str | None:
        return self.entries.get(token.lower().translate(CURLY_APOSTROPHES))


@dataclass(frozen=True)
class LemmaLexicon:
    entries: dict[str, str]

    def __post_init__(self):
        for form, lemma in self.entries.items():
            if self.entries.get(lemma, lemma) != lemma:
                raise ConfigError(f"lemma {lemma!r} of {form!r} is not a fixed point")


@dataclass(frozen=True)
class PipelineConfig:
    remove_placeholders: bool = True
    remove_social_tokens: bool = True
    expand_contractions: bool = True
    correct_spelling: bool = True
    lemmatize: bool = True
    lowercase: bool = True
    max_edit_distance: int = DEFAULT_MAX_EDIT_DISTANCE

    def __post_init__(self):
        if self.max_edit_distance < 0:
            raise ConfigError(f"max_edit_distance must be >= 0, got {self.max_edit_distance}")


@dataclass(frozen=True)
class PipelineResources:
    contractions: ContractionMap
    dictionary: SpellDictionary
    lemmas: LemmaLexicon


def _read_pairs(path: Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError("expected 'surface<TAB>replacement'", line=line_no, path=path)
            surface, replacement = parts
            pairs.setdefault(surface.strip().lower(), replacement.strip())
    return pairs


def load_contraction_map(path: Path | str) -> ContractionMap:
    return ContractionMap(_read_pairs(Path(path)))


def load_lemma_lexicon(path: Path | str) -> LemmaLexicon:
    return LemmaLexicon({k: v.lower() for k, v in _read_pairs(Path(path)).items()})


def validate_resources(resources: PipelineResources) -> list[str]:
    """Return the words the pipeline could emit that the dictionary lacks.

    An empty list means every lemma and every expansion word is a
    dictionary word, which keeps the pipeline idempotent.
    """
    words = resources.dictionary.words
    missing = set()
    for form, lemma in resources.lemmas.entries.items():
        for word in (form, lemma):
            if word not in words:
                missing.add(word)
    for expansion in resources.contractions.entries.values():
        for word in expansion.lower().split():
            if word not in words:
                missing.add(word)
    return sorted(missing)


@lru_cache(maxsize=4)
def load_pipeline_resources(directory: str | None = None, max_edit_distance: int = DEFAULT_MAX_EDIT_DISTANCE) -> PipelineResources:
    """Load (and cache) the shipped contraction map, dictionary and lexicon."""
    base = Path(directory) if directory else RESOURCES_DIR
    resources = PipelineResources(
        contractions=load_contraction_map(base / CONTRACTIONS_FILE),
        dictionary=load_frequency_dictionary(base / DICTIONARY_FILE, max_edit_distance),
        lemmas=load_lemma_lexicon(base / LEMMAS_FILE),
    )
    missing = validate_resources(resources)
    if missing:
        logger.warning("[PREPROCESS] %d pipeline outputs missing from the dictionary: %s",
                       len(missing), ", ".join(missing[:10]))
    logger.info(
        "[PREPROCESS] resources loaded: %d contractions, %d words, %d lemmas",
        len(resources.contractions.entries), len(resources.dictionary), len(resources.lemmas.entries),
    )
    return resources


# ── Steps ────────────────────────────────────────────────────

def _remove_placeholders(text: str) -> str:
    return " ".join(tok for tok in text.split() if tok not in PLACEHOLDER_TOKENS)


def _remove_social_tokens(text: str) -> str:
    text = LINK_PATTERN.sub("", text)
    return " ".join(tok for tok in text.split() if not tok.startswith(("@", "#")))


def strip_noise(text: str) -> str:
    """Drop @USER/URL placeholders, handles, hashtags and hyperlinks."""
    return _remove_social_tokens(_remove_placeholders(text))


def expand_contractions(text: str, contractions: ContractionMap) -> str:
    out = []
    for tok in text.split():
        expansion = contractions.lookup(tok)
        out.append(expansion if expansion is not None else tok)
    return " ".join(out)


def _spell_candidate(token: str) -> bool:
    # numerals and emoji pass through untouched
    return any(ch.isalpha() for ch in token) and not any(ch.isdigit() for ch in token)


def lemmatize(token: str, lexicon: LemmaLexicon) -> str:
    return lexicon.entries.get(token, token)


def _correct_token(token: str, dictionary: SpellDictionary, max_edit_distance: int) -> str:
    if not _spell_candidate(token):
        return token
    lowered = token.lower()
    if lowered in dictionary.words:
        return token
    corrected = correct_spelling(lowered, dictionary, max_edit_distance)
    return token if corrected == lowered else corrected


def _lemmatize_token(token: str, lexicon: LemmaLexicon) -> str:
    lemma = lexicon.entries.get(token.lower())
    return token if lemma is None else lemma


def preprocess(text: str, cfg: PipelineConfig, resources: PipelineResources) -> list[str]:
    """Run the enabled steps in order and split into tokens."""
    if cfg.remove_placeholders:
        text = _remove_placeholders(text)
    if cfg.remove_social_tokens:
        text = _remove_social_tokens(text)
    if cfg.expand_contractions:
        text = expand_contractions(text, resources.contractions)

    tokens = text.split()
    if cfg.correct_spelling:
        tokens = [_correct_token(tok, resources.dictionary, cfg.max_edit_distance) for tok in tokens]
    if cfg.lemmatize:
        tokens = [_lemmatize_token(tok, resources.lemmas) for tok in tokens]
    if cfg.lowercase:
        tokens = [tok.lower() for tok in tokens]
    return tokens
