"""Deterministic entity and part-of-speech tagging.

Entities come from greedy longest-match gazetteer lookup (case-folded,
phrases up to 8 words) followed by regex rules on the remaining tokens;
the regex set covers only the numeric/date entity types.  POS tags are a
coarse three-way split driven by a lexicon with suffix fallbacks.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

ENTITY_TYPES = (
    "PERSON", "NORP", "ORG", "DATE", "TIME", "FAC", "GPE", "LOC",
    "PRODUCT", "EVENT", "ART", "LAW", "LAN", "PERCENT", "MONEY",
    "QUANTITY", "ORDINAL", "CARDINAL",
)
POS_TAGS = ("VERB", "NOUN", "OTHER")
MAX_PHRASE_WORDS = 8

# Applied in order to tokens not covered by a gazetteer match.
_REGEX_RULES = (
    ("PERCENT", re.compile(r"^\d+(\.\d+)?%$")),
    ("MONEY", re.compile(r"^[$€£]\d+(?:[,.]\d+)*[mbk]?$", re.IGNORECASE)),
    ("TIME", re.compile(r"^\d{1,2}:\d{2}(?:[ap]m)?$|^\d{1,2}[ap]m$", re.IGNORECASE)),
    ("DATE", re.compile(r"^(?:1[0-9]|20)\d{2}$|^\d{1,2}/\d{1,2}/\d{2,4}$|^\d{4}-\d{2}-\d{2}$")),
    ("ORDINAL", re.compile(r"^\d+(?:st|nd|rd|th)$", re.IGNORECASE)),
    ("CARDINAL", re.compile(r"^\d+(?:[,.]\d+)*$")),
)

_VERB_SUFFIXES = ("ize", "izes", "ized", "izing", "ise", "ises", "ised",
                  "ising", "ify", "ifies", "ified", "ifying")
_NOUN_SUFFIXES = ("tion", "tions", "ment", "ments", "ness", "ity", "ism",
                  "isms", "ship", "ology")

_ABBREVIATIONS = {"mr.", "ms.", "mrs.", "dr.", "st.", "jr.", "sr.", "gen.",
                  "gov.", "sen.", "rep.", "prof.", "u.s.", "u.k.", "u.n."}
_STRIP_TRAILING = ",.;:!?\"')]"
_STRIP_LEADING = "\"'([“”"


def word_tokenize(text: str) -> list[str]:
    """Whitespace split with punctuation peeled into separate tokens.

    Trailing periods stay attached to known abbreviations ("Ms.") and to
    single capital letters, so gazetteer phrases like "ms. pedersen" match.
    """
    words: list[str] = []
    for chunk in text.split():
        lead = []
        while chunk and chunk[0] in _STRIP_LEADING:
            lead.append(chunk[0])
            chunk = chunk[1:]
        tail = []
        while chunk and chunk[-1] in _STRIP_TRAILING:
            if chunk[-1] == "." and (chunk.lower() in _ABBREVIATIONS
                                     or re.fullmatch(r"[A-Z]\.", chunk)):
                break
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        words.extend(lead)
        if chunk:
            words.append(chunk)
        words.extend(reversed(tail))
    return words


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    entity_type: str
    surface: str

    def __post_init__(self):
        if self.entity_type not in ENTITY_TYPES:
            raise ValueError(
                f"unknown entity type {self.entity_type!r}; valid types: {', '.join(ENTITY_TYPES)}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span [{self.start}, {self.end})")


class Gazetteer:
    """Lowercase phrase -> entity type map for longest-match tagging."""

    def __init__(self, entries: dict[str, str] | None = None):
        self._phrases: dict[tuple[str, ...], str] = {}
        self.max_words = 1
        for phrase, etype in (entries or {}).items():
            self.add(phrase, etype)

    def add(self, phrase: str, entity_type: str):
        if entity_type not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {entity_type!r}")
        words = tuple(phrase.lower().split())
        if not words:
            raise ValueError("empty gazetteer phrase")
        if len(words) > MAX_PHRASE_WORDS:
            raise ValueError(f"phrase longer than {MAX_PHRASE_WORDS} words: {phrase!r}")
        self._phrases[words] = entity_type
        self.max_words = max(self.max_words, len(words))

    def lookup(self, words: tuple[str, ...]):
        return self._phrases.get(words)

    def __len__(self):
        return len(self._phrases)

    def items(self):
        return self._phrases.items()

    @classmethod
    def from_file(cls, path):
        gaz = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                phrase, etype = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'phrase<TAB>TYPE'") from None
            gaz.add(phrase, etype)
        return gaz

    def save(self, path):
        lines = [f"{' '.join(words)}\t{etype}"
                 for words, etype in sorted(self._phrases.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class PosLexicon:
    """word -> coarse tag, with suffix rules for unseen words."""

    def __init__(self, entries: dict[str, str] | None = None):
        self._words: dict[str, str] = {}
        for word, tag in (entries or {}).items():
            self.add(word, tag)

    def add(self, word: str, tag: str):
        if tag not in POS_TAGS:
            raise ValueError(f"unknown POS tag {tag!r}")
        self._words[word.lower()] = tag

    def tag(self, word: str) -> str:
        key = word.lower()
        if key in self._words:
            return self._words[key]
        for suffix in _VERB_SUFFIXES:
            if key.endswith(suffix) and len(key) >= len(suffix) + 3:
                return "VERB"
        for suffix in _NOUN_SUFFIXES:
            if key.endswith(suffix) and len(key) >= len(suffix) + 3:
                return "NOUN"
        return "OTHER"

    def __len__(self):
        return len(self._words)

    @classmethod
    def from_file(cls, path):
        lex = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                word, tag = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>TAG'") from None
            lex.add(word, tag)
        return lex

    def save(self, path):
        lines = [f"{w}\t{t}" for w, t in sorted(self._words.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def tag_entities(words: list[str], gazetteer: Gazetteer) -> list[EntitySpan]:
    """Greedy longest-match left to right, then regex rules on the rest."""
    spans: list[EntitySpan] = []
    covered = [False] * len(words)
    lowered = [w.lower() for w in words]
    i = 0
    while i < len(words):
        matched = False
        for length in range(min(gazetteer.max_words, len(words) - i), 0, -1):
            etype = gazetteer.lookup(tuple(lowered[i:i + length]))
            if etype is not None:
                spans.append(EntitySpan(i, i + length, etype, " ".join(words[i:i + length])))
                for j in range(i, i + length):
                    covered[j] = True
                i += length
                matched = True
                break
        if not matched:
            i += 1
    for i, word in enumerate(words):
        if covered[i]:
            continue
        for etype, pattern in _REGEX_RULES:
            if pattern.match(word):
                spans.append(EntitySpan(i, i + 1, etype, word))
                break
    spans.sort(key=lambda s: s.start)
    return spans


def tag_pos(words: list[str], lexicon: PosLexicon) -> list[str]:
    return [lexicon.tag(w) for w in words]


class Annotator:
    """Bundles a gazetteer and lexicon behind one tagging interface."""

    def __init__(self, gazetteer: Gazetteer, lexicon: PosLexicon):
        self.gazetteer = gazetteer
        self.lexicon = lexicon

    def annotate(self, text: str) -> tuple[list[str], list[EntitySpan], list[str]]:
        words = word_tokenize(text)
        return words, tag_entities(words, self.gazetteer), tag_pos(words, self.lexicon)

    def entity_surfaces(self, text: str) -> set[str]:
        _, spans, _ = self.annotate(text)
        return {s.surface.lower() for s in spans}


def _parse_span_obj(obj, n_words, record_id, where):
    try:
        span = EntitySpan(int(obj["start"]), int(obj["end"]),
                          obj["type"], obj.get("surface", ""))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"record {record_id!r}: malformed {where} entity object: {exc}") from None
    except ValueError as exc:
        raise ValueError(f"record {record_id!r}: {exc}") from None
    if span.end > n_words:
        raise ValueError(
            f"record {record_id!r}: {where} span [{span.start},{span.end}) "
            f"exceeds {n_words} tokens")
    return span


def _validate_annotation(ann, words, record_id, where):
    spans = [_parse_span_obj(o, len(words), record_id, where)
             for o in ann.get("entities", [])]
    spans.sort(key=lambda s: s.start)
    for a, b in zip(spans, spans[1:]):
        if b.start < a.end:
            raise ValueError(
                f"record {record_id!r}: overlapping {where} spans "
                f"[{a.start},{a.end}) and [{b.start},{b.end})")
    tags = ann.get("pos", [])
    if tags and len(tags) != len(words):
        raise ValueError(
            f"record {record_id!r}: {where} has {len(tags)} POS tags for {len(words)} tokens")
    for t in tags:
        if t not in POS_TAGS:
            raise ValueError(f"record {record_id!r}: unknown POS tag {t!r}")
    return spans, list(tags)


def read_annotations(path):
    """Load gold annotations from a dataset JSONL file.

    Returns {record_id: {"caption": (spans, tags), "article": (spans, tags)}}
    for records that carry an "annotations" object; spans are validated
    against the record's own tokenization.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: bad JSON: {exc}") from None
        ann = obj.get("annotations")
        if ann is None:
            continue
        record_id = obj.get("id", f"line {lineno}")
        entry = {}
        for field in ("caption", "article"):
            if field in ann:
                words = word_tokenize(obj[field])
                entry[field] = _validate_annotation(ann[field], words, record_id, field)
        out[record_id] = entry
    return out
