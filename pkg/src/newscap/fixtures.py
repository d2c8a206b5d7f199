"""Deterministic fixture generators for tests and demos.

Image features are hash-seeded pseudo vectors standing in for a
pretrained visual backbone.  The news generator builds article/caption
pairs whose caption tokens all appear in the article except for one
color word that is only recoverable from the image feature; that split
is what makes the zero-out ablations measurably different.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .embeddings import KbDocument, KnowledgeBase

PERSONS = ("Maria Chen", "David Okafor", "Lena Fischer",
           "Omar Haddad", "Ingrid Larsen", "Paulo Ribeiro")
PLACES = ("Oslo", "Toronto", "Lisbon", "Marseille", "Kyoto", "Dublin")
NOUNS = ("museum", "gallery", "bridge", "stadium", "library", "theater")
MONTHS = ("January", "February", "March", "April", "June", "October")
YEARS = tuple(str(y) for y in range(2010, 2022))
EVENTS = ("Harvest Festival", "Winter Games", "Spring Fair")
COLORS = ("crimson", "amber", "teal", "ivory", "indigo", "olive", "coral", "slate")
VERBS = ("opened", "visited", "toured", "renovated", "expanded", "restored")

COMPONENT_RATES = {"who": 0.9, "when": 0.45, "where": 0.55, "misc": 0.3, "context": 0.8}


def pseudo_image_feature(key: str, dim: int) -> np.ndarray:
    """Stable pseudo feature vector derived from a string key."""
    seed = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(seed).normal(size=dim).astype(np.float32)


def make_mini_kb(n_entities: int = 30, n_docs: int = 200, seed: int = 0) -> KnowledgeBase:
    """A tiny knowledge base whose documents identify their entity clearly.

    Entity i owns six exclusive keywords; each document mentions one
    entity (anchored) surrounded by its keywords and common filler.
    Entities are linked in a ring.
    """
    rng = np.random.default_rng(seed)
    entities = [f"place{i:02d}" for i in range(n_entities)]
    keywords = {e: [f"k{i:02d}x{j}" for j in range(6)] for i, e in enumerate(entities)}
    filler = ["the", "of", "near", "with", "site", "area", "from", "old"]
    edges = [(entities[i], entities[(i + 1) % n_entities]) for i in range(n_entities)]

    documents = []
    for d in range(n_docs):
        entity = entities[d % n_entities]
        n_kw = int(rng.integers(5, 9))
        words = [str(w) for w in rng.choice(keywords[entity], size=n_kw, replace=True)]
        for _ in range(int(rng.integers(2, 5))):
            words.insert(int(rng.integers(0, len(words) + 1)), filler[int(rng.integers(0, len(filler)))])
        pos = int(rng.integers(0, len(words) + 1))
        words.insert(pos, entity)
        documents.append(KbDocument(words, [(pos, pos + 1, entity)]))
    return KnowledgeBase(entities, edges, documents)


def _realize_caption(rng, bits, person, place, noun, month, year, event, color, verb):
    words = []
    if bits["who"]:
        words += person.split()
        words.append(verb if bits["context"] else "at")
        words += ["the", color, noun]
    else:
        if bits["context"]:
            words += ["Visitors", verb, "the", color, noun]
        else:
            words += ["The", color, noun]
    if bits["where"]:
        words += ["in", place]
    if bits["when"]:
        words += ["in", month, year]
    if bits["misc"]:
        words += ["during", "the"] + event.split()
    return " ".join(words)


def _realize_article(rng, person, place, noun, month, year, event, verb):
    first = f"{person} {verb} the {noun} in {place} in {month} {year} ."
    second = f"The {noun} drew crowds during the {event} ."
    third = "Officials said the exhibit was busy ."
    extras = [
        f"The {noun} has been a landmark near the harbor .",
        f"Visitors walked through the {noun} entrance all week .",
        f"{person} spoke at the ceremony with the mayor .",
        f"The collection at the {noun} was expanded last season .",
    ]
    n_extra = int(rng.integers(0, 3))
    picks = [extras[int(rng.integers(0, len(extras)))] for _ in range(n_extra)]
    return " ".join([first, second, third] + picks)


def make_news_dataset(n_records: int, seed: int = 0, image_dim: int = 64,
                      split: str = "train"):
    """Records plus the image feature matrix they index into.

    Returns (records, features) where records are JSON-ready dicts and
    features[i] encodes only the caption's color word.
    """
    rng = np.random.default_rng(seed)
    records = []
    features = np.zeros((n_records, image_dim), dtype=np.float32)
    for i in range(n_records):
        bits = {name: bool(rng.random() < rate) for name, rate in COMPONENT_RATES.items()}
        person = PERSONS[int(rng.integers(0, len(PERSONS)))]
        place = PLACES[int(rng.integers(0, len(PLACES)))]
        noun = NOUNS[int(rng.integers(0, len(NOUNS)))]
        month = MONTHS[int(rng.integers(0, len(MONTHS)))]
        year = YEARS[int(rng.integers(0, len(YEARS)))]
        event = EVENTS[int(rng.integers(0, len(EVENTS)))]
        color = COLORS[int(rng.integers(0, len(COLORS)))]
        verb = VERBS[int(rng.integers(0, len(VERBS)))]
        caption = _realize_caption(rng, bits, person, place, noun, month, year,
                                   event, color, verb)
        article = _realize_article(rng, person, place, noun, month, year, event, verb)
        records.append({
            "id": f"{split}-{i:04d}",
            "split": split,
            "article": article,
            "caption": caption,
            "image_feature": i,
        })
        features[i] = pseudo_image_feature(f"color:{color}", image_dim)
    return records, features
