"""Access to the bundled gazetteer and POS lexicon."""

from __future__ import annotations

from importlib import resources

from .annotate import Annotator, Gazetteer, PosLexicon


def _data_path(name):
    return resources.files("newscap") / "data" / name


def default_gazetteer() -> Gazetteer:
    with resources.as_file(_data_path("gazetteer.tsv")) as path:
        return Gazetteer.from_file(path)


def default_lexicon() -> PosLexicon:
    with resources.as_file(_data_path("lexicon.tsv")) as path:
        return PosLexicon.from_file(path)


def default_annotator() -> Annotator:
    return Annotator(default_gazetteer(), default_lexicon())
