"""Mapping annotations to the five caption components.

Component order is fixed as (who, when, where, misc, context).  Entity
types map to the first four; context is present whenever the caption
contains a verb.  A template class packs the five presence bits into an
integer with who as the least significant bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COMPONENTS = ("who", "when", "where", "misc", "context")

_TYPE_TO_COMPONENT = {
    "PERSON": "who", "NORP": "who", "ORG": "who",
    "DATE": "when", "TIME": "when",
    "FAC": "where", "GPE": "where", "LOC": "where",
    "PRODUCT": "misc", "EVENT": "misc", "ART": "misc", "LAW": "misc",
    "LAN": "misc", "PERCENT": "misc", "MONEY": "misc", "QUANTITY": "misc",
    "ORDINAL": "misc", "CARDINAL": "misc",
}

N_CLASSES = 2 ** len(COMPONENTS)


def component_of_entity_type(entity_type: str) -> str:
    try:
        return _TYPE_TO_COMPONENT[entity_type]
    except KeyError:
        raise ValueError(f"unknown entity type {entity_type!r}") from None


@dataclass(frozen=True)
class ComponentVector:
    """Activations over (who, when, where, misc, context).

    Oracle vectors are binary and come from gold captions; auto vectors
    are sigmoid probabilities from the prediction head.
    """

    values: np.ndarray
    oracle: bool

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.shape != (5,):
            raise ValueError(f"component vector must have 5 entries, got {vals.shape}")
        if np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("component activations must lie in [0, 1]")
        if self.oracle and not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValueError("oracle component vectors must be binary")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, name: str) -> float:
        return float(self.values[COMPONENTS.index(name)])

    def active(self) -> tuple[str, ...]:
        return tuple(c for c, v in zip(COMPONENTS, self.values) if v >= 0.5)


def from_component_names(names) -> ComponentVector:
    vals = np.zeros(5, dtype=np.float32)
    for name in names:
        if name not in COMPONENTS:
            raise ValueError(
                f"unknown component {name!r}; valid: {', '.join(COMPONENTS)}")
        vals[COMPONENTS.index(name)] = 1.0
    return ComponentVector(vals, oracle=True)


def extract_components(spans, tags) -> ComponentVector:
    """Oracle component vector of an annotated caption."""
    vals = np.zeros(5, dtype=np.float32)
    for span in spans:
        vals[COMPONENTS.index(component_of_entity_type(span.entity_type))] = 1.0
    if any(t == "VERB" for t in tags):
        vals[4] = 1.0
    return ComponentVector(vals, oracle=True)


def template_class_id(vec: ComponentVector) -> int:
    if not vec.oracle:
        raise ValueError("template classes are defined for binary vectors only")
    return int(sum(int(v) << i for i, v in enumerate(vec.values)))


def class_components(class_id: int) -> tuple[str, ...]:
    if not 0 <= class_id < N_CLASSES:
        raise ValueError(f"class id {class_id} outside [0, {N_CLASSES})")
    return tuple(c for i, c in enumerate(COMPONENTS) if class_id >> i & 1)


def class_vector(class_id: int) -> ComponentVector:
    return from_component_names(class_components(class_id))


def corpus_component_stats(vectors):
    """Percentages per component and per template class over a corpus.

    Takes oracle ComponentVectors (one per caption); returns
    (component -> pct, [(class_id, member names, pct), ...] sorted by
    descending share then class id).
    """
    vectors = list(vectors)
    if not vectors:
        raise ValueError("empty dataset")
    n = len(vectors)
    comp_counts = np.zeros(5)
    class_counts = np.zeros(N_CLASSES)
    for vec in vectors:
        comp_counts += vec.values
        class_counts[template_class_id(vec)] += 1
    comp_pct = {c: 100.0 * comp_counts[i] / n for i, c in enumerate(COMPONENTS)}
    classes = [(cid, class_components(cid), 100.0 * class_counts[cid] / n)
               for cid in range(N_CLASSES)]
    classes.sort(key=lambda row: (-row[2], row[0]))
    return comp_pct, classes


def format_stats_tsv(comp_pct, classes) -> str:
    lines = ["component\tpercentage"]
    lines += [f"{c}\t{comp_pct[c]:.2f}" for c in COMPONENTS]
    lines.append("")
    lines.append("class_id\tcomponents\tpercentage")
    for cid, members, pct in classes:
        name = "+".join(members) if members else "(none)"
        lines.append(f"{cid}\t{name}\t{pct:.2f}")
    return "\n".join(lines) + "\n"
