import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newscap import template as tpl
from newscap.annotate import EntitySpan
from newscap.template import (
    COMPONENTS,
    ComponentVector,
    class_components,
    class_vector,
    component_of_entity_type,
    corpus_component_stats,
    extract_components,
    from_component_names,
    template_class_id,
)


def span(etype):
    return EntitySpan(0, 1, etype, "x")


class TestComponentMapping:
    @pytest.mark.parametrize("etype,component", [
        ("PERSON", "who"), ("NORP", "who"), ("ORG", "who"),
        ("DATE", "when"), ("TIME", "when"),
        ("FAC", "where"), ("GPE", "where"), ("LOC", "where"),
        ("PRODUCT", "misc"), ("EVENT", "misc"), ("ART", "misc"),
        ("LAW", "misc"), ("LAN", "misc"), ("PERCENT", "misc"),
        ("MONEY", "misc"), ("QUANTITY", "misc"), ("ORDINAL", "misc"),
        ("CARDINAL", "misc"),
    ])
    def test_table_mapping(self, etype, component):
        assert component_of_entity_type(etype) == component

    def test_unknown_type(self):
        with pytest.raises(ValueError, match="unknown entity type"):
            component_of_entity_type("CITY")


class TestExtractComponents:
    def test_person_date_verb(self):
        vec = extract_components([span("PERSON"), span("DATE")], ["VERB", "OTHER"])
        np.testing.assert_array_equal(vec.values, [1, 1, 0, 0, 1])

    def test_empty(self):
        vec = extract_components([], ["OTHER", "NOUN"])
        np.testing.assert_array_equal(vec.values, [0, 0, 0, 0, 0])

    def test_no_verb_means_no_context(self):
        vec = extract_components([span("PERSON")], ["NOUN", "OTHER"])
        assert vec["context"] == 0.0

    def test_monotone_in_spans(self):
        base = extract_components([span("GPE")], ["OTHER"])
        more = extract_components([span("GPE"), span("EVENT")], ["OTHER"])
        assert np.all(more.values >= base.values)


class TestTemplateClass:
    def test_empty_class(self):
        assert template_class_id(from_component_names([])) == 0

    def test_who_is_lsb(self):
        assert template_class_id(from_component_names(["who"])) == 1

    def test_all_ones(self):
        assert template_class_id(from_component_names(COMPONENTS)) == 31

    def test_roundtrip_all_32(self):
        for cid in range(32):
            assert template_class_id(class_vector(cid)) == cid

    def test_non_binary_rejected(self):
        vec = ComponentVector(np.array([0.5, 0, 0, 0, 0]), oracle=False)
        with pytest.raises(ValueError):
            template_class_id(vec)


class TestStats:
    def test_two_of_three_with_who(self):
        vecs = [from_component_names(["who"]), from_component_names(["who", "context"]),
                from_component_names(["when"])]
        comp_pct, classes = corpus_component_stats(vecs)
        assert comp_pct["who"] == pytest.approx(200 / 3)

    def test_class_percentages_sum_to_100(self):
        rng = np.random.default_rng(3)
        vecs = [ComponentVector((rng.random(5) < 0.5).astype(np.float32), oracle=True)
                for _ in range(40)]
        _, classes = corpus_component_stats(vecs)
        assert sum(pct for _, _, pct in classes) == pytest.approx(100.0, abs=0.01)

    def test_component_pct_equals_sum_over_classes(self):
        rng = np.random.default_rng(4)
        vecs = [ComponentVector((rng.random(5) < 0.4).astype(np.float32), oracle=True)
                for _ in range(60)]
        comp_pct, classes = corpus_component_stats(vecs)
        for comp in COMPONENTS:
            total = sum(pct for _, members, pct in classes if comp in members)
            assert total == pytest.approx(comp_pct[comp], abs=1e-9)

    def test_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            corpus_component_stats([])

    def test_tsv_format(self):
        vecs = [from_component_names(["who", "context"])]
        out = tpl.format_stats_tsv(*corpus_component_stats(vecs))
        assert out.startswith("component\tpercentage\nwho\t100.00")
        assert "who+context\t100.00" in out


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 31))
def test_class_bijection(cid):
    members = class_components(cid)
    assert template_class_id(from_component_names(members)) == cid
