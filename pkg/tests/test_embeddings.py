import numpy as np
import pytest

from newscap import autodiff as ad
from newscap.binio import FormatError
from newscap.embeddings import (
    EmbeddingTable,
    KbDocument,
    KnowledgeBase,
    NepConfig,
    build_nep_loss_graph,
    embed_entity,
    load_embeddings,
    load_kb,
    mention_context,
    nep_distribution,
    nep_probability,
    sample_nep_negatives,
    save_embeddings,
    save_kb,
    text_vector,
    train_embeddings,
)
from newscap.fixtures import make_mini_kb


def toy_table(dim=4, seed=0):
    rng = np.random.default_rng(seed)
    words = ["alpha", "beta", "gamma"]
    entities = ["Oslo", "Grand Library"]
    matrix = rng.normal(size=(5, dim)).astype(np.float32)
    fc_w = rng.normal(size=(dim, dim)).astype(np.float32)
    fc_b = rng.normal(size=(1, dim)).astype(np.float32)
    unk = rng.normal(size=dim).astype(np.float32)
    return EmbeddingTable(dim, words, entities, matrix, fc_w, fc_b, unk)


class TestTextVector:
    def test_single_word_is_projected_vector(self):
        table = toy_table()
        expected = table.matrix[0] @ table.fc_weight + table.fc_bias
        np.testing.assert_allclose(text_vector(["alpha"], table), expected.ravel(), rtol=1e-6)

    def test_order_invariant(self):
        table = toy_table()
        a = text_vector(["alpha", "beta", "gamma"], table)
        b = text_vector(["gamma", "alpha", "beta"], table)
        np.testing.assert_allclose(a, b, rtol=1e-6)

    def test_duplicates_collapse(self):
        table = toy_table()
        np.testing.assert_allclose(text_vector(["beta", "beta"], table),
                                   text_vector(["beta"], table), rtol=1e-6)

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            text_vector([], toy_table())

    def test_unknown_word_uses_unk_row(self):
        table = toy_table()
        expected = table.unk @ table.fc_weight + table.fc_bias
        np.testing.assert_allclose(text_vector(["zzz"], table), expected.ravel(), rtol=1e-6)


class TestNepProbability:
    def test_equal_scores_give_half(self):
        table = toy_table()
        table.matrix[3] = table.matrix[4]  # make both entity vectors equal
        p = nep_probability("Oslo", ["alpha"], ["Oslo", "Grand Library"], table)
        assert p == pytest.approx(0.5, abs=1e-6)

    def test_distribution_sums_to_one(self):
        table = toy_table(seed=3)
        dist = nep_distribution(["alpha", "beta"], ["Oslo", "Grand Library"], table)
        assert dist.sum() == pytest.approx(1.0, abs=1e-6)

    def test_sharpening_keeps_argmax(self):
        table = toy_table(seed=4)
        cands = ["Oslo", "Grand Library"]
        base = nep_distribution(["alpha"], cands, table)
        hot = toy_table(seed=4)
        hot.fc_weight = hot.fc_weight * 3.0
        hot.fc_bias = hot.fc_bias * 3.0
        sharp = nep_distribution(["alpha"], cands, hot)
        assert np.argmax(base) == np.argmax(sharp)
        assert sharp.max() >= base.max() - 1e-9

    def test_entity_not_in_candidates(self):
        with pytest.raises(ValueError, match="not among"):
            nep_probability("Oslo", ["alpha"], ["Grand Library"], toy_table())


class TestNepGradients:
    def test_fd_check_tiny_dims(self):
        rng = np.random.default_rng(5)
        g = build_nep_loss_graph(n_words=3, n_candidates=4, dim=3)
        bindings = {
            "word_vecs": rng.normal(size=(3, 3)),
            "cand_vecs": rng.normal(size=(4, 3)),
            "fc_weight": rng.normal(size=(3, 3)),
            "fc_bias": rng.normal(size=(1, 3)),
            "target": np.array([0]),
        }
        assert ad.finite_difference_check(g, bindings) < 1e-6


class TestNegativeSampling:
    def test_anchored_entities_never_sampled(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            anchored = {1, 4, 7}
            negs = sample_nep_negatives(rng, 10, anchored, 5)
            assert not set(negs.tolist()) & anchored

    def test_pool_smaller_than_request(self):
        rng = np.random.default_rng(7)
        negs = sample_nep_negatives(rng, 4, {0}, 50)
        assert sorted(negs.tolist()) == [1, 2, 3]


@pytest.fixture(scope="module")
def trained_small():
    kb = make_mini_kb(n_entities=10, n_docs=50, seed=1)
    cfg = NepConfig(negatives=12, window=4, lr=0.08, epochs=6, seed=0)
    return kb, train_embeddings(kb, cfg, dim=16)


class TestTraining:
    def test_top1_accuracy_on_training_docs(self, trained_small):
        kb, table = trained_small
        hits = 0
        for doc in kb.documents:
            dist = nep_distribution(doc.words, table.entities, table)
            predicted = table.entities[int(np.argmax(dist))]
            hits += predicted == doc.anchors[0][2]
        assert hits / len(kb.documents) >= 0.9

    def test_linked_pairs_more_similar_than_random(self, trained_small):
        kb, table = trained_small
        def cos(a, b):
            return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-9))
        linked = np.mean([cos(table.entity_vector(a), table.entity_vector(b))
                          for a, b in kb.edges])
        rng = np.random.default_rng(8)
        ents = table.entities
        random_pairs = []
        while len(random_pairs) < 60:
            a, b = rng.choice(len(ents), size=2, replace=False)
            if (ents[a], ents[b]) not in kb.edges and (ents[b], ents[a]) not in kb.edges:
                random_pairs.append(cos(table.entity_vector(ents[a]),
                                        table.entity_vector(ents[b])))
        assert linked > np.mean(random_pairs)

    def test_epoch_loss_non_increasing_overall(self, trained_small):
        _, table = trained_small
        assert table.epoch_losses[-1] <= table.epoch_losses[0]

    def test_reproducible_bitwise(self):
        kb = make_mini_kb(n_entities=6, n_docs=18, seed=2)
        cfg = NepConfig(negatives=4, window=3, lr=0.05, epochs=2, seed=9)
        t1 = train_embeddings(kb, cfg, dim=8)
        t2 = train_embeddings(kb, cfg, dim=8)
        assert t1.matrix.tobytes() == t2.matrix.tobytes()
        assert t1.fc_weight.tobytes() == t2.fc_weight.tobytes()

    def test_empty_kb_rejected(self):
        with pytest.raises(ValueError):
            train_embeddings(KnowledgeBase(["a"], [], []), NepConfig(), dim=4)


class TestEmbedEntity:
    def test_known_entity_bitwise(self):
        table = toy_table()
        vec = embed_entity("oslo", ["alpha"], table)
        assert vec.tobytes() == table.matrix[3].tobytes()

    def test_unknown_falls_back_to_text_vector(self):
        table = toy_table()
        vec = embed_entity("Atlantis", ["alpha", "beta"], table)
        np.testing.assert_allclose(vec, text_vector(["alpha", "beta"], table), rtol=1e-6)

    def test_two_unknowns_share_context_vector(self):
        table = toy_table()
        a = embed_entity("Atlantis", ["alpha", "beta"], table)
        b = embed_entity("El Dorado", ["alpha", "beta"], table)
        assert a.tobytes() == b.tobytes()


class TestMentionContext:
    def test_sentence_selected(self):
        words = "the bridge opened . Maria Chen spoke in Oslo . crowds came".split()
        ctx = mention_context(words, 4, 6)
        assert ctx == ["Maria", "Chen", "spoke", "in", "Oslo"]

    def test_window_fallback(self):
        words = ["w"] * 200
        ctx = mention_context(words, 100, 101, window=50)
        assert len(ctx) == 101


class TestIo:
    def test_kb_roundtrip(self, tmp_path):
        kb = make_mini_kb(n_entities=4, n_docs=6, seed=3)
        save_kb(kb, tmp_path / "kb.jsonl")
        back = load_kb(tmp_path / "kb.jsonl")
        assert back.entities == kb.entities
        assert back.edges == kb.edges
        assert back.documents[2].words == kb.documents[2].words
        assert back.documents[2].anchors == kb.documents[2].anchors

    def test_embeddings_roundtrip_bitwise(self, tmp_path):
        table = toy_table(seed=11)
        save_embeddings(table, tmp_path / "emb.jgve")
        back = load_embeddings(tmp_path / "emb.jgve")
        assert back.words == table.words
        assert back.entities == table.entities
        assert back.matrix.tobytes() == table.matrix.tobytes()
        assert back.fc_weight.tobytes() == table.fc_weight.tobytes()
        assert back.fc_bias.tobytes() == table.fc_bias.tobytes()
        assert back.unk.tobytes() == table.unk.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.jgve"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_embeddings(path)

    def test_kb_validation(self):
        with pytest.raises(ValueError, match="unknown entity"):
            KnowledgeBase(["a"], [("a", "b")], [])
        with pytest.raises(ValueError, match="out of range"):
            KnowledgeBase(["a"], [], [KbDocument(["x"], [(0, 2, "a")])])
