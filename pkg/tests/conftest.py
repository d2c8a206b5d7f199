import numpy as np
import pytest

from newscap.bpe import BASE_SIZE, Tokenizer
from newscap.dataio import DatasetRecord
from newscap.embeddings import EmbeddingTable
from newscap.fixtures import make_news_dataset
from newscap.model import ModelConfig, prepare_example
from newscap.resources import default_annotator


def toy_embedding_table(dim, seed=0, entities=()):
    rng = np.random.default_rng(seed)
    entities = list(entities)
    matrix = rng.normal(scale=0.3, size=(len(entities), dim)).astype(np.float32)
    fc_w = (np.eye(dim) + rng.normal(scale=0.05, size=(dim, dim))).astype(np.float32)
    fc_b = np.zeros((1, dim), dtype=np.float32)
    unk = rng.normal(scale=0.3, size=dim).astype(np.float32)
    return EmbeddingTable(dim, [], entities, matrix, fc_w, fc_b, unk)


TINY = dict(d_image=8, d_text=16, d_entity=12, d_model=16, heads=2,
            encoder_blocks=1, ff_mult=2, head_hidden=16, window=16,
            text_cap=30, max_len=12, max_entities=8)


@pytest.fixture(scope="session")
def small_world():
    """24 fixture records prepared for a small model configuration."""
    records, features = make_news_dataset(24, seed=5, image_dim=8)
    corpus = [r["article"] for r in records] + [r["caption"] for r in records]
    tokenizer = Tokenizer.train(corpus, BASE_SIZE + 80)
    cfg = ModelConfig(vocab_size=tokenizer.vocab.size, **TINY)
    annotator = default_annotator()
    table = toy_embedding_table(cfg.d_entity)
    examples = [
        prepare_example(
            DatasetRecord(id=r["id"], article=r["article"], caption=r["caption"],
                          split=r["split"], image_feature=r["image_feature"]),
            tokenizer, annotator, table, features, cfg)
        for r in records
    ]
    return {"cfg": cfg, "examples": examples, "tokenizer": tokenizer,
            "annotator": annotator, "table": table, "features": features,
            "records": records}
