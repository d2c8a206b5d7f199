"""Joint word/entity vectors trained over a mini knowledge base.

Four objectives share one embedding space: a skip-gram model over
document words, a link model pulling connected entities together, an
anchor model predicting surrounding words from an entity, and a neural
entity predictor (NEP) scoring which entities appear in a text.  The
first three use log-sigmoid negative sampling with hand-written updates;
the NEP loss is a compute graph (softmax cross-entropy over the positive
entity plus sampled negatives), so its gradients can be verified by
finite differences.

A text is represented as the projected mean of its word vectors; that
same vector doubles as the embedding of entities missing from the table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .binio import (
    FormatError,
    expect_magic,
    read_f32_array,
    read_lp_str,
    read_u32,
    write_f32_array,
    write_lp_str,
    write_u32,
)

EMBEDDING_MAGIC = b"JGVE"
_WORD_PREFIX = "w:"
_ENTITY_PREFIX = "e:"
_UNK_ROW = "!unk"
_FC_BIAS_ROW = "!fc.b"
_FC_WEIGHT_ROW = "!fc.w."

_SENTENCE_ENDERS = {".", "!", "?"}


def normalize_entity(name: str) -> str:
    return " ".join(name.lower().split())


@dataclass
class KbDocument:
    words: list[str]
    anchors: list[tuple[int, int, str]]  # (start, end, entity id)


@dataclass
class KnowledgeBase:
    entities: list[str]
    edges: list[tuple[str, str]]
    documents: list[KbDocument]

    def __post_init__(self):
        known = set(self.entities)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise ValueError(f"edge ({a!r}, {b!r}) references unknown entity")
        for i, doc in enumerate(self.documents):
            for start, end, entity in doc.anchors:
                if not 0 <= start < end <= len(doc.words):
                    raise ValueError(f"document {i}: anchor [{start},{end}) out of range")
                if entity not in known:
                    raise ValueError(f"document {i}: anchor references unknown entity {entity!r}")

    def word_vocab(self) -> list[str]:
        freq: dict[str, int] = {}
        for doc in self.documents:
            for w in doc.words:
                freq[w] = freq.get(w, 0) + 1
        return sorted(freq, key=lambda w: (-freq[w], w))


def load_kb(path) -> KnowledgeBase:
    entities, edges, documents = [], [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: bad JSON: {exc}") from None
        if "entity" in obj:
            entities.append(obj["entity"])
        elif "edge" in obj:
            a, b = obj["edge"]
            edges.append((a, b))
        elif "doc" in obj:
            doc = obj["doc"]
            anchors = [(int(a["start"]), int(a["end"]), a["entity"])
                       for a in doc.get("anchors", [])]
            documents.append(KbDocument(list(doc["words"]), anchors))
        else:
            raise ValueError(f"{path}:{lineno}: unknown record kind {sorted(obj)}")
    return KnowledgeBase(entities, edges, documents)


def save_kb(kb: KnowledgeBase, path):
    lines = [json.dumps({"entity": e}) for e in kb.entities]
    lines += [json.dumps({"edge": list(edge)}) for edge in kb.edges]
    for doc in kb.documents:
        anchors = [{"start": s, "end": e, "entity": ent} for s, e, ent in doc.anchors]
        lines.append(json.dumps({"doc": {"words": doc.words, "anchors": anchors}}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class EmbeddingTable:
    """Lookup from words and entities to a shared vector space.

    Also carries the fully connected text projection (weights, bias) and
    the shared vector for unknown words.
    """

    def __init__(self, dim, words, entities, matrix, fc_weight, fc_bias, unk):
        self.dim = dim
        self.words = list(words)
        self.entities = list(entities)
        self.matrix = matrix  # rows: words then entities
        self.fc_weight = fc_weight
        self.fc_bias = fc_bias
        self.unk = unk
        self._word_idx = {w: i for i, w in enumerate(self.words)}
        self._entity_idx = {normalize_entity(e): len(self.words) + i
                            for i, e in enumerate(self.entities)}

    def word_vector(self, word: str) -> np.ndarray:
        idx = self._word_idx.get(word.lower())
        return self.matrix[idx] if idx is not None else self.unk

    def entity_vector(self, name: str) -> np.ndarray | None:
        idx = self._entity_idx.get(normalize_entity(name))
        return self.matrix[idx] if idx is not None else None

    def has_entity(self, name: str) -> bool:
        return normalize_entity(name) in self._entity_idx


def text_vector(words, table: EmbeddingTable) -> np.ndarray:
    """Projected mean of the word vectors; unknown words use the UNK row."""
    words = list(words)
    if not words:
        raise ValueError("cannot embed an empty text")
    mean = np.mean([table.word_vector(w) for w in words], axis=0)
    return mean @ table.fc_weight + table.fc_bias[0]


def nep_distribution(text_words, candidates, table: EmbeddingTable) -> np.ndarray:
    """Softmax over candidate entities of their match with the text vector."""
    vt = text_vector(text_words, table)
    scores = []
    for name in candidates:
        vec = table.entity_vector(name)
        if vec is None:
            raise ValueError(f"candidate {name!r} is not a known entity")
        scores.append(float(vec @ vt))
    scores = np.array(scores, dtype=np.float64)
    scores -= scores.max()
    exp = np.exp(scores)
    return exp / exp.sum()


def nep_probability(entity, text_words, candidates, table: EmbeddingTable) -> float:
    candidates = list(candidates)
    norm = normalize_entity(entity)
    matches = [i for i, c in enumerate(candidates) if normalize_entity(c) == norm]
    if not matches:
        raise ValueError(f"entity {entity!r} not among the candidates")
    return float(nep_distribution(text_words, candidates, table)[matches[0]])


def embed_entity(surface, context_words, table: EmbeddingTable) -> np.ndarray:
    """Table vector for known entities, text vector of the context otherwise."""
    vec = table.entity_vector(surface)
    if vec is not None:
        return vec.copy()
    return text_vector(context_words, table).astype(np.float32)


def mention_context(words, start, end, window=50) -> list[str]:
    """Words of the sentence containing [start, end), else a +/-window slice.

    Unbounded "sentences" (no punctuation nearby) fall back to the window
    so the context stays local to the mention.
    """
    left = start
    while left > 0 and words[left - 1] not in _SENTENCE_ENDERS:
        left -= 1
    right = end
    while right < len(words) and words[right] not in _SENTENCE_ENDERS:
        right += 1
    sentence = [w for w in words[left:right] if w not in _SENTENCE_ENDERS]
    if sentence and len(sentence) <= 2 * window + (end - start):
        return sentence
    lo = max(0, start - window)
    hi = min(len(words), end + window)
    return [w for w in words[lo:hi] if w not in _SENTENCE_ENDERS] or list(words[start:end])


@dataclass
class NepConfig:
    negatives: int = 50
    window: int = 5
    lr: float = 0.025
    epochs: int = 10
    seed: int = 0
    sampling_negatives: int = 5  # for the skip-gram / link / anchor objectives

    def __post_init__(self):
        if self.negatives < 1:
            raise ValueError("need at least one NEP negative")


def build_nep_loss_graph(n_words: int, n_candidates: int, dim: int) -> ad.ComputeGraph:
    """Cross-entropy of the positive entity (index 0) against sampled rivals.

    Leaves: word_vecs (n_words, dim), cand_vecs (n_candidates, dim),
    fc_weight (dim, dim), fc_bias (1, dim); all parameters.
    """
    g = ad.ComputeGraph()
    words = g.leaf("word_vecs", param=True)
    cands = g.leaf("cand_vecs", param=True)
    fc_w = g.leaf("fc_weight", param=True)
    fc_b = g.leaf("fc_bias", param=True)
    target = g.leaf("target", integer=True)
    mean = ad.reshape(ad.mean(words, axis=0), (1, dim))
    vt = ad.add(ad.matmul(mean, fc_w), fc_b)
    logits = ad.matmul(vt, ad.transpose_last_two(cands))
    ad.cross_entropy(logits, target)
    return g


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _neg_sampling_update(input_vecs, in_idx, output_vecs, pos_idx, neg_idx, lr):
    """One SGNS update; returns the loss contribution."""
    v = input_vecs[in_idx]
    loss = 0.0
    grad_v = np.zeros_like(v)
    for idx, sign in [(pos_idx, 1.0)] + [(j, -1.0) for j in neg_idx]:
        u = output_vecs[idx]
        score = _sigmoid(sign * float(v @ u))
        loss -= np.log(max(score, 1e-12))
        coeff = (score - 1.0) * sign
        grad_v += coeff * u
        output_vecs[idx] -= lr * coeff * v
    input_vecs[in_idx] -= lr * grad_v
    return loss


class _UnigramSampler:
    """Draws negatives from the 0.75-power unigram distribution."""

    def __init__(self, counts):
        weights = np.asarray(counts, dtype=np.float64) ** 0.75
        self.cdf = np.cumsum(weights / weights.sum())

    def draw(self, rng, k):
        return np.searchsorted(self.cdf, rng.random(k))


def sample_nep_negatives(rng, n_entities: int, anchored, k: int) -> np.ndarray:
    """Up to k entity indices outside the anchored set, without replacement."""
    anchored = set(anchored)
    pool = np.array([i for i in range(n_entities) if i not in anchored], dtype=int)
    k = min(k, pool.size)
    if k == 0:
        return np.empty(0, dtype=int)
    return rng.choice(pool, size=k, replace=False)


def train_embeddings(kb: KnowledgeBase, cfg: NepConfig, dim: int = 300) -> EmbeddingTable:
    """Jointly optimize the four objectives; deterministic for a fixed seed."""
    if not kb.documents or not kb.edges:
        raise ValueError("knowledge base needs at least one document and one edge")
    rng = np.random.default_rng(cfg.seed)
    words = kb.word_vocab()
    entities = sorted(kb.entities)
    n_words, n_entities = len(words), len(entities)
    word_idx = {w: i for i, w in enumerate(words)}
    entity_idx = {e: i for i, e in enumerate(entities)}

    bound = 0.5 / dim
    matrix = rng.uniform(-bound, bound, size=(n_words + n_entities, dim)).astype(np.float32)
    out_words = np.zeros((n_words, dim), dtype=np.float32)
    out_entities = np.zeros((n_entities, dim), dtype=np.float32)
    fc_weight = rng.uniform(-1 / np.sqrt(dim), 1 / np.sqrt(dim), size=(dim, dim)).astype(np.float32)
    fc_bias = np.zeros((1, dim), dtype=np.float32)
    unk = rng.uniform(-bound, bound, size=dim).astype(np.float32)

    counts = np.zeros(n_words)
    for doc in kb.documents:
        for w in doc.words:
            counts[word_idx[w]] += 1
    word_sampler = _UnigramSampler(counts)

    ent_rows = matrix[n_words:]
    nep_graphs: dict[tuple[int, int], ad.ComputeGraph] = {}
    epoch_losses = []

    for _ in range(cfg.epochs):
        total = 0.0
        for doc in kb.documents:
            ids = [word_idx[w] for w in doc.words]
            anchored = sorted({entity_idx[e] for _, _, e in doc.anchors})

            # (i) skip-gram over words
            for center in range(len(ids)):
                lo = max(0, center - cfg.window)
                hi = min(len(ids), center + cfg.window + 1)
                for ctx in range(lo, hi):
                    if ctx == center:
                        continue
                    negs = word_sampler.draw(rng, cfg.sampling_negatives)
                    total += _neg_sampling_update(
                        matrix, ids[center], out_words, ids[ctx], negs, cfg.lr)

            # (iii) words predicted from anchored entities
            for start, end, entity in doc.anchors:
                erow = n_words + entity_idx[entity]
                lo = max(0, start - cfg.window)
                hi = min(len(ids), end + cfg.window)
                for pos in list(range(lo, start)) + list(range(end, hi)):
                    negs = word_sampler.draw(rng, cfg.sampling_negatives)
                    total += _neg_sampling_update(
                        matrix, erow, out_words, ids[pos], negs, cfg.lr)

            # (iv) neural entity predictor
            for ent in anchored:
                negs = sample_nep_negatives(rng, n_entities, anchored, cfg.negatives)
                cand_rows = np.concatenate(([ent], negs)).astype(int)
                key = (len(ids), len(cand_rows))
                graph = nep_graphs.get(key)
                if graph is None:
                    graph = build_nep_loss_graph(len(ids), len(cand_rows), dim)
                    nep_graphs[key] = graph
                bindings = {
                    "word_vecs": matrix[ids],
                    "cand_vecs": ent_rows[cand_rows],
                    "fc_weight": fc_weight,
                    "fc_bias": fc_bias,
                    "target": np.array([0]),
                }
                total += float(graph.evaluate(bindings))
                grads = graph.backward()
                np.subtract.at(matrix, ids, cfg.lr * grads["word_vecs"])
                np.subtract.at(ent_rows, cand_rows, cfg.lr * grads["cand_vecs"])
                fc_weight -= cfg.lr * grads["fc_weight"]
                fc_bias -= cfg.lr * grads["fc_bias"]

        # (ii) relatedness of linked entity pairs
        for a, b in kb.edges:
            ia, ib = entity_idx[a], entity_idx[b]
            for center, ctx in ((ia, ib), (ib, ia)):
                negs = rng.integers(0, n_entities, size=cfg.sampling_negatives)
                total += _neg_sampling_update(
                    ent_rows, center, out_entities, ctx, negs, cfg.lr)
        epoch_losses.append(total)

    table = EmbeddingTable(dim, words, entities, matrix, fc_weight, fc_bias, unk)
    table.epoch_losses = epoch_losses
    return table


def save_embeddings(table: EmbeddingTable, path):
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        write_u32(fh, table.dim)
        rows = []
        for i, w in enumerate(table.words):
            rows.append((_WORD_PREFIX + w, table.matrix[i]))
        for i, e in enumerate(table.entities):
            rows.append((_ENTITY_PREFIX + e, table.matrix[len(table.words) + i]))
        rows.append((_UNK_ROW, table.unk))
        rows.append((_FC_BIAS_ROW, table.fc_bias[0]))
        for i in range(table.dim):
            rows.append((f"{_FC_WEIGHT_ROW}{i}", table.fc_weight[i]))
        write_u32(fh, len(rows))
        for symbol, vec in rows:
            write_lp_str(fh, symbol)
            write_f32_array(fh, vec)


def load_embeddings(path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        expect_magic(fh, EMBEDDING_MAGIC)
        dim = read_u32(fh)
        count = read_u32(fh)
        words, word_vecs = [], []
        entities, ent_vecs = [], []
        unk = None
        fc_bias = None
        fc_rows: dict[int, np.ndarray] = {}
        for _ in range(count):
            symbol = read_lp_str(fh)
            vec = read_f32_array(fh, dim)
            if symbol.startswith(_WORD_PREFIX):
                words.append(symbol[len(_WORD_PREFIX):])
                word_vecs.append(vec)
            elif symbol.startswith(_ENTITY_PREFIX):
                entities.append(symbol[len(_ENTITY_PREFIX):])
                ent_vecs.append(vec)
            elif symbol == _UNK_ROW:
                unk = vec
            elif symbol == _FC_BIAS_ROW:
                fc_bias = vec.reshape(1, dim)
            elif symbol.startswith(_FC_WEIGHT_ROW):
                fc_rows[int(symbol[len(_FC_WEIGHT_ROW):])] = vec
            else:
                raise FormatError(f"unknown embedding row symbol {symbol!r}")
        if unk is None or fc_bias is None or len(fc_rows) != dim:
            raise FormatError("embedding file is missing projection rows")
        matrix = np.vstack(word_vecs + ent_vecs) if (word_vecs or ent_vecs) \
            else np.zeros((0, dim), dtype=np.float32)
        fc_weight = np.vstack([fc_rows[i] for i in range(dim)])
        return EmbeddingTable(dim, words, entities, matrix, fc_weight, fc_bias, unk)
