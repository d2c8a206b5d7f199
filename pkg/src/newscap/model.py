"""Encoder assembly, component prediction head, and the hybrid decoder.

The decoder embeds the partial caption, runs three shared blocks and a
fifth-way parallel fourth block, then blends the five component-specific
outputs with the guidance weights: final = (1/5) * sum_i w_i * out_i.
Every block applies masked self-attention followed by three parallel
cross-attentions (image / text / entities) whose outputs are
concatenated, projected back down, and pushed through a feed-forward
sublayer, with residuals and layer norm around each stage.

Training builds one end-to-end loss graph per example (text encoder
included, so encoder gradients flow from both the caption loss and the
component head); inference encodes the document once and reuses cached
per-shape decoding graphs.  The fourth block's five parameter sets are
stored stacked on a leading axis so the parallel subblocks run as one
batched computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import bpe
from .annotate import tag_entities, tag_pos, word_tokenize
from .dataio import load_checkpoint, save_checkpoint
from .embeddings import embed_entity, mention_context
from .optim import AdamState, adam_step
from .spans import SpanLayout, merge_spans, split_spans
from .template import ComponentVector, extract_components

DECODER_BLOCKS = 4
SUBBLOCKS = 5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_image: int = 64
    d_text: int = 64
    d_entity: int = 64
    d_model: int = 64
    heads: int = 4
    encoder_blocks: int = 1
    ff_mult: int = 2
    head_hidden: int = 64
    window: int = 512
    text_cap: int = 1000
    max_len: int = 50
    max_entities: int = 32
    component_loss_weight: float = 1.0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.d_text % self.heads != 0:
            raise ValueError(f"d_text {self.d_text} not divisible by {self.heads} heads")
        if self.window < 1 or self.text_cap < self.window:
            raise ValueError("need window >= 1 and text_cap >= window")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class PreparedExample:
    """A record reduced to numeric model inputs."""

    id: str
    caption_text: str
    caption_ids: np.ndarray          # content token ids, no BOS/EOS
    span_ids: list[np.ndarray]       # article BPE ids per reading window
    layout: SpanLayout
    image: np.ndarray                # (n_img, d_image)
    entities: np.ndarray             # (n_ent, d_entity)
    components: np.ndarray           # (5,) oracle binary


@dataclass
class EncodedDocument:
    image: np.ndarray     # (n_img, d_image)
    text: np.ndarray      # (covered, d_text), merged over reading windows
    entities: np.ndarray  # (n_ent, d_entity)


@dataclass
class DecoderState:
    token_ids: list[int] = field(default_factory=lambda: [bpe.BOS])
    u_blocks: list[np.ndarray] | None = None
    u_sub: np.ndarray | None = None   # (5, n, d_model)
    u_bar: np.ndarray | None = None   # (n, d_model)


# ---------------------------------------------------------------------------
# parameters

def _param_specs(cfg: ModelConfig) -> dict[str, tuple]:
    specs: dict[str, tuple] = {}

    def mat(name, *shape):
        specs[name] = ("mat", shape)

    def table(name, rows, dim):
        specs[name] = ("table", (rows, dim))

    def zeros(name, *shape):
        specs[name] = ("zeros", shape)

    def ones(name, *shape):
        specs[name] = ("ones", shape)

    def block(prefix, d, ff, stacked):
        lead = (SUBBLOCKS,) if stacked else ()
        bias_lead = (SUBBLOCKS, 1) if stacked else ()
        for attn in ("self", "cross_img", "cross_txt", "cross_ent"):
            for w in ("wq", "wk", "wv", "wo"):
                mat(f"{prefix}.{attn}.{w}", *lead, d, d)
        mat(f"{prefix}.merge.w", *lead, 3 * d, d)
        zeros(f"{prefix}.merge.b", *bias_lead, d)
        mat(f"{prefix}.ff.w1", *lead, d, ff)
        zeros(f"{prefix}.ff.b1", *bias_lead, ff)
        mat(f"{prefix}.ff.w2", *lead, ff, d)
        zeros(f"{prefix}.ff.b2", *bias_lead, d)
        for ln in ("ln1", "ln2", "ln3"):
            ones(f"{prefix}.{ln}.g", *bias_lead, d)
            zeros(f"{prefix}.{ln}.b", *bias_lead, d)

    d, dt = cfg.d_model, cfg.d_text
    table("dec.emb", cfg.vocab_size, d)
    table("dec.pos", cfg.max_len + 1, d)
    table("enc.emb", cfg.vocab_size, dt)
    table("enc.pos", cfg.window, dt)
    for i in range(cfg.encoder_blocks):
        for w in ("wq", "wk", "wv", "wo"):
            mat(f"enc.b{i}.self.{w}", dt, dt)
        mat(f"enc.b{i}.ff.w1", dt, cfg.ff_mult * dt)
        zeros(f"enc.b{i}.ff.b1", cfg.ff_mult * dt)
        mat(f"enc.b{i}.ff.w2", cfg.ff_mult * dt, dt)
        zeros(f"enc.b{i}.ff.b2", dt)
        for ln in ("ln1", "ln2"):
            ones(f"enc.b{i}.{ln}.g", dt)
            zeros(f"enc.b{i}.{ln}.b", dt)

    mat("proj.image.w", cfg.d_image, d)
    mat("proj.text.w", dt, d)
    mat("proj.entity.w", cfg.d_entity, d)

    head_in = cfg.d_image + dt + cfg.d_entity
    mat("head.w1", head_in, cfg.head_hidden)
    zeros("head.b1", cfg.head_hidden)
    mat("head.w2", cfg.head_hidden, SUBBLOCKS)
    zeros("head.b2", SUBBLOCKS)

    ff = cfg.ff_mult * d
    for i in range(1, DECODER_BLOCKS):
        block(f"dec.b{i}", d, ff, stacked=False)
    block(f"dec.b{DECODER_BLOCKS}", d, ff, stacked=True)

    mat("out.ff.w", d, d)
    zeros("out.ff.b", d)
    mat("out.proj.w", d, cfg.vocab_size)
    zeros("out.proj.b", cfg.vocab_size)
    return specs


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, name-sorted for determinism."""
    params = {}
    for name, (kind, shape) in sorted(_param_specs(cfg).items()):
        if kind == "zeros":
            params[name] = np.zeros(shape, dtype=np.float32)
        elif kind == "ones":
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            fan_in = shape[-1] if kind == "table" else shape[-2]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return params


# ---------------------------------------------------------------------------
# graph construction

class _Builder:
    def __init__(self):
        self.g = ad.ComputeGraph()
        self._leaves: dict[str, ad.Node] = {}

    def param(self, name):
        if name not in self._leaves:
            self._leaves[name] = self.g.leaf(name, param=True)
        return self._leaves[name]

    def data(self, name, integer=False):
        if name not in self._leaves:
            self._leaves[name] = self.g.leaf(name, integer=integer)
        return self._leaves[name]


def _mha(b, cfg, prefix, x, kv, n_q, n_kv, stacked, mask=None, width=None):
    d = cfg.d_model if width is None else width
    H = cfg.heads
    dh = d // H
    q = ad.matmul(x, b.param(f"{prefix}.wq"))
    k = ad.matmul(kv, b.param(f"{prefix}.wk"))
    v = ad.matmul(kv, b.param(f"{prefix}.wv"))
    if stacked:
        def split(t, rows):
            return ad.transpose(ad.reshape(t, (SUBBLOCKS, rows, H, dh)), (0, 2, 1, 3))

        def join(t, rows):
            return ad.reshape(ad.transpose(t, (0, 2, 1, 3)), (SUBBLOCKS, rows, d))
    else:
        def split(t, rows):
            return ad.transpose(ad.reshape(t, (rows, H, dh)), (1, 0, 2))

        def join(t, rows):
            return ad.reshape(ad.transpose(t, (1, 0, 2)), (rows, d))
    ctx = ad.scaled_dot_attention(split(q, n_q), split(k, n_kv), split(v, n_kv), dh, mask)
    return ad.matmul(join(ctx, n_q), b.param(f"{prefix}.wo"))


def _layer_norm(b, prefix, x):
    return ad.layer_norm(x, b.param(f"{prefix}.g"), b.param(f"{prefix}.b"))


def _feed_forward(b, prefix, x):
    h = ad.relu(ad.add(ad.matmul(x, b.param(f"{prefix}.w1")), b.param(f"{prefix}.b1")))
    return ad.add(ad.matmul(h, b.param(f"{prefix}.w2")), b.param(f"{prefix}.b2"))


def _decoder_block(b, cfg, prefix, x, kv_img, kv_txt, kv_ent, dims, stacked, mask):
    n_tok, n_img, n_txt, n_ent = dims
    h = _layer_norm(b, f"{prefix}.ln1",
                    ad.add(x, _mha(b, cfg, f"{prefix}.self", x, x, n_tok, n_tok,
                                   stacked, mask)))
    c_img = _mha(b, cfg, f"{prefix}.cross_img", h, kv_img, n_tok, n_img, stacked)
    c_txt = _mha(b, cfg, f"{prefix}.cross_txt", h, kv_txt, n_tok, n_txt, stacked)
    if kv_ent is None:
        # no entity mentions: this cross-attention contributes zeros
        shape = (SUBBLOCKS, n_tok, cfg.d_model) if stacked else (n_tok, cfg.d_model)
        c_ent = b.g.const(np.zeros(shape, dtype=np.float32))
    else:
        c_ent = _mha(b, cfg, f"{prefix}.cross_ent", h, kv_ent, n_tok, n_ent, stacked)
    merged = ad.add(ad.matmul(ad.concat([c_img, c_txt, c_ent], axis=-1),
                              b.param(f"{prefix}.merge.w")),
                    b.param(f"{prefix}.merge.b"))
    h2 = _layer_norm(b, f"{prefix}.ln2", ad.add(h, merged))
    return _layer_norm(b, f"{prefix}.ln3",
                       ad.add(h2, _feed_forward(b, f"{prefix}.ff", h2)))


def blend_component_outputs(graph, weights_node, stacked_node):
    """(1/5) * sum_i w_i * out_i over the stacked (5, n, d) subblock outputs."""
    w = ad.reshape(weights_node, (SUBBLOCKS, 1, 1))
    return ad.scale(ad.sum_(ad.mul(stacked_node, w), axis=0), 1.0 / SUBBLOCKS)


def _text_encoder(b, cfg, layout: SpanLayout):
    outs = []
    for si, (start, end) in enumerate(layout.spans):
        m = end - start
        ids = b.data(f"span{si}_ids", integer=True)
        x = ad.add(ad.lookup(b.param("enc.emb"), ids),
                   ad.lookup(b.param("enc.pos"), b.g.const(np.arange(m))))
        for i in range(cfg.encoder_blocks):
            pre = f"enc.b{i}"
            h = _layer_norm(b, f"{pre}.ln1",
                            ad.add(x, _mha(b, cfg, f"{pre}.self", x, x, m, m, False,
                                           width=cfg.d_text)))
            x = _layer_norm(b, f"{pre}.ln2",
                            ad.add(h, _feed_forward(b, f"{pre}.ff", h)))
        outs.append(x)
    if len(outs) == 1:
        return outs[0]
    (start0, end0), (start1, end1) = layout.spans
    head = ad.slice_rows(outs[0], 0, start1)
    overlap = ad.scale(ad.add(ad.slice_rows(outs[0], start1, end0),
                              ad.slice_rows(outs[1], 0, end0 - start1)), 0.5)
    tail = ad.slice_rows(outs[1], end0 - start1, end1 - start1)
    return ad.concat([head, overlap, tail], axis=0)


def _prediction_head(b, cfg, img, txt, ent, n_ent):
    pool_img = ad.reshape(ad.mean(img, axis=0), (1, cfg.d_image))
    pool_txt = ad.reshape(ad.mean(txt, axis=0), (1, cfg.d_text))
    if ent is None or n_ent == 0:
        pool_ent = b.g.const(np.zeros((1, cfg.d_entity), dtype=np.float32))
    else:
        pool_ent = ad.reshape(ad.mean(ent, axis=0), (1, cfg.d_entity))
    h = ad.relu(ad.add(ad.matmul(ad.concat([pool_img, pool_txt, pool_ent], axis=-1),
                                 b.param("head.w1")), b.param("head.b1")))
    return ad.reshape(ad.add(ad.matmul(h, b.param("head.w2")), b.param("head.b2")),
                      (SUBBLOCKS,))


def _decoder(b, cfg, n_tok, img, txt, ent, dims):
    ids = b.data("cap_in", integer=True)
    x = ad.add(ad.lookup(b.param("dec.emb"), ids),
               ad.lookup(b.param("dec.pos"), b.g.const(np.arange(n_tok))))
    mask = b.g.const(np.triu(np.full((n_tok, n_tok), ad.MASK_FILL, dtype=np.float32), k=1))
    kv_img = ad.matmul(img, b.param("proj.image.w"))
    kv_txt = ad.matmul(txt, b.param("proj.text.w"))
    kv_ent = None if ent is None else ad.matmul(ent, b.param("proj.entity.w"))
    blocks = []
    for i in range(1, DECODER_BLOCKS):
        x = _decoder_block(b, cfg, f"dec.b{i}", x, kv_img, kv_txt, kv_ent,
                           dims, stacked=False, mask=mask)
        blocks.append(x)
    stacked = _decoder_block(b, cfg, f"dec.b{DECODER_BLOCKS}", x, kv_img, kv_txt,
                             kv_ent, dims, stacked=True, mask=mask)
    blended = blend_component_outputs(b.g, b.data("comp_guide"), stacked)
    h = ad.relu(ad.add(ad.matmul(blended, b.param("out.ff.w")), b.param("out.ff.b")))
    logits = ad.add(ad.matmul(h, b.param("out.proj.w")), b.param("out.proj.b"))
    return logits, blocks, stacked, blended


_GRAPH_CACHE: dict[tuple, tuple] = {}
_CACHE_LIMIT = 4096


def _build_graph(cfg: ModelConfig, mode: str, n_tok, n_img, n_ent, text_key):
    key = (cfg, mode, n_tok, n_img, n_ent, text_key)
    cached = _GRAPH_CACHE.get(key)
    if cached is not None:
        return cached
    if len(_GRAPH_CACHE) >= _CACHE_LIMIT:
        _GRAPH_CACHE.pop(next(iter(_GRAPH_CACHE)))
    b = _Builder()
    nodes: dict[str, ad.Node] = {}

    if text_key[0] == "spans":
        layout = split_spans(text_key[1], cfg.window, cfg.text_cap)
        txt = ad.mul(_text_encoder(b, cfg, layout), b.data("text_scale"))
        n_txt = layout.covered
    else:
        n_txt = text_key[1]
        txt = b.data("text_feats")
    img = ad.mul(b.data("image_raw"), b.data("image_scale")) \
        if text_key[0] == "spans" else b.data("image_raw")
    ent = b.data("entity_raw") if n_ent > 0 else None

    if mode in ("train", "comp"):
        alpha_logits = _prediction_head(b, cfg, img, txt, ent, n_ent)
        nodes["alpha"] = ad.sigmoid(alpha_logits)

    if mode == "comp":
        b.g.root = nodes["alpha"]
    elif mode == "encode":
        b.g.root = txt
        nodes["text"] = txt
    else:
        dims = (n_tok, n_img, n_txt, n_ent)
        logits, blocks, stacked, blended = _decoder(b, cfg, n_tok, img, txt, ent, dims)
        nodes.update({f"u{i + 1}": node for i, node in enumerate(blocks)})
        nodes["u_sub"] = stacked
        nodes["u_bar"] = blended
        if mode == "dist":
            nodes["dist"] = ad.softmax(logits)
            b.g.root = nodes["dist"]
        elif mode == "decoder_loss":
            nodes["ce"] = ad.cross_entropy(logits, b.data("cap_out", integer=True))
            b.g.root = nodes["ce"]
        elif mode == "train":
            nodes["ce"] = ad.cross_entropy(logits, b.data("cap_out", integer=True))
            nodes["bce"] = ad.sigmoid_bce(alpha_logits, b.data("comp_target"))
            total = ad.add(nodes["ce"], ad.scale(nodes["bce"], cfg.component_loss_weight))
            nodes["total"] = total
            b.g.root = total
        else:
            raise ValueError(f"unknown graph mode {mode!r}")

    _GRAPH_CACHE[key] = (b.g, nodes)
    return b.g, nodes


# ---------------------------------------------------------------------------
# record preparation

def prepare_example(record, tokenizer, annotator, table, features, cfg,
                    gold=None) -> PreparedExample:
    """Tokenize, annotate, and embed one dataset record.

    gold, when given, is the validated annotation entry for this record
    (from read_annotations) and overrides the built-in tagger.
    """
    caption_words = word_tokenize(record.caption)
    if gold and "caption" in gold:
        cap_spans, cap_tags = gold["caption"]
    else:
        cap_spans = tag_entities(caption_words, annotator.gazetteer)
        cap_tags = tag_pos(caption_words, annotator.lexicon)
    components = extract_components(cap_spans, cap_tags).values

    caption_ids = np.array(tokenizer.encode(record.caption)[: cfg.max_len - 1],
                           dtype=np.int64)

    article_ids = tokenizer.encode(record.article)
    if not article_ids:
        raise ValueError(f"record {record.id!r}: empty article")
    layout = split_spans(len(article_ids), cfg.window, cfg.text_cap)
    arr = np.asarray(article_ids, dtype=np.int64)
    span_ids = [arr[start:end] for start, end in layout.spans]

    article_words = word_tokenize(record.article)
    if gold and "article" in gold:
        art_spans, _ = gold["article"]
    else:
        art_spans = tag_entities(article_words, annotator.gazetteer)
    vectors = []
    for span in art_spans[: cfg.max_entities]:
        context = mention_context(article_words, span.start, span.end)
        vectors.append(embed_entity(span.surface, context, table))
    entities = np.array(vectors, dtype=np.float32) if vectors \
        else np.zeros((0, table.dim), dtype=np.float32)
    if entities.shape[0] and entities.shape[1] != cfg.d_entity:
        raise ValueError(
            f"embedding dim {entities.shape[1]} != configured d_entity {cfg.d_entity}")

    if record.image_feature is None:
        raise ValueError(f"record {record.id!r}: no image feature reference")
    if not 0 <= record.image_feature < features.shape[0]:
        raise ValueError(
            f"record {record.id!r}: image feature row {record.image_feature} "
            f"outside matrix of {features.shape[0]} rows")
    image = features[record.image_feature].reshape(1, -1).astype(np.float32)
    if image.shape[1] != cfg.d_image:
        raise ValueError(f"feature dim {image.shape[1]} != configured d_image {cfg.d_image}")

    return PreparedExample(
        id=record.id, caption_text=record.caption, caption_ids=caption_ids,
        span_ids=span_ids, layout=layout, image=image, entities=entities,
        components=components,
    )


def _zeroed(flags):
    flags = frozenset(flags)
    unknown = flags - {"text", "image"}
    if unknown:
        raise ValueError(f"unknown zero-out flags {sorted(unknown)}")
    return flags


def _span_bindings(ex, flags):
    bindings = {f"span{si}_ids": ids for si, ids in enumerate(ex.span_ids)}
    bindings["image_raw"] = ex.image
    bindings["image_scale"] = np.array([0.0 if "image" in flags else 1.0], dtype=np.float32)
    bindings["text_scale"] = np.array([0.0 if "text" in flags else 1.0], dtype=np.float32)
    bindings["entity_raw"] = np.zeros_like(ex.entities) if "text" in flags else ex.entities
    return bindings


# ---------------------------------------------------------------------------
# spec operations

def encode_document(ex: PreparedExample, params, cfg, zero_out=()) -> EncodedDocument:
    """Assemble the document features, honoring zero-out ablations.

    Zeroing text blanks both the merged text features and the entity
    rows; shapes are always preserved.
    """
    flags = _zeroed(zero_out)
    graph, _ = _build_graph(cfg, "encode", 0, ex.image.shape[0], ex.entities.shape[0],
                            ("spans", ex.layout.covered))
    bindings = dict(params)
    bindings.update(_span_bindings(ex, flags))
    text = np.array(graph.evaluate(bindings))
    image = np.zeros_like(ex.image) if "image" in flags else ex.image.copy()
    entities = np.zeros_like(ex.entities) if "text" in flags else ex.entities.copy()
    return EncodedDocument(image=image, text=text, entities=entities)


def predict_components(doc: EncodedDocument, params, cfg) -> ComponentVector:
    graph, _ = _build_graph(cfg, "comp", 0, doc.image.shape[0],
                            doc.entities.shape[0], ("feats", doc.text.shape[0]))
    bindings = dict(params)
    bindings.update({"image_raw": doc.image, "text_feats": doc.text,
                     "entity_raw": doc.entities})
    values = np.array(graph.evaluate(bindings), dtype=np.float32)
    return ComponentVector(np.clip(values, 1e-7, 1 - 1e-7), oracle=False)


def decode_step(state: DecoderState, doc: EncodedDocument, components,
                params, cfg) -> np.ndarray:
    """Distribution over the next token given the state's prefix.

    Also refreshes the state's cached block outputs, the stacked
    component-specific outputs, and their blend.
    """
    if not state.token_ids:
        raise ValueError("decoder state must start with BOS")
    comp = np.asarray(components, dtype=np.float32).reshape(SUBBLOCKS)
    n = len(state.token_ids)
    graph, nodes = _build_graph(cfg, "dist", n, doc.image.shape[0],
                                doc.entities.shape[0], ("feats", doc.text.shape[0]))
    bindings = dict(params)
    bindings.update({
        "cap_in": np.asarray(state.token_ids, dtype=np.int64),
        "image_raw": doc.image, "text_feats": doc.text,
        "entity_raw": doc.entities, "comp_guide": comp,
    })
    dist = np.array(graph.evaluate(bindings))
    state.u_blocks = [np.array(graph.value(nodes[f"u{i}"])) for i in (1, 2, 3)]
    state.u_sub = np.array(graph.value(nodes["u_sub"]))
    state.u_bar = np.array(graph.value(nodes["u_bar"]))
    return dist[-1]


def teacher_forced_distributions(ex: PreparedExample, doc, components, params, cfg):
    """(n, K) next-token distributions over the whole gold prefix."""
    state = DecoderState(token_ids=[bpe.BOS] + ex.caption_ids.tolist())
    graph, nodes = _build_graph(cfg, "dist", len(state.token_ids), doc.image.shape[0],
                                doc.entities.shape[0], ("feats", doc.text.shape[0]))
    bindings = dict(params)
    bindings.update({
        "cap_in": np.asarray(state.token_ids, dtype=np.int64),
        "image_raw": doc.image, "text_feats": doc.text,
        "entity_raw": doc.entities,
        "comp_guide": np.asarray(components, dtype=np.float32),
    })
    return np.array(graph.evaluate(bindings))


def teacher_forced_accuracy(examples, params, cfg) -> float:
    """Share of gold next tokens ranked first under oracle guidance."""
    hits = total = 0
    for ex in examples:
        doc = encode_document(ex, params, cfg)
        dist = teacher_forced_distributions(ex, doc, ex.components, params, cfg)
        targets = np.concatenate([ex.caption_ids, [bpe.EOS]])
        hits += int((dist.argmax(axis=-1) == targets).sum())
        total += targets.size
    return hits / total


def train_step(batch, params, opt_state: AdamState, cfg, lr):
    """One optimizer update from a batch of examples.

    Teacher forcing conditions the decoder on the oracle component
    vector; the prediction head is trained against the same target with
    the configured loss weight.  Returns (caption loss, component loss,
    params).
    """
    if not batch:
        raise ValueError("empty batch")
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    ce_total = bce_total = 0.0
    for ex in batch:
        n_tok = len(ex.caption_ids) + 1
        graph, nodes = _build_graph(cfg, "train", n_tok, ex.image.shape[0],
                                    ex.entities.shape[0],
                                    ("spans", ex.layout.covered))
        bindings = dict(params)
        bindings.update(_span_bindings(ex, frozenset()))
        bindings.update({
            "cap_in": np.concatenate([[bpe.BOS], ex.caption_ids]).astype(np.int64),
            "cap_out": np.concatenate([ex.caption_ids, [bpe.EOS]]).astype(np.int64),
            "comp_guide": ex.components,
            "comp_target": ex.components,
        })
        graph.evaluate(bindings)
        ce_total += float(graph.value(nodes["ce"]))
        bce_total += float(graph.value(nodes["bce"]))
        for name, g in graph.backward().items():
            grads[name] += g
    scale = 1.0 / len(batch)
    for name in grads:
        grads[name] *= scale
    adam_step(params, grads, opt_state, lr)
    return ce_total * scale, bce_total * scale, params


def train_model(examples, cfg, epochs, lr, batch_size=8, seed=0,
                params=None, opt_state=None, log=None):
    """Epoch loop over prepared examples; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(cfg, rng)
    if opt_state is None:
        opt_state = AdamState.init(params)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(examples))
        ce_sum = bce_sum = 0.0
        n_batches = 0
        for start in range(0, len(examples), batch_size):
            batch = [examples[i] for i in order[start:start + batch_size]]
            ce, bce, params = train_step(batch, params, opt_state, cfg, lr)
            ce_sum += ce
            bce_sum += bce
            n_batches += 1
        history.append((ce_sum / n_batches, bce_sum / n_batches))
        if log:
            log(epoch, history[-1])
    return params, opt_state, history


def generate(ex: PreparedExample, params, cfg, mode="auto", manual_components=None,
             zero_out=(), max_len=None, beam=1) -> list[int]:
    """Caption token ids (no BOS/EOS) for one example.

    mode picks the guidance source: predicted probabilities (auto), the
    gold caption's components (oracle), or caller-supplied weights
    (manual).  Greedy decoding by default; beam > 1 ranks finished
    hypotheses by length-normalized log-probability.
    """
    max_len = cfg.max_len if max_len is None else min(max_len, cfg.max_len)
    doc = encode_document(ex, params, cfg, zero_out)
    if mode == "auto":
        comp = predict_components(doc, params, cfg).values
    elif mode == "oracle":
        comp = ex.components
    elif mode == "manual":
        comp = np.asarray(manual_components, dtype=np.float32).reshape(-1)
        if comp.shape != (SUBBLOCKS,) or np.any(comp < 0) or np.any(comp > 1):
            raise ValueError("manual component weights must be 5 values in [0, 1]")
    else:
        raise ValueError(f"unknown generation mode {mode!r}")

    if beam <= 1:
        state = DecoderState()
        out = []
        for _ in range(max_len):
            dist = decode_step(state, doc, comp, params, cfg)
            token = int(dist.argmax())
            if token == bpe.EOS:
                break
            out.append(token)
            state.token_ids.append(token)
        return out

    hyps = [([bpe.BOS], 0.0, False)]
    for _ in range(max_len):
        if all(done for _, _, done in hyps):
            break
        candidates = []
        for ids, logp, done in hyps:
            if done:
                candidates.append((ids, logp, True))
                continue
            state = DecoderState(token_ids=list(ids))
            dist = decode_step(state, doc, comp, params, cfg)
            top = np.argsort(dist)[::-1][:beam]
            for token in top:
                token = int(token)
                lp = logp + float(np.log(max(dist[token], 1e-12)))
                if token == bpe.EOS:
                    candidates.append((ids, lp, True))
                else:
                    candidates.append((ids + [token], lp, len(ids) >= max_len))
        candidates.sort(key=lambda c: -c[1])
        hyps = candidates[:beam]

    def normalized(c):
        ids, logp, _ = c
        return logp / max(1, len(ids) - 1)

    best = max(hyps, key=normalized)
    return best[0][1:]


# ---------------------------------------------------------------------------
# checkpoints

def save_model(path, cfg: ModelConfig, params, opt_state: AdamState, step, seed,
               vocab_hash):
    meta = {"step": step, "seed": seed, "vocab_hash": vocab_hash,
            "adam_t": opt_state.t}
    save_checkpoint(path, cfg.to_dict(), params, opt_state.m, opt_state.v, meta)


def load_model(path, expected_vocab_hash=None):
    config, params, opt_m, opt_v, meta = load_checkpoint(path)
    if expected_vocab_hash is not None and meta["vocab_hash"] != expected_vocab_hash:
        raise ValueError(
            "checkpoint was trained with a different vocabulary "
            f"(hash {meta['vocab_hash'][:12]}... != {expected_vocab_hash[:12]}...)")
    cfg = ModelConfig.from_dict(config)
    opt_state = AdamState(m=opt_m, v=opt_v, t=meta["adam_t"])
    return cfg, params, opt_state, meta
