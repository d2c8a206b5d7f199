"""Caption, named-entity, and template-component evaluation.

Corpus scores: BLEU-4 (modified n-gram precisions, brevity penalty, no
smoothing), ROUGE-L (mean per-pair LCS F-measure, beta 1.2), a METEOR
variant restricted to exact and Porter-stemmed matches, and CIDEr-D
(tf-idf 1..4-gram cosine with clipped counts and a gaussian length
penalty, scaled by 10).  Entity precision/recall micro-averages
normalized surface sets; component precision/recall scores each of the
five components over the corpus and macro-averages them.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .stemmer import stem
from .template import COMPONENTS, extract_components

ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
CIDER_SIGMA = 6.0


def _check_aligned(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(
            f"{len(candidates)} candidates vs {len(references)} references")


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates, references) -> float:
    """Corpus BLEU with 1..4-gram modified precisions; zeros are not smoothed."""
    _check_aligned(candidates, references)
    matched = np.zeros(4)
    total = np.zeros(4)
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        c = cand.split()
        r = ref.split()
        cand_len += len(c)
        ref_len += len(r)
        for n in range(1, 5):
            cgrams = _ngrams(c, n)
            rgrams = _ngrams(r, n)
            matched[n - 1] += sum(min(count, rgrams[g]) for g, count in cgrams.items())
            total[n - 1] += max(0, len(c) - n + 1)
    if cand_len == 0 or np.any(total == 0):
        return 0.0
    precisions = matched / total
    if np.any(precisions == 0):
        return 0.0
    log_mean = float(np.mean(np.log(precisions)))
    bp = 1.0 if cand_len > ref_len else float(np.exp(1.0 - ref_len / cand_len))
    return bp * float(np.exp(log_mean))


def _lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidates, references) -> float:
    """Mean per-pair LCS F-measure with beta weighting recall."""
    _check_aligned(candidates, references)
    if not candidates:
        raise ValueError("empty corpus")
    scores = []
    b2 = ROUGE_BETA ** 2
    for cand, ref in zip(candidates, references):
        c, r = cand.split(), ref.split()
        lcs = _lcs_length(c, r) if c and r else 0
        if lcs == 0:
            scores.append(0.0)
            continue
        p = lcs / len(c)
        rec = lcs / len(r)
        scores.append((1 + b2) * rec * p / (rec + b2 * p))
    return float(np.mean(scores))


def _meteor_alignment(cand, ref):
    """Match exact surfaces, then stems; returns (cand_pos -> ref_pos)."""
    alignment = {}
    used = [False] * len(ref)
    for stage in (lambda w: w, stem):
        keyed = {}
        for j, w in enumerate(ref):
            if not used[j]:
                keyed.setdefault(stage(w), []).append(j)
        for i, w in enumerate(cand):
            if i in alignment:
                continue
            slots = keyed.get(stage(w))
            if slots:
                j = slots.pop(0)
                alignment[i] = j
                used[j] = True
    return alignment


def _chunk_count(alignment):
    pairs = sorted(alignment.items())
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(candidates, references) -> float:
    """METEOR with exact+stem matching only, mean of per-pair scores."""
    _check_aligned(candidates, references)
    if not candidates:
        raise ValueError("empty corpus")
    scores = []
    for cand, ref in zip(candidates, references):
        c = [w.lower() for w in cand.split()]
        r = [w.lower() for w in ref.split()]
        if not c or not r:
            scores.append(0.0)
            continue
        alignment = _meteor_alignment(c, r)
        m = len(alignment)
        if m == 0:
            scores.append(0.0)
            continue
        p = m / len(c)
        rec = m / len(r)
        fmean = p * rec / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * rec)
        penalty = METEOR_GAMMA * (_chunk_count(alignment) / m) ** METEOR_BETA
        scores.append(fmean * (1.0 - penalty))
    return float(np.mean(scores))


def cider_d(candidates, references, corpus=None) -> float:
    """CIDEr-D over 1..4-grams with idf from the reference corpus."""
    _check_aligned(candidates, references)
    corpus = references if corpus is None else corpus
    if len(corpus) < 2:
        raise ValueError("idf needs a corpus of at least 2 references")
    corpus_grams = []
    for text in corpus:
        toks = [w.lower() for w in text.split()]
        seen = set()
        for n in range(1, 5):
            seen.update(_ngrams(toks, n))
        corpus_grams.append(seen)
    df = Counter(g for seen in corpus_grams for g in seen)
    log_n = np.log(len(corpus))

    def tfidf(tokens, n):
        counts = _ngrams(tokens, n)
        return {g: c * (log_n - np.log(max(1.0, df[g]))) for g, c in counts.items()}

    scores = []
    for cand, ref in zip(candidates, references):
        c = [w.lower() for w in cand.split()]
        r = [w.lower() for w in ref.split()]
        length_penalty = float(np.exp(-((len(c) - len(r)) ** 2) / (2 * CIDER_SIGMA ** 2)))
        per_n = []
        for n in range(1, 5):
            vc = tfidf(c, n)
            vr = tfidf(r, n)
            norm_c = np.sqrt(sum(w * w for w in vc.values()))
            norm_r = np.sqrt(sum(w * w for w in vr.values()))
            if norm_c == 0 or norm_r == 0:
                per_n.append(0.0)
                continue
            num = sum(min(vc[g], vr[g]) * vr[g] for g in vc if g in vr)
            per_n.append(length_penalty * num / (norm_c * norm_r))
        scores.append(10.0 * float(np.mean(per_n)))
    return float(np.mean(scores))


def entity_pr(generated, references, annotator):
    """Micro-averaged precision/recall of normalized entity surface sets.

    Returns (precision, recall, flags) where flags marks denominators
    that were empty and reported as zero.
    """
    _check_aligned(generated, references)
    overlap = gen_total = ref_total = 0
    for gen, ref in zip(generated, references):
        g = annotator.entity_surfaces(gen)
        r = annotator.entity_surfaces(ref)
        overlap += len(g & r)
        gen_total += len(g)
        ref_total += len(r)
    flags = {}
    if gen_total == 0:
        flags["entity_precision_undefined"] = True
    if ref_total == 0:
        flags["entity_recall_undefined"] = True
    precision = overlap / gen_total if gen_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    return precision, recall, flags


def component_pr(generated, references, annotator):
    """Per-component precision/recall plus their macro averages.

    Returns (per_component, macro_p, macro_r, flags); per_component maps
    each name to a (precision, recall) pair.
    """
    _check_aligned(generated, references)
    tp = np.zeros(5)
    gen_count = np.zeros(5)
    ref_count = np.zeros(5)
    for gen, ref in zip(generated, references):
        _, g_spans, g_tags = annotator.annotate(gen)
        _, r_spans, r_tags = annotator.annotate(ref)
        g = extract_components(g_spans, g_tags).values
        r = extract_components(r_spans, r_tags).values
        tp += g * r
        gen_count += g
        ref_count += r
    per_component = {}
    flags = {}
    precisions = np.zeros(5)
    recalls = np.zeros(5)
    for i, name in enumerate(COMPONENTS):
        if gen_count[i] == 0:
            flags[f"{name}_precision_undefined"] = True
        precisions[i] = tp[i] / gen_count[i] if gen_count[i] else 0.0
        recalls[i] = tp[i] / ref_count[i] if ref_count[i] else 0.0
        per_component[name] = (float(precisions[i]), float(recalls[i]))
    return per_component, float(precisions.mean()), float(recalls.mean()), flags


@dataclass
class MetricReport:
    bleu4: float
    rouge_l: float
    meteor_lite: float
    cider_d: float
    entity_precision: float
    entity_recall: float
    component_pr: dict
    macro_precision: float
    macro_recall: float
    flags: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "meteor_lite": self.meteor_lite,
            "cider_d": self.cider_d,
            "entity_precision": self.entity_precision,
            "entity_recall": self.entity_recall,
            "components": {name: {"precision": p, "recall": r}
                           for name, (p, r) in self.component_pr.items()},
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "flags": dict(sorted(self.flags.items())),
        }
        return json.dumps(payload, indent=2)


def evaluate_captions(generated, references, annotator, corpus=None) -> MetricReport:
    ep, er, eflags = entity_pr(generated, references, annotator)
    per_component, macro_p, macro_r, cflags = component_pr(generated, references, annotator)
    return MetricReport(
        bleu4=bleu4(generated, references),
        rouge_l=rouge_l(generated, references),
        meteor_lite=meteor_lite(generated, references),
        cider_d=cider_d(generated, references, corpus),
        entity_precision=ep,
        entity_recall=er,
        component_pr=per_component,
        macro_precision=macro_p,
        macro_recall=macro_r,
        flags={**eflags, **cflags},
    )
