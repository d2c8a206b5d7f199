"""Command-line surface: preprocess, train-nee, train, generate, evaluate, stats.

Relative input paths resolve against $JOGANIC_DATA_DIR when they do not
exist in the working directory.  Every failure prints a single
"error: ..." line; usage problems exit with status 2, runtime failures
with 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import model as mdl
from .annotate import Annotator, Gazetteer, PosLexicon, read_annotations
from .binio import FormatError
from .bpe import Tokenizer, bpe_train
from .dataio import load_dataset, read_features
from .embeddings import NepConfig, load_embeddings, load_kb, save_embeddings, train_embeddings
from .metrics import evaluate_captions
from .resources import default_annotator
from .template import (
    COMPONENTS,
    corpus_component_stats,
    extract_components,
    format_stats_tsv,
    from_component_names,
    template_class_id,
)

DATA_DIR_ENV = "JOGANIC_DATA_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _resolve(path_str):
    path = Path(path_str)
    if path.exists() or path.is_absolute():
        return path
    root = os.environ.get(DATA_DIR_ENV)
    if root and (Path(root) / path).exists():
        return Path(root) / path
    return path


def _load_annotator(args) -> Annotator:
    if getattr(args, "gazetteer", None) or getattr(args, "lexicon", None):
        base = default_annotator()
        gaz = Gazetteer.from_file(_resolve(args.gazetteer)) if args.gazetteer else base.gazetteer
        lex = PosLexicon.from_file(_resolve(args.lexicon)) if args.lexicon else base.lexicon
        return Annotator(gaz, lex)
    return default_annotator()


def _span_payload(spans):
    return [{"start": s.start, "end": s.end, "type": s.entity_type, "surface": s.surface}
            for s in spans]


def _record_annotation(record, annotator, gold):
    if gold and "caption" in gold:
        cap_spans, cap_tags = gold["caption"]
    else:
        _, cap_spans, cap_tags = annotator.annotate(record.caption)
    if gold and "article" in gold:
        art_spans, art_tags = gold["article"]
    else:
        _, art_spans, art_tags = annotator.annotate(record.article)
    return cap_spans, cap_tags, art_spans, art_tags


def cmd_preprocess(args) -> int:
    records = load_dataset(_resolve(args.dataset))
    gold = read_annotations(_resolve(args.dataset))
    annotator = _load_annotator(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    corpus = [r.article for r in records] + [r.caption for r in records]
    vocab, merges = bpe_train(corpus, args.vocab_size)
    tokenizer = Tokenizer(vocab, merges)
    tokenizer.save(out / "vocab.tsv", out / "merges.txt")

    lines = []
    for record in records:
        cap_spans, cap_tags, art_spans, art_tags = _record_annotation(
            record, annotator, gold.get(record.id))
        components = extract_components(cap_spans, cap_tags)
        lines.append(json.dumps({
            "id": record.id,
            "split": record.split,
            "components": [int(v) for v in components.values],
            "template_class": template_class_id(components),
            "caption": {"entities": _span_payload(cap_spans), "pos": cap_tags},
            "article": {"entities": _span_payload(art_spans), "pos": art_tags},
        }))
    (out / "annotations.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'vocab.tsv'} ({vocab.size} tokens), "
          f"{out / 'merges.txt'} ({len(merges)} merges), "
          f"{out / 'annotations.jsonl'} ({len(records)} records)", file=sys.stderr)
    return 0


def cmd_train_nee(args) -> int:
    kb = load_kb(_resolve(args.kb))
    cfg = NepConfig(negatives=args.negatives, window=args.window, lr=args.lr,
                    epochs=args.epochs, seed=args.seed)
    table = train_embeddings(kb, cfg, dim=args.dim)
    save_embeddings(table, args.out)
    print(f"wrote {args.out}: {len(table.words)} words, {len(table.entities)} entities, "
          f"dim {table.dim}", file=sys.stderr)
    return 0


def _prepare_split(args, cfg_overrides=None):
    """Shared loading for train/generate: returns (examples, tokenizer, cfg extras)."""
    records = [r for r in load_dataset(_resolve(args.dataset)) if r.split == args.split]
    if not records:
        raise ValueError(f"no records in split {args.split!r}")
    gold = read_annotations(_resolve(args.dataset))
    vocab_dir = Path(_resolve(args.vocab_dir))
    tokenizer = Tokenizer.load(vocab_dir / "vocab.tsv", vocab_dir / "merges.txt")
    table = load_embeddings(_resolve(args.embeddings))
    features = read_features(_resolve(args.features))
    annotator = _load_annotator(args)
    return records, gold, tokenizer, table, features, annotator


def cmd_train(args) -> int:
    records, gold, tokenizer, table, features, annotator = _prepare_split(args)
    cfg = mdl.ModelConfig(
        vocab_size=tokenizer.vocab.size,
        d_image=features.shape[1],
        d_text=args.d_text,
        d_entity=table.dim,
        d_model=args.d_model,
        heads=args.heads,
        encoder_blocks=args.enc_blocks,
        ff_mult=args.ff_mult,
        head_hidden=args.head_hidden,
        window=args.window,
        text_cap=args.text_cap,
        max_len=args.max_len,
        max_entities=args.max_entities,
        component_loss_weight=args.lambda_weight,
    )
    examples = [mdl.prepare_example(r, tokenizer, annotator, table, features, cfg,
                                    gold.get(r.id)) for r in records]

    def log(epoch, losses):
        print(f"epoch {epoch + 1}/{args.epochs}: caption {losses[0]:.4f} "
              f"component {losses[1]:.4f}", file=sys.stderr)

    params, opt_state, history = mdl.train_model(
        examples, cfg, epochs=args.epochs, lr=args.lr, batch_size=args.batch,
        seed=args.seed, log=log)
    step = opt_state.t
    mdl.save_model(args.out, cfg, params, opt_state, step=step, seed=args.seed,
                   vocab_hash=tokenizer.content_hash())
    print(f"wrote {args.out} after {step} steps", file=sys.stderr)
    return 0


def _parse_template(text):
    names = [part for part in text.split(",") if part]
    return from_component_names(names)


def cmd_generate(args) -> int:
    records, gold, tokenizer, table, features, annotator = _prepare_split(args)
    cfg, params, _, _ = mdl.load_model(_resolve(args.checkpoint),
                                       expected_vocab_hash=tokenizer.content_hash())
    manual = None
    if args.mode == "manual":
        if not args.template:
            raise ValueError("--mode manual requires --template")
        manual = _parse_template(args.template).values
    zero_out = () if args.zero_out == "none" else (args.zero_out,)

    out_lines = []
    for record in records:
        ex = mdl.prepare_example(record, tokenizer, annotator, table, features, cfg,
                                 gold.get(record.id))
        ids = mdl.generate(ex, params, cfg, mode=args.mode, manual_components=manual,
                           zero_out=zero_out, max_len=args.max_len, beam=args.beam)
        if args.mode == "auto":
            doc = mdl.encode_document(ex, params, cfg, zero_out)
            comp = mdl.predict_components(doc, params, cfg).values
        elif args.mode == "oracle":
            comp = ex.components
        else:
            comp = manual
        out_lines.append(json.dumps({
            "id": record.id,
            "caption": tokenizer.decode(ids),
            "mode": args.mode,
            "components": [round(float(v), 6) for v in comp],
        }))
    payload = "\n".join(out_lines) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"wrote {args.out} ({len(out_lines)} captions)", file=sys.stderr)
    else:
        sys.stdout.write(payload)
    return 0


def cmd_evaluate(args) -> int:
    references = {r.id: r.caption for r in load_dataset(_resolve(args.dataset))}
    generated = []
    ref_list = []
    for lineno, line in enumerate(
            Path(_resolve(args.generated)).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        rid = obj["id"]
        if rid not in references:
            raise ValueError(f"{args.generated}:{lineno}: unknown record id {rid!r}")
        generated.append(obj["caption"])
        ref_list.append(references[rid])
    if not generated:
        raise ValueError("no generated captions to evaluate")
    report = evaluate_captions(generated, ref_list, _load_annotator(args))
    payload = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(payload)
    return 0


def cmd_stats(args) -> int:
    records = load_dataset(_resolve(args.dataset))
    if not records:
        raise ValueError("empty dataset")
    gold = read_annotations(_resolve(args.dataset))
    annotator = _load_annotator(args)
    vectors = []
    for record in records:
        cap_spans, cap_tags, _, _ = _record_annotation(record, annotator,
                                                       gold.get(record.id))
        vectors.append(extract_components(cap_spans, cap_tags))
    comp_pct, classes = corpus_component_stats(vectors)
    sys.stdout.write(format_stats_tsv(comp_pct, classes))
    return 0


def _add_annotator_flags(p):
    p.add_argument("--gazetteer", help="phrase<TAB>TYPE file overriding the built-in gazetteer")
    p.add_argument("--lexicon", help="word<TAB>TAG file overriding the built-in POS lexicon")


def build_parser() -> _Parser:
    parser = _Parser(prog="newscap",
                     description="Template-guided news image captioning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="train BPE, annotate, extract components")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    _add_annotator_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-nee", help="train entity embeddings over a knowledge base")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--negatives", type=int, default=50)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_nee)

    p = sub.add_parser("train", help="train the captioning model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab-dir", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lambda", dest="lambda_weight", type=float, default=1.0)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--d-text", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--enc-blocks", type=int, default=1)
    p.add_argument("--ff-mult", type=int, default=2)
    p.add_argument("--head-hidden", type=int, default=64)
    p.add_argument("--window", type=int, default=512)
    p.add_argument("--text-cap", type=int, default=1000)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--max-entities", type=int, default=32)
    _add_annotator_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate captions with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab-dir", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=("auto", "oracle", "manual"), default="auto")
    p.add_argument("--template",
                   help="comma-separated subset of who,when,where,misc,context")
    p.add_argument("--zero-out", choices=("none", "text", "image"), default="none")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--out")
    _add_annotator_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated captions against references")
    p.add_argument("--generated", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    _add_annotator_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="template component and class statistics")
    p.add_argument("--dataset", required=True)
    _add_annotator_flags(p)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "template", None) is not None:
        bad = [n for n in args.template.split(",") if n and n not in COMPONENTS]
        if bad:
            print(f"error: unknown component name(s) {','.join(bad)}; "
                  f"valid: {','.join(COMPONENTS)}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (ValueError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
