"""Command-line entry point: one subcommand per pipeline stage plus `run` for the
whole chain. Exit codes: 0 ok, 2 config error, 3 data error, 4 backend error,
5 numerical failure."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .backends import (
    EmbeddingSource,
    apply_adapter_batch,
    cache_embeddings,
    embed_batch,
    load_adapter,
    load_cache,
    parse_backend_spec,
)
from .corpus import assign_splits, corpus_stats, ingest_corpus, normalize_paragraphs
from .errors import ConfigError, PipelineError
from .evaluation import (
    benchmark_officials,
    eval_pm,
    eval_qic,
    eval_sts,
    generate_synthetic_corpus,
    load_officials,
    planted_title_model,
    synthetic_core_token_vectors,
    write_report,
)
from .pairing import (
    ThresholdConfig,
    compute_thresholds,
    label_pairs,
    load_pairs,
    load_triplets,
    sample_triplets_hard,
    sample_triplets_random,
    sample_validation_pairs,
    title_similarity_matrix,
    write_pairs,
    write_triplets,
)
from .pipeline import file_digest, load_config, run_pipeline, stage_hash, write_artifact_jsonl
from .scoring import (
    load_dictionary,
    load_questionnaire,
    load_scores,
    recommend_quotes,
    score_corpus,
    ddr_score_corpus,
    write_scores,
)
from .trainer import TrainConfig, TripletLossConfig, train_adapter, write_train_log
from .wordvec import (
    SubwordConfig,
    WordVecTrainConfig,
    load_vectors,
    save_vectors,
    train_word_vectors,
)

log = logging.getLogger("ccr")


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--split needs three comma-separated fractions, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_pct(text: str) -> ThresholdConfig:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"--pct needs 'lower,upper', got {text!r}")
    return ThresholdConfig(float(parts[0]), float(parts[1]))


def _backend(args):
    """Backend from --backend, falling back to the CCR_BACKEND environment variable."""
    spec = getattr(args, "backend", None) or os.environ.get("CCR_BACKEND")
    if not spec:
        raise ConfigError("no backend given: pass --backend or set CCR_BACKEND")
    return parse_backend_spec(spec)


def _select_split(records, split: str | None):
    if split is None or split == "all":
        return records
    subset = [r for r in records if r.split == split]
    if not subset:
        raise ConfigError(f"no records in split {split!r}")
    return subset


def _emit_report(report, args):
    if getattr(args, "json", False):
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        print(report.format_table())
    if getattr(args, "out", None):
        write_report(report, args.out, meta={"tool_version": __version__, "seed": getattr(args, "seed", None)})


def cmd_ingest(args) -> int:
    records = ingest_corpus(args.in_path)
    records = normalize_paragraphs(records, min_len=args.min_len, max_len=args.max_len)
    records = assign_splits(
        records, fractions=_parse_fractions(args.split), seed=args.seed,
        stratify_by_title=args.stratify_by_title,
    )
    config_hash = stage_hash(
        "ingest",
        {"min_len": args.min_len, "max_len": args.max_len, "split": args.split,
         "stratify": args.stratify_by_title, "seed": args.seed},
        {"raw": file_digest(args.in_path)},
    )
    write_artifact_jsonl(args.out, [r.to_json() for r in records], config_hash, args.seed)
    stats = corpus_stats(records)
    log.info(
        "wrote %s: %d paragraphs, %d works, mean length %.1f, splits %s",
        args.out, stats.n_paragraphs, stats.n_works, stats.mean_char_len,
        "/".join(f"{f:.2f}" for f in stats.split_fractions),
    )
    return 0


def cmd_train_wordvec(args) -> int:
    records = ingest_corpus(args.corpus)
    sentences = [r.text.split() if " " in r.text else list(r.text) for r in records]
    subword = None
    if args.subword:
        parts = args.subword.split(",")
        if len(parts) != 2:
            raise ConfigError(f"--subword needs 'min_n,max_n', got {args.subword!r}")
        subword = SubwordConfig(int(parts[0]), int(parts[1]), bucket_count=args.bucket_count)
    cfg = WordVecTrainConfig(
        architecture=args.arch, dim=args.dim, epochs=args.epochs, window=args.window,
        negative=args.negative, min_count=args.min_count, subword=subword,
        learning_rate=args.lr, seed=args.seed,
    )
    model = train_word_vectors(sentences, cfg)
    save_vectors(model, args.out)
    log.info("wrote %s: %d tokens, dim %d", args.out, len(model.vocab), model.dim)
    return 0


def cmd_build_pairs(args) -> int:
    records = ingest_corpus(args.corpus)
    model = load_vectors(args.vectors)
    sims = title_similarity_matrix(records, model)
    cfg = _parse_pct(args.pct)
    thresholds = compute_thresholds(list(sims.values()), cfg)
    subset = _select_split(records, args.split)
    pair_set = label_pairs(subset, sims, thresholds)
    meta = {
        "tool_version": __version__,
        "seed": args.seed,
        "config_hash": stage_hash(
            "build_pairs", {"pct": args.pct, "split": args.split, "seed": args.seed},
            {"corpus": file_digest(args.corpus), "vectors": file_digest(args.vectors)},
        ),
    }
    write_pairs(pair_set, args.out, meta=meta)
    log.info(
        "wrote %s: %d pairs (%d positive, %d negative), thresholds (%.4f, %.4f)",
        args.out, len(pair_set.pairs), len(pair_set.positives()), len(pair_set.negatives()),
        *thresholds,
    )
    if args.valid_pairs_out:
        valid_records = _select_split(records, "valid")
        valid = sample_validation_pairs(valid_records, sims, seed=args.seed)
        write_artifact_jsonl(
            args.valid_pairs_out, [{"i": i, "j": j, "sim": s} for i, j, s in valid],
            meta["config_hash"], args.seed,
        )
        log.info("wrote %s: %d validation pairs", args.valid_pairs_out, len(valid))
    return 0


def cmd_sample_triplets(args) -> int:
    pair_set = load_pairs(args.pairs)
    if args.mode == "hard":
        if not args.emb:
            raise ConfigError("--mode hard needs --emb <cache.jsonl>")
        embeddings = load_cache(args.emb)
        triplets = sample_triplets_hard(pair_set, embeddings, seed=args.seed)
    else:
        if args.corpus:
            records = _select_split(ingest_corpus(args.corpus), args.split)
        else:
            ids = sorted({p.id_i for p in pair_set.pairs} | {p.id_j for p in pair_set.pairs})
            from .corpus import ParagraphRecord

            records = [ParagraphRecord(id=i, work_id=i, title="-", text="-") for i in ids]
        triplets = sample_triplets_random(pair_set, records, seed=args.seed)
    meta = {"tool_version": __version__, "seed": args.seed, "mode": args.mode}
    write_triplets(triplets, args.out, meta=meta)
    log.info("wrote %s: %d triplets", args.out, len(triplets))
    return 0


def cmd_train_adapter(args) -> int:
    backend = _backend(args)
    triplets = load_triplets(args.triplets)
    valid_pairs = []
    with Path(args.valid_pairs).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "_meta" in obj:
                continue
            valid_pairs.append((obj["i"], obj["j"], float(obj["sim"])))
    if args.corpus:
        records = ingest_corpus(args.corpus)
        source = EmbeddingSource.from_backend(backend, records)
    else:
        source = EmbeddingSource.from_backend(backend, [])
    train_cfg = TrainConfig(
        batch_size=args.batch, epochs=args.epochs, warmup_epochs=args.warmup,
        learning_rate=args.lr, seed=args.seed,
    )
    params, reports = train_adapter(triplets, source, train_cfg, TripletLossConfig(args.alpha), valid_pairs)
    best = max(reports, key=lambda r: (r.pearson, r.spearman))
    from .backends import save_adapter

    config_hash = stage_hash(
        "train_adapter",
        {"batch": args.batch, "epochs": args.epochs, "warmup": args.warmup,
         "lr": args.lr, "alpha": args.alpha, "seed": args.seed, "backend": args.backend},
        {"triplets": file_digest(args.triplets), "valid_pairs": file_digest(args.valid_pairs)},
    )
    save_adapter(
        params, args.out,
        meta={"seed": args.seed, "config_hash": config_hash, "epoch": best.epoch, "tool_version": __version__},
    )
    if args.log:
        write_train_log(reports, args.log, meta={"seed": args.seed})
    log.info("wrote %s: best epoch %d, validation pearson %.4f / spearman %.4f",
             args.out, best.epoch, best.pearson, best.spearman)
    return 0


def cmd_embed(args) -> int:
    backend = _backend(args)
    records = _select_split(ingest_corpus(args.corpus), args.split)
    meta = {
        "tool_version": __version__,
        "backend": backend.name,
        "config_hash": stage_hash(
            "embed", {"backend": backend.name, "split": args.split}, {"corpus": file_digest(args.corpus)}
        ),
    }
    cache_embeddings(backend, records, args.out, meta=meta)
    log.info("wrote %s: %d embeddings of dim %d", args.out, len(records), backend.dim)
    return 0


def cmd_score(args) -> int:
    backend = _backend(args)
    adapter = load_adapter(args.adapter) if args.adapter else None
    records = _select_split(ingest_corpus(args.corpus), args.split)
    questionnaire = load_questionnaire(args.questionnaire)
    scores = score_corpus(records, questionnaire, backend, adapter)
    write_scores(scores, args.out, meta={"tool_version": __version__, "construct": questionnaire.construct})
    log.info("wrote %s: %d ccr scores for construct %s", args.out, len(scores), questionnaire.construct)
    return 0


def cmd_ddr_score(args) -> int:
    model = load_vectors(args.vectors)
    dictionary = load_dictionary(args.dictionary)
    records = _select_split(ingest_corpus(args.corpus), args.split)
    scores = ddr_score_corpus(records, dictionary, model)
    write_scores(scores, args.out, meta={"tool_version": __version__, "construct": dictionary.construct})
    log.info("wrote %s: %d ddr scores for construct %s", args.out, len(scores), dictionary.construct)
    return 0


def cmd_quotes(args) -> int:
    if not args.backend and not os.environ.get("CCR_BACKEND"):
        args.backend = "mock:dim=64,seed=0"
    backend = _backend(args)
    adapter = load_adapter(args.adapter) if args.adapter else None
    corpus = []
    with Path(args.quotes).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "_meta" in obj:
                continue
            corpus.append({"id": obj["id"], "text": obj["text"]})
    ranked = recommend_quotes(args.item, corpus, backend, adapter, k=args.k)
    if args.json:
        print(json.dumps([{"id": qid, "similarity": sim} for qid, sim in ranked], ensure_ascii=False))
    else:
        for qid, sim in ranked:
            print(f"{sim:+.4f}  {qid}")
    return 0


def cmd_eval_sts(args) -> int:
    backend = _backend(args)
    adapter = load_adapter(args.adapter) if args.adapter else None
    records = _select_split(ingest_corpus(args.corpus), args.split)
    model = load_vectors(args.vectors)
    sims = title_similarity_matrix(records, model)
    report = eval_sts(
        records, args.mode, rounds=args.rounds, pairs_per_round=args.pairs_per_round,
        title_sims=sims, backend=backend, adapter=adapter, seed=args.seed,
        thresholds=_parse_pct(args.pct),
    )
    _emit_report(report, args)
    return 0


def cmd_eval_qic(args) -> int:
    backend = _backend(args)
    adapter = load_adapter(args.adapter) if args.adapter else None
    texts, labels = [], []
    for c, path in enumerate(args.questionnaires):
        questionnaire = load_questionnaire(path)
        for item in questionnaire.items:
            texts.append(item.text)
            labels.append(c)
    item_embs = apply_adapter_batch(adapter, embed_batch(backend, texts))
    report = eval_qic(list(item_embs), labels, k=args.k, seed=args.seed)
    _emit_report(report, args)
    return 0


def cmd_eval_pm(args) -> int:
    backend = _backend(args)
    adapter = load_adapter(args.adapter) if args.adapter else None
    records = _select_split(ingest_corpus(args.corpus), args.split)
    model = load_vectors(args.vectors)
    questionnaires = [load_questionnaire(p) for p in args.questionnaires]
    dictionaries = [load_dictionary(p) for p in args.dictionaries]
    report = eval_pm(records, questionnaires, dictionaries, backend, adapter, model)
    _emit_report(report, args)
    return 0


def cmd_benchmark(args) -> int:
    officials = load_officials(args.officials)
    score_rows = load_scores(args.scores)
    constructs = [args.construct] if args.construct else sorted({s.construct for s in score_rows})
    for construct in constructs:
        table = {s.paragraph_id: s.score for s in score_rows if s.construct == construct}
        if not table:
            raise ConfigError(f"no scores for construct {construct!r}")
        report = benchmark_officials(officials, table)
        if args.json:
            payload = report.to_dict()
            payload["construct"] = construct
            print(json.dumps(payload, sort_keys=True))
        else:
            print(f"construct: {construct}")
            print(report.format_table())
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.backend:
        config["backend"] = args.backend
    outcomes = run_pipeline(config, force=args.force)
    for outcome in outcomes:
        log.info("stage %-15s %s", outcome.name, "skipped" if outcome.skipped else "ran")
    return 0


def cmd_gen_synthetic(args) -> int:
    records, planted = generate_synthetic_corpus(
        n_titles=args.titles, paragraphs_per_title=args.per_title, dim=args.dim,
        noise=args.noise, seed=args.seed,
    )
    config_hash = stage_hash(
        "gen_synthetic",
        {"titles": args.titles, "per_title": args.per_title, "dim": args.dim,
         "noise": args.noise, "seed": args.seed},
        {},
    )
    write_artifact_jsonl(args.out, [r.to_json() for r in records], config_hash, args.seed)
    log.info("wrote %s: %d paragraphs, %d titles", args.out, len(records), args.titles)
    if args.vectors_out:
        core = synthetic_core_token_vectors(records, planted, seed=args.seed)
        model = planted_title_model(planted, core)
        save_vectors(model, args.vectors_out)
        log.info("wrote %s: %d planted vectors", args.vectors_out, len(model.vocab))
    if args.constructs_out:
        out_dir = Path(args.constructs_out)
        out_dir.mkdir(parents=True, exist_ok=True)
        titles = sorted({r.title for r in records})
        n_constructs = min(4, len(titles))
        for k in range(n_constructs):
            title = titles[k]
            core_tokens = sorted(
                {t for r in records if r.title == title for t in r.text.split() if t.startswith("w")}
            )
            items = [
                {"id": f"i{j}", "text": " ".join(core_tokens) + f" q{k}x{j}"}
                for j in range(5)
            ]
            questionnaire = {"construct": f"construct{k}", "language": "synthetic", "items": items}
            dictionary = {"construct": f"construct{k}", "words": [title]}
            (out_dir / f"questionnaire{k}.json").write_text(json.dumps(questionnaire), encoding="utf-8")
            (out_dir / f"dictionary{k}.json").write_text(json.dumps(dictionary), encoding="utf-8")
        log.info("wrote %d questionnaire/dictionary pairs to %s", n_constructs, out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ccr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a raw corpus and assign splits")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-len", type=int, default=50)
    p.add_argument("--max-len", type=int, default=500)
    p.add_argument("--split", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--stratify-by-title", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-wordvec", help="train static word vectors on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--arch", choices=("cbow", "skipgram"), default="skipgram")
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negative", type=int, default=5)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--subword", default=None, help="min_n,max_n (enables hashed n-grams)")
    p.add_argument("--bucket-count", type=int, default=2_000_000)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_wordvec)

    p = sub.add_parser("build-pairs", help="label paragraph pairs from title similarity")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--pct", default="10,90")
    p.add_argument("--split", default="train")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--valid-pairs-out", default=None)
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("sample-triplets", help="sample anchor/positive/negative triplets")
    p.add_argument("--pairs", required=True)
    p.add_argument("--mode", choices=("random", "hard"), default="random")
    p.add_argument("--emb", default=None, help="embedding cache for hard mode")
    p.add_argument("--corpus", default=None)
    p.add_argument("--split", default="train")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_triplets)

    p = sub.add_parser("train-adapter", help="fine-tune the affine adapter on triplets")
    p.add_argument("--triplets", required=True)
    p.add_argument("--backend", default=None, help="backend spec (or set CCR_BACKEND)")
    p.add_argument("--valid-pairs", required=True)
    p.add_argument("--corpus", default=None, help="id->text source for non-cache backends")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_train_adapter)

    p = sub.add_parser("embed", help="build an embedding cache for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--backend", default=None, help="backend spec (or set CCR_BACKEND)")
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("score", help="ccr-score a corpus against a questionnaire")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questionnaire", required=True)
    p.add_argument("--backend", default=None, help="backend spec (or set CCR_BACKEND)")
    p.add_argument("--adapter", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ddr-score", help="ddr-score a corpus against a dictionary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ddr_score)

    p = sub.add_parser("quotes", help="recommend corpus quotes for an item text")
    p.add_argument("--item", required=True)
    p.add_argument("--quotes", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--backend", default=None, help="backend spec (default: mock)")
    p.add_argument("--adapter", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_quotes)

    p = sub.add_parser("eval-sts", help="paragraph-pair similarity evaluation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--mode", choices=("random", "threshold"), default="random")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--pairs-per-round", type=int, default=4308)
    p.add_argument("--backend", default=None, help="backend spec (or set CCR_BACKEND)")
    p.add_argument("--adapter", default=None)
    p.add_argument("--pct", default="10,90")
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_sts)

    p = sub.add_parser("eval-qic", help="questionnaire item classification evaluation")
    p.add_argument("--questionnaires", nargs="+", required=True)
    p.add_argument("--backend", default=None, help="backend spec (or set CCR_BACKEND)")
    p.add_argument("--adapter", default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_qic)

    p = sub.add_parser("eval-pm", help="psychological-measure evaluation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--questionnaires", nargs="+", required=True)
    p.add_argument("--dictionaries", nargs="+", required=True)
    p.add_argument("--backend", default=None, help="backend spec (or set CCR_BACKEND)")
    p.add_argument("--adapter", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_pm)

    p = sub.add_parser("benchmark", help="correlate per-author mean scores with annotations")
    p.add_argument("--officials", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--construct", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true", help="ignore cached stage outputs")
    p.add_argument("--backend", default=None, help="override the configured backend")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-synthetic", help="generate a planted-structure synthetic corpus")
    p.add_argument("--titles", type=int, default=8)
    p.add_argument("--per-title", type=int, default=25)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--vectors-out", default=None)
    p.add_argument("--constructs-out", default=None)
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except Exception:  # pragma: no cover - unexpected failure path
        log.exception("unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
