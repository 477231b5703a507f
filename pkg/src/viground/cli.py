"""Command-line entry point: ``viground {train,extract,eval-sim,eval-cat,eval-bless,neighbors}``.

Failures exit with status 2 and one stderr line ``error category=<kind>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from .config import RunConfig
from .data import load_bless, load_categories, load_dataset, load_embeddings, load_similarity
from .errors import ConfigError, GroundingError, IngestionError, ShapeError
from .model import extract_grounded, init_model, load_model, lookups_from_dataset
from .train import train

logger = logging.getLogger("viground")


def _named(spec: str):
    """``name=path`` or a bare path (named by its file stem)."""
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name, path
    return Path(spec).stem, spec


def _require_file(path, label):
    if not Path(path).is_file():
        raise IngestionError(f"{label} file not found: {path}")


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out if cfg else None)
    if out is None:
        raise ConfigError("--out is required")
    Path(out).mkdir(parents=True, exist_ok=True)
    return Path(out)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.languages:
        cfg.train.languages = tuple(args.languages.split(","))
    if args.out:
        cfg.out = args.out
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.epochs is not None:
        cfg.train.max_epochs = args.epochs
        cfg.train.__post_init__()
    cfg.validate_for_training()
    out = _out_dir(args, cfg)
    provenance = cfg.to_dict()
    provenance.pop("out", None)  # keeps outputs identical across output directories
    (out / "config.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    langs = cfg.train.languages
    tables = {}
    for lang in langs:
        tables[lang] = load_embeddings(cfg.embeddings[lang], expected_dim=cfg.train.d, language=lang,
                                       lowercase=cfg.lowercase.get(lang))
    dataset = load_dataset(cfg.manifest, cfg.vectors, langs, tables, vocab_limits=cfg.vocab_limits,
                           validation_size=cfg.validation_size, train_size=cfg.train_size,
                           seed=cfg.train.seed, standardize=cfg.standardize_images, lowercase=cfg.lowercase)
    if dataset.image_dim != cfg.train.h:
        raise ShapeError(f"image vectors have dimension {dataset.image_dim} but the LSTM output is {cfg.train.h}")
    for lang in langs:
        (out / f"vocab_{lang}.txt").write_text("\n".join(dataset.vocabularies[lang].words) + "\n", encoding="utf-8")
    model = init_model(lookups_from_dataset(dataset, tables), cfg.train.c, cfg.train.h, seed=cfg.train.seed,
                       languages=langs)
    _, report = train(model, dataset, cfg.train, checkpoint_path=out / "model.ckpt",
                      log_path=out / "train_log.jsonl", log_timing=args.log_timing)
    summary = report.summary()
    summary.update({"n_train": len(dataset.train), "n_validation": len(dataset.validation),
                    "dropped_samples": dataset.dropped, "oov_tokens": dataset.oov_tokens})
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"best epoch {report.best_epoch}: validation loss {report.best_val_loss:.6g}")
    return 0


def cmd_extract(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.embeddings, "embeddings")
    model = load_model(args.checkpoint)
    table = load_embeddings(args.embeddings, language=args.language, lowercase=args.lowercase)
    grounded = extract_grounded(table, model.alignment)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    grounded.save(args.output)
    print(f"wrote {len(grounded)} grounded vectors (dim {grounded.dim}) to {args.output}")
    return 0


def _tables(specs, language):
    tables = {}
    for spec in specs:
        name, path = _named(spec)
        _require_file(path, f"embeddings {name}")
        tables[name] = load_embeddings(path, language=language)
    return tables


def cmd_eval_sim(args) -> int:
    tables = _tables(args.embeddings, args.language)
    benches = []
    for spec in args.benchmark:
        name, path = _named(spec)
        _require_file(path, f"benchmark {name}")
        benches.append(load_similarity(path, name=name, language=args.language))
    out = _out_dir(args)
    results, records = {}, []
    for emb_name, table in tables.items():
        results[emb_name] = {}
        for bench in benches:
            res = ev.spearman(bench, table)
            results[emb_name][bench.name] = res
            records.append(ev.to_record(res, embeddings=emb_name, task="similarity"))
    text = ev.format_comparison(results, [b.name for b in benches], title="Similarity (Spearman x 100)")
    coverage = "\n".join(f"coverage {r['embeddings']}/{r['benchmark']}: {r['coverage']:.3f} ({r['n_evaluated']}/{r['n_total']})"
                         for r in records)
    (out / "similarity.txt").write_text(text + "\n" + coverage + "\n", encoding="utf-8")
    ev.write_jsonl(out / "similarity.jsonl", records)
    sys.stdout.write(text)
    return 0


def cmd_eval_cat(args) -> int:
    tables = _tables(args.embeddings, args.language)
    sets = []
    for spec in args.benchmark:
        name, path = _named(spec)
        _require_file(path, f"benchmark {name}")
        sets.append(load_categories(path, name=name, language=args.language))
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    results, records = {}, []
    for emb_name, table in tables.items():
        results[emb_name] = {}
        for cs in sets:
            res = ev.categorize(table, cs, seed=seed, restarts=args.restarts)
            results[emb_name][cs.name] = res
            rec = ev.to_record(res, embeddings=emb_name, task="categorization")
            rec["restart_purity_min"] = min(res.restart_purities)
            rec["restart_purity_max"] = max(res.restart_purities)
            records.append(rec)
    text = ev.format_comparison(results, [c.name for c in sets], title="Categorization (purity x 100)")
    (out / "categorization.txt").write_text(text, encoding="utf-8")
    ev.write_jsonl(out / "categorization.jsonl", records)
    sys.stdout.write(text)
    return 0


def cmd_eval_bless(args) -> int:
    tables = _tables(args.embeddings, args.language)
    _require_file(args.bless, "BLESS")
    bless = load_bless(args.bless)
    out = _out_dir(args)
    scores = open(out / "bless_scores.tsv", "w", encoding="utf-8")
    summary = open(out / "bless_summary.tsv", "w", encoding="utf-8")
    records = []
    lines = []
    keys = ["n", "q1", "median", "q3", "whisker_low", "whisker_high", "mean", "variance"]
    with scores, summary:
        scores.write("embeddings\tconcept\trelation\traw\tz\n")
        summary.write("embeddings\trelation\t" + "\t".join(keys) + "\n")
        for emb_name, table in tables.items():
            profile = ev.bless_profile(table, bless)
            for concept, rel, raw, z in profile.long_table():
                scores.write(f"{emb_name}\t{concept}\t{rel}\t{raw!r}\t{z!r}\n")
            lines.append(f"{emb_name}: {len(profile.included)} concepts profiled, {len(profile.excluded)} excluded")
            for rel, stats in profile.summaries().items():
                summary.write(f"{emb_name}\t{rel}\t" + "\t".join(repr(stats[k]) for k in keys) + "\n")
                records.append({"task": "bless", "embeddings": emb_name, "relation": rel, **stats})
                lines.append(f"  {rel:<7} mean {stats['mean']:+.3f}  median {stats['median']:+.3f}  var {stats['variance']:.3f}")
            for concept, reason in sorted(profile.excluded.items()):
                records.append({"task": "bless", "embeddings": emb_name, "excluded": concept, "reason": reason})
    (out / "bless.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    ev.write_jsonl(out / "bless.jsonl", records)
    print("\n".join(lines))
    return 0


def cmd_neighbors(args) -> int:
    _require_file(args.textual, "textual embeddings")
    _require_file(args.grounded, "grounded embeddings")
    textual = load_embeddings(args.textual, language=args.language)
    grounded = load_embeddings(args.grounded, language=args.language, space="grounded")
    words = list(args.words.split(",")) if args.words else []
    if args.words_file:
        _require_file(args.words_file, "words")
        words += [w.strip() for w in Path(args.words_file).read_text(encoding="utf-8").split() if w.strip()]
    if not words:
        raise ConfigError("no query words given (--words or --words-file)")
    out = _out_dir(args)
    records, lines = [], []
    for word in words:
        diff = ev.neighbor_diff(word, args.k, textual, grounded)
        records.append({"query": diff.query, "k": diff.k, "textual": list(diff.textual),
                        "grounded": list(diff.grounded), "only_textual": list(diff.only_textual),
                        "only_grounded": list(diff.only_grounded)})
        lines.append(f"{word}\n  textual only:  {' '.join(diff.only_textual) or '-'}\n"
                     f"  grounded only: {' '.join(diff.only_grounded) or '-'}")
    (out / "neighbors.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    ev.write_jsonl(out / "neighbors.jsonl", records)
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--languages", help="comma-separated language tags, e.g. en,de,ar")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="viground", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the grounding model")
    p.add_argument("--epochs", type=int, help="override max epochs")
    p.add_argument("--log-timing", action="store_true", help="include wall time per epoch in the log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", parents=[common], help="write grounded embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--output", required=True, help="grounded embedding file to write")
    p.add_argument("--language", default=None)
    p.add_argument("--lowercase", action="store_true", help="case-fold words before writing")
    p.set_defaults(func=cmd_extract)

    for name, func, helptext in [("eval-sim", cmd_eval_sim, "Spearman similarity/relatedness"),
                                 ("eval-cat", cmd_eval_cat, "k-means categorization purity")]:
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--embeddings", action="append", required=True, metavar="[NAME=]PATH")
        p.add_argument("--benchmark", action="append", required=True, metavar="[NAME=]PATH")
        p.add_argument("--language", default="en")
        if name == "eval-cat":
            p.add_argument("--restarts", type=int, default=10)
        p.set_defaults(func=func)

    p = sub.add_parser("eval-bless", parents=[common], help="BLESS relation profiles")
    p.add_argument("--embeddings", action="append", required=True, metavar="[NAME=]PATH")
    p.add_argument("--bless", required=True)
    p.add_argument("--language", default="en")
    p.set_defaults(func=cmd_eval_bless)

    p = sub.add_parser("neighbors", parents=[common], help="nearest-neighbor diff of two spaces")
    p.add_argument("--textual", required=True)
    p.add_argument("--grounded", required=True)
    p.add_argument("--words")
    p.add_argument("--words-file")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--language", default="en")
    p.set_defaults(func=cmd_neighbors)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GroundingError as exc:
        msg = " ".join(str(exc).split())
        print(f"error category={exc.category}: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error category=io: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
