"""Command-line entry point: ``rfclink <command> [flags]``.

Exit status is 0 on success, 1 on a runtime error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus, dataset
from .baselines import MODEL_KINDS, build_model
from .checkpoint import load_model, save_model
from .encoder import EncoderConfig
from .headers import MalformedRow
from .numerics import CheckpointMismatch
from .trainer import (
    TrainConfig,
    cross_validate,
    fold_vocab,
    format_table,
    load_config,
    prepare_examples,
    result_records,
    samples_digest,
    train,
    write_results,
)

log = logging.getLogger("rfclink")


class CommandError(Exception):
    """A runtime failure reported to the user with exit status 1."""


def _positive_int(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer: {text!r}")
    return n


def _settings(args):
    """Encoder config, train config and extras from ``--config`` and ``--seed``."""
    if args.config:
        try:
            enc, train_over, extra = load_config(args.config)
        except OSError as e:
            raise CommandError(f"cannot read config: {e}") from None
        except ValueError as e:
            raise CommandError(f"{args.config}: {e}") from None
    else:
        enc, train_over, extra = EncoderConfig(), {}, {}
    try:
        tc = TrainConfig.defaults_for(args.model_kind, **train_over)
    except ValueError as e:
        raise CommandError(str(e)) from None
    return enc, tc, extra


def _load_data(args):
    try:
        schema = dataset.load_schema(args.schema)
        samples = dataset.load_samples(args.data)
        for s in samples:
            schema.index(s.label)
    except OSError as e:
        raise CommandError(f"cannot read input: {e}") from None
    except dataset.ParseError as e:
        raise CommandError(f"{args.data}: {e}") from None
    except dataset.UnknownLabel as e:
        raise CommandError(str(e)) from None
    if not samples:
        raise CommandError(f"{args.data}: no samples")
    return schema, samples


# --------------------------------------------------------------------------
# commands

def cmd_fetch(args):
    failed = 0
    for n in args.rfc:
        try:
            doc = corpus.fetch_rfc(n, args.cache, args.base_uri)
            print(f"rfc{n}: {len(doc.lines)} lines -> {corpus.cache_path(args.cache, n)}")
        except (corpus.NetworkError, corpus.RfcNotFound) as e:
            print(f"rfc{n}: error: {e}", file=sys.stderr)
            failed += 1
    return 1 if failed else 0


def cmd_parse(args):
    path = corpus.cache_path(args.cache, args.rfc)
    if not path.exists():
        raise CommandError(f"rfc{args.rfc} not fetched: {path} does not exist")
    doc = corpus.load_document(args.rfc, path)
    try:
        entries = dataset.build_catalog(doc)
    except MalformedRow as e:
        raise CommandError(f"rfc{args.rfc}: malformed header row at {e}") from None
    dataset.save_catalog(entries, args.out)
    diagrams = len({e.diagram for e in entries})
    print(f"rfc{args.rfc}: {len(entries)} fields in {diagrams} diagram(s) -> {args.out}")
    return 0


def cmd_build_dataset(args):
    try:
        schema = dataset.load_schema(args.schema)
        catalog = dataset.load_catalog(args.catalog)
        annotations = dataset.load_annotations(args.annotations)
        samples = dataset.build_samples(catalog, annotations, schema)
    except OSError as e:
        raise CommandError(f"cannot read input: {e}") from None
    except (dataset.UnknownLabel, dataset.DanglingAnnotation, dataset.ParseError) as e:
        raise CommandError(str(e).strip("'\"")) from None
    dataset.save_samples(samples, args.out)
    print(dataset.format_counts(samples, schema))
    return 0


def cmd_train(args):
    enc, tc, extra = _settings(args)
    tc = replace(tc, seed=args.seed)
    schema, samples = _load_data(args)
    vocab = fold_vocab(samples, enc.vocab_size)
    model = build_model(args.model_kind, vocab, enc, schema.num_classes, args.seed, **extra)
    result = train(model, prepare_examples(model, samples, schema), tc)
    save_model(model, schema.active, args.out, tc)
    final = result.loss_curve[-1] if result.loss_curve else float("nan")
    print(f"{args.model_kind}: {len(samples)} samples, {result.updates} updates, "
          f"final training loss {final:.6f}")
    return 0


def cmd_evaluate(args):
    enc, tc, extra = _settings(args)
    schema, samples = _load_data(args)
    if len(samples) < args.folds:
        raise CommandError(f"{len(samples)} samples cannot fill {args.folds} folds")

    def factory(vocab, seed):
        return build_model(args.model_kind, vocab, enc, schema.num_classes, seed, **extra)

    results = []
    for seed in args.seed:
        log.info("seed %d", seed)
        results.append(cross_validate(factory, samples, schema, args.folds, seed, tc, enc.vocab_size))
    protocol = {"model_kind": args.model_kind, "encoder": enc.to_dict(), "train": tc.to_dict(),
                "extra": extra, "folds": args.folds, "seeds": list(args.seed),
                "classes": list(schema.active), "data": samples_digest(samples)}
    records = result_records(results, protocol)
    write_results(records, args.out)
    summary = records[-1]
    rows = [(f"seed {r.seed}", r.pooled.scores()) for r in results]
    rows.append((args.model_kind, summary["pooled"]))
    print(format_table(rows))
    print(f"config {summary['config_hash']} -> {args.out}")
    return 0


def cmd_link(args):
    try:
        model, classes = load_model(args.checkpoint)
    except CheckpointMismatch as e:
        raise CommandError(f"checkpoint mismatch: {e}") from None
    except OSError as e:
        raise CommandError(f"cannot read checkpoint: {e}") from None
    probs = model.predict_proba(args.field, args.description)
    best = int(np.argmax(probs))
    print(f"{classes[best]}\t{probs[best]:.6f}")
    for name, p in zip(classes, probs):
        print(f"  {name:<20} {p:.6f}")
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser():
    p = argparse.ArgumentParser(prog="rfclink", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    f = sub.add_parser("fetch", help="download RFCs into a cache directory")
    f.add_argument("--rfc", type=_positive_int, nargs="+", required=True, metavar="N")
    f.add_argument("--cache", type=Path, required=True)
    f.add_argument("--base-uri", default=corpus.DEFAULT_BASE_URI,
                   help="URI template with {number} (default: %(default)s)")
    f.set_defaults(func=cmd_fetch)

    f = sub.add_parser("parse", help="extract the header-field catalog of a cached RFC")
    f.add_argument("--rfc", type=_positive_int, required=True, metavar="N")
    f.add_argument("--cache", type=Path, required=True)
    f.add_argument("--out", type=Path, required=True)
    f.set_defaults(func=cmd_parse)

    f = sub.add_parser("build-dataset", help="join a catalog with annotations into samples")
    f.add_argument("--catalog", type=Path, required=True)
    f.add_argument("--annotations", type=Path, required=True)
    f.add_argument("--schema", type=Path, required=True)
    f.add_argument("--out", type=Path, required=True)
    f.set_defaults(func=cmd_build_dataset)

    for name, func, help_text in (("train", cmd_train, "train one model on all samples"),
                                  ("evaluate", cmd_evaluate, "k-fold cross-validation")):
        f = sub.add_parser(name, help=help_text)
        f.add_argument("--data", type=Path, required=True)
        f.add_argument("--schema", type=Path, required=True)
        f.add_argument("--model-kind", choices=MODEL_KINDS, required=True)
        f.add_argument("--config", type=Path, help="flat key=value settings file")
        f.add_argument("--out", type=Path, required=True)
        if name == "train":
            f.add_argument("--seed", type=int, default=42)
        else:
            f.add_argument("--folds", type=int, default=10)
            f.add_argument("--seed", type=int, nargs="+", default=[42],
                           help="one cross-validation run per seed")
        f.set_defaults(func=func)

    f = sub.add_parser("link", help="classify one header field with a trained checkpoint")
    f.add_argument("--checkpoint", type=Path, required=True)
    f.add_argument("--field", required=True)
    f.add_argument("--description", required=True)
    f.set_defaults(func=cmd_link)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "folds", 2) < 2:
        parser.error("--folds must be at least 2")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as e:
        print(f"rfclink {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
