"""Command-line interface.

Subcommands: synth (planted-model corpus), train (fit a semantic model),
rank (joint or visual-only ranking), evaluate (recall report),
zero-shot-split (filter test annotations to unseen triples).  Every
command writes a run manifest next to its primary output.  Exit codes:
0 success, 1 runtime error, 2 input validation error.  Set RELRANK_LOG to
debug/info/warning/error for stderr verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from relrank import __version__
from relrank.corpus import generate_corpus
from relrank.detection import load_detections, save_detections, synthesize_detections
from relrank.errors import InputValidationError, RelrankError
from relrank.evaluation import (
    ALL_SETTINGS,
    DEFAULT_KS,
    EvalSetting,
    evaluate,
    write_report,
)
from relrank.kg import (
    aggregate_counts,
    load_annotations,
    load_vocabulary,
    make_split,
    save_annotations,
    save_labels,
    zero_shot_filter,
)
from relrank.manifest import RunManifest, sha256_file, write_manifest
from relrank.models import init_model, load_checkpoint, save_checkpoint
from relrank.ranking import (
    DEFAULT_PRUNE,
    SemanticPrior,
    load_ranked,
    rank_image,
    write_ranked,
)
from relrank.training import TrainConfig, select_rank, train

logger = logging.getLogger(__name__)


def _configure_logging() -> None:
    level_name = os.environ.get("RELRANK_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise InputValidationError(f"RELRANK_LOG={level_name!r} is not a log level")
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _vocab_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--entities", required=True, help="entity label file, one per line")
    parser.add_argument("--relations", required=True, help="relation label file, one per line")


def _manifest_for(command: str, args: argparse.Namespace, inputs: list[str], outputs: list[str], started: float) -> RunManifest:
    config = {
        k: v for k, v in sorted(vars(args).items()) if k != "func" and not k.startswith("_")
    }
    return RunManifest(
        command=command,
        argv=sys.argv[1:],
        config=config,
        seed=getattr(args, "seed", None),
        inputs={p: sha256_file(p) for p in inputs},
        outputs=outputs,
        version=__version__,
        wall_clock_s=time.perf_counter() - started,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(
        n_entities=args.entities,
        n_relations=args.relations,
        n_images=args.images,
        rank=args.rank,
        samples=args.samples,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    vocab = corpus.vocabulary
    paths = {
        "entities": out_dir / "entities.txt",
        "relations": out_dir / "relations.txt",
        "train": out_dir / "train_annotations.jsonl",
        "test": out_dir / "test_annotations.jsonl",
        "detections": out_dir / "test_detections.jsonl",
    }
    save_labels(paths["entities"], vocab.entities)
    save_labels(paths["relations"], vocab.relations)
    save_annotations(paths["train"], corpus.train_tuples, vocab)
    save_annotations(paths["test"], corpus.test_tuples, vocab)
    detections = synthesize_detections(
        list(corpus.test_tuples),
        vocab,
        noise=args.noise,
        seed=args.seed,
        predicate_noise=args.predicate_noise,
    )
    save_detections(paths["detections"], detections, vocab)
    manifest = _manifest_for("synth", args, [], [str(p) for p in paths.values()], started)
    write_manifest(out_dir / "synth.manifest.json", manifest)
    print(
        f"synth: {len(corpus.train_tuples)} train tuples, {len(corpus.test_tuples)} "
        f"test tuples, {len(detections)} detection images -> {out_dir}"
    )
    return 0


def _train_config(args: argparse.Namespace) -> TrainConfig:
    if args.config:
        config = TrainConfig.from_json(args.config)
    else:
        config = TrainConfig()
    overrides = {
        "learning_rate": args.learning_rate,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "negative_ratio": args.negative_ratio,
        "weight_decay": args.weight_decay,
        "seed": args.seed,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(config, name, value)
    config.__post_init__()
    return config


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vocab = load_vocabulary(args.entities, args.relations)
    tuples = load_annotations(args.annotations, vocab)
    table = aggregate_counts(tuples, vocab, smoothing=args.smoothing)
    split = make_split(table, fraction=args.heldout_fraction, seed=args.seed or 0)
    config = _train_config(args)

    if args.select_rank:
        ranks = [int(r) for r in args.select_rank.split(",") if r]
        best_rank, nlls = select_rank(
            args.model, split, ranks, config, hidden_dim=args.hidden_dim
        )
        print("rank  heldout_nll")
        for rank, nll in zip(ranks, nlls):
            marker = "  <- best" if rank == best_rank else ""
            print(f"{rank:>4}  {nll:.6f}{marker}")
        rank = best_rank
    else:
        rank = args.rank

    model = init_model(
        args.model,
        table.n_entities,
        table.n_relations,
        rank=rank,
        hidden_dim=args.hidden_dim,
        seed=config.seed,
    )
    fitted, report = train(model, split, config)
    save_checkpoint(args.checkpoint, fitted)
    outputs = [args.checkpoint]
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2)
            fh.write("\n")
        outputs.append(args.report)
    best_nll = report.heldout_nll[report.best_epoch]
    nll_text = "n/a (no held-out triples)" if best_nll is None else f"{best_nll:.6f}"
    print(
        f"train: {args.model} rank {rank}, {config.epochs} epochs, "
        f"best epoch {report.best_epoch}, heldout NLL {nll_text}"
    )
    manifest = _manifest_for(
        "train", args, [args.annotations, args.entities, args.relations], outputs, started
    )
    write_manifest(args.checkpoint + ".manifest.json", manifest)
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vocab = load_vocabulary(args.entities, args.relations)
    inputs = [args.detections, args.entities, args.relations]
    detections = load_detections(args.detections, vocab, allow_self_pairs=args.allow_self_pairs)

    prior = None
    marginals = None
    if not args.visual_only:
        if not args.annotations:
            raise InputValidationError(
                "joint ranking needs --annotations (training data for marginals)"
            )
        tuples = load_annotations(args.annotations, vocab)
        marginals = aggregate_counts(tuples, vocab, smoothing=args.smoothing)
        inputs.append(args.annotations)
        if args.prior == "counts":
            prior = SemanticPrior(
                source=marginals, beta=args.beta, count_offset=args.count_offset
            )
        else:
            if not args.checkpoint:
                raise InputValidationError("model prior needs --checkpoint")
            model = load_checkpoint(args.checkpoint)
            if (
                model.n_entities != len(vocab.entities)
                or model.n_relations != len(vocab.relations)
            ):
                raise InputValidationError(
                    f"checkpoint vocabulary ({model.n_entities} entities, "
                    f"{model.n_relations} relations) does not match label files "
                    f"({len(vocab.entities)}, {len(vocab.relations)})"
                )
            prior = SemanticPrior(source=model, beta=args.beta)
            inputs.append(args.checkpoint)
        prior.log_eta_table()  # build the shared cache once, before any threads

    prune = None if args.prune is not None and args.prune <= 0 else args.prune

    def rank_one(det):
        return rank_image(
            prior, marginals, det, k=args.k, prune=prune, visual_only=args.visual_only
        )

    threads = args.threads or os.cpu_count() or 1
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranked = list(pool.map(rank_one, detections))
    else:
        ranked = [rank_one(det) for det in detections]
    write_ranked(args.out, list(zip(detections, ranked)), vocab)
    print(f"rank: {sum(len(r) for r in ranked)} predictions over {len(detections)} images -> {args.out}")
    manifest = _manifest_for("rank", args, inputs, [args.out], started)
    write_manifest(args.out + ".manifest.json", manifest)
    return 0


def _parse_settings(text: str) -> tuple[EvalSetting, ...]:
    if text == "all":
        return ALL_SETTINGS
    try:
        return tuple(EvalSetting(part) for part in text.split(",") if part)
    except ValueError as exc:
        raise InputValidationError(f"unknown setting in {text!r}: {exc}") from exc


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vocab = load_vocabulary(args.entities, args.relations)
    ranked = load_ranked(args.ranked)
    gts = load_annotations(args.ground_truth, vocab)
    inputs = [args.ranked, args.ground_truth, args.entities, args.relations]
    train_counts = None
    if args.zero_shot:
        if not args.train_annotations:
            raise InputValidationError("--zero-shot needs --train-annotations")
        train_tuples = load_annotations(args.train_annotations, vocab)
        train_counts = aggregate_counts(train_tuples, vocab)
        inputs.append(args.train_annotations)
    ks = tuple(int(k) for k in args.k.split(",") if k)
    report = evaluate(
        ranked,
        gts,
        vocab,
        settings=_parse_settings(args.settings),
        ks=ks,
        zero_shot=args.zero_shot,
        train_counts=train_counts,
    )
    print(report.format_table())
    outputs = []
    if args.report:
        write_report(args.report, report)
        outputs.append(args.report)
        manifest = _manifest_for("evaluate", args, inputs, outputs, started)
        write_manifest(args.report + ".manifest.json", manifest)
    return 0


def cmd_zero_shot_split(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vocab = load_vocabulary(args.entities, args.relations)
    train_tuples = load_annotations(args.train_annotations, vocab)
    test_tuples = load_annotations(args.test_annotations, vocab)
    train_counts = aggregate_counts(train_tuples, vocab)
    unseen = zero_shot_filter(test_tuples, train_counts)
    save_annotations(args.out, unseen, vocab)
    print(
        f"zero-shot-split: {len(unseen)} of {len(test_tuples)} test tuples "
        f"have unseen triples -> {args.out}"
    )
    manifest = _manifest_for(
        "zero-shot-split",
        args,
        [args.train_annotations, args.test_annotations, args.entities, args.relations],
        [args.out],
        started,
    )
    write_manifest(args.out + ".manifest.json", manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relrank",
        description="Visual relationship ranking with semantic count-model priors.",
    )
    parser.add_argument("--version", action="version", version=f"relrank {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-model synthetic corpus")
    p.add_argument("--entities", type=int, required=True, help="number of entity labels")
    p.add_argument("--relations", type=int, required=True, help="number of relation labels")
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--rank", type=int, default=4, help="planted model rank")
    p.add_argument("--samples", type=int, default=None, help="expected tuple count (default 7.5 per image)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.5, help="entity score noise scale")
    p.add_argument("--predicate-noise", type=float, default=None, help="predicate score noise scale (default: --noise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a semantic model to annotation counts")
    _vocab_args(p)
    p.add_argument("--annotations", required=True, help="training annotation JSONL")
    p.add_argument("--model", choices=["distmult", "complex", "multiway", "rescal"], default="distmult")
    p.add_argument("--rank", type=int, default=10)
    p.add_argument("--hidden-dim", type=int, default=None, help="multiway hidden width (default: rank)")
    p.add_argument("--select-rank", default=None, help="comma list of candidate ranks; best by held-out NLL is kept")
    p.add_argument("--heldout-fraction", type=float, default=0.05)
    p.add_argument("--smoothing", type=float, default=1.0, help="Laplace smoothing for marginals")
    p.add_argument("--config", default=None, help="JSON file with TrainConfig fields")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--negative-ratio", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--report", default=None, help="output TrainReport JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="rank candidate six-tuples per image")
    _vocab_args(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--annotations", default=None, help="training annotations for marginals / count prior")
    p.add_argument("--prior", choices=["model", "counts"], default="model")
    p.add_argument("--visual-only", action="store_true")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--prune", type=int, default=DEFAULT_PRUNE, help="labels kept per region/pair; 0 disables pruning")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--count-offset", type=float, default=1.0)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--allow-self-pairs", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="default: available parallelism")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("evaluate", help="recall-at-k report for a ranked file")
    _vocab_args(p)
    p.add_argument("--ranked", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--settings", default="all", help='"all" or comma list: phrase,relationship,predicate,triple')
    p.add_argument("--k", default=",".join(str(k) for k in DEFAULT_KS))
    p.add_argument("--zero-shot", action="store_true")
    p.add_argument("--train-annotations", default=None)
    p.add_argument("--report", default=None, help="output report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("zero-shot-split", help="keep test tuples whose triples never occur in training")
    _vocab_args(p)
    p.add_argument("--train-annotations", required=True)
    p.add_argument("--test-annotations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_zero_shot_split)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except InputValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RelrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
