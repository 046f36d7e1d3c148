"""Command-line surface: dataset synthesis, pipeline runs and re-scoring.

Subcommands: ``synth``, ``run``, ``eval`` plus the standalone stage commands
``anchors``, ``graphs``, ``complete`` and ``assign`` (each equivalent to
``run --stage X`` with that stage's artifact written by default).  Exit
codes: 0 success, 1 usage or configuration, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .assign import read_retagged, write_retagged
from .completion import CompletionNumericsError, save_checkpoint, write_trace_csv
from .config import (
    ANCHOR_MODES,
    R_MODES,
    ConfigError,
    format_config,
    merge_config,
    parse_config_file,
)
from .data import (
    DataFormatError,
    DatasetPaths,
    MissingFeatureError,
    TaxonomyCycleError,
    load_dataset,
)
from .evaluate import build_report, load_ground_truth, scores_from_predictions
from .graphs import write_sparse_text
from .pipeline import CACHE_DIR_NAME, STAGES, Pipeline, write_anchor_units
from .planted import PlantedConfig, generate_planted, write_planted
from .report import render_run_figures

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

RETAGGED_FILE = "retagged.tsv"
METRICS_FILE = "metrics.json"
METRICS_CSV_FILE = "metrics.csv"
TRACE_FILE = "trace.csv"
CHECKPOINT_FILE = "checkpoint.sgtc"
ANCHORS_FILE = "anchors.tsv"
MATRIX_FILES = {
    "image_inter": "image_inter.txt",
    "user_inter": "user_inter.txt",
    "image_intra": "image_intra.txt",
    "user_intra": "user_intra.txt",
    "tag_intra": "tag_intra.txt",
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _comma_ints(text: str) -> tuple:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _comma_strings(text: str) -> tuple:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


_FLOAT_OVERRIDES = (
    "sigma",
    "inter_threshold",
    "a1",
    "a2",
    "alpha",
    "beta",
    "lambda1",
    "lambda2",
    "rel_tol",
    "init_noise_scale",
    "gamma",
)
_INT_OVERRIDES = ("c_i", "c_u", "m_c", "max_iters", "s", "k", "seed")


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="dataset directory with the four tsv files")
    parser.add_argument("--out", required=True, help="directory for artifacts and the stage cache")
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--no-cache", action="store_true", help="recompute every stage")
    parser.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    parser.add_argument(
        "--print-config", action="store_true", help="print the effective configuration to stdout"
    )
    for name in _FLOAT_OVERRIDES:
        parser.add_argument(f"--{name.replace('_', '-')}", type=float, default=None)
    for name in _INT_OVERRIDES:
        parser.add_argument(f"--{name.replace('_', '-')}", type=int, default=None)
    parser.add_argument("--anchor-mode", choices=ANCHOR_MODES, default=None)
    parser.add_argument("--ap-r-mode", choices=R_MODES, default=None)
    parser.add_argument("--l2-normalize", choices=("true", "false"), default=None)
    parser.add_argument("--cutoffs", type=_comma_ints, default=None, metavar="N,N,...")
    parser.add_argument("--queries", type=_comma_strings, default=None, metavar="TAG,TAG,...")
    parser.add_argument(
        "--anchors-out",
        nargs="?",
        const=ANCHORS_FILE,
        default=None,
        metavar="PATH",
        help="also dump the selected anchor units (default name anchors.tsv)",
    )
    parser.add_argument(
        "--trace-out", default=None, metavar="PATH", help="objective trace location"
    )


def _effective_config(args):
    file_overrides = parse_config_file(args.config) if args.config else {}
    flags = {name: getattr(args, name) for name in _FLOAT_OVERRIDES + _INT_OVERRIDES}
    flags["anchor_mode"] = args.anchor_mode
    flags["ap_r_mode"] = args.ap_r_mode
    flags["cutoffs"] = args.cutoffs
    flags["queries"] = args.queries
    if args.l2_normalize is not None:
        flags["l2_normalize"] = args.l2_normalize == "true"
    return merge_config(file_overrides, flags)


def _cmd_synth(args) -> int:
    try:
        config = PlantedConfig(
            images=args.images,
            users=args.users,
            tags=args.tags,
            clusters=args.clusters,
            tags_per_cluster=args.tags_per_cluster,
            missing_rate=args.missing,
            noise_rate=args.noise,
            feature_dim=args.feature_dim,
            feature_noise=args.feature_noise,
            groups_per_cluster=args.groups_per_cluster,
            seed=args.seed,
        )
    except ValueError as exc:  # generator preconditions are usage errors here
        raise ConfigError(str(exc)) from None
    write_planted(generate_planted(config), args.out)
    logger.info("wrote planted dataset to %s", args.out)
    return EXIT_OK


def _remove_partial(written) -> None:
    for path in written:
        try:
            Path(path).unlink()
        except OSError:
            pass


def _out_path(out: Path, value) -> Path:
    value = Path(value)
    return value if value.is_absolute() else out / value


def _execute(args, stage, *, anchors_out, matrices_out, checkpoint_out, trace_out, retag_out):
    """Shared runner behind ``run`` and the standalone stage commands."""
    config = _effective_config(args)
    if args.print_config:
        sys.stdout.write(format_config(config))
    dataset = load_dataset(DatasetPaths.in_dir(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = None if args.no_cache else out / CACHE_DIR_NAME
    pipe = Pipeline(dataset, config, cache_dir=cache_dir)

    anchors_path = getattr(args, "anchors_out", None)
    anchors_path = _out_path(out, anchors_path or ANCHORS_FILE) if anchors_out or anchors_path else None
    trace_path = _out_path(out, getattr(args, "trace_out", None) or TRACE_FILE)

    last = stage if stage is not None else "assign"
    to_run = STAGES[: STAGES.index(last) + 1]
    written: list = []
    current = None
    try:
        for current in to_run:
            pipe.run_stage(current)
            if current == "anchors" and anchors_path is not None:
                written.append(
                    write_anchor_units(anchors_path, pipe.anchors(), dataset.vocabulary)
                )
            if current == "graphs" and matrices_out:
                adjacency = pipe.adjacency()
                for attr, filename in MATRIX_FILES.items():
                    write_sparse_text(out / filename, getattr(adjacency, attr))
                    written.append(out / filename)
            if current == "complete":
                state = pipe.completion()
                if trace_out:
                    write_trace_csv(trace_path, state.trace)
                    written.append(trace_path)
                if checkpoint_out:
                    save_checkpoint(out / CHECKPOINT_FILE, state)
                    written.append(out / CHECKPOINT_FILE)
            if current == "assign" and retag_out:
                result = pipe.assignment()
                write_retagged(out / RETAGGED_FILE, result.rankings, dataset.vocabulary)
                written.append(out / RETAGGED_FILE)

        report = None
        if stage is None and getattr(args, "gt", None):
            truth = load_ground_truth(args.gt)
            report = pipe.report(truth)
            report.write_json(out / METRICS_FILE)
            written.append(out / METRICS_FILE)
            if args.metrics_csv:
                report.write_csv(out / METRICS_CSV_FILE)
                written.append(out / METRICS_CSV_FILE)
            logger.info("average F-score %.4f", report.average_fscore)
        if not args.no_figures:
            trace = pipe.completion().trace if "complete" in to_run else None
            written.extend(render_run_figures(out, trace=trace, report=report))
    except Exception as exc:
        logger.error("stage %s failed: %s", current, exc)
        _remove_partial(written)
        raise
    return EXIT_OK


def _cmd_run(args) -> int:
    return _execute(
        args,
        args.stage,
        anchors_out=args.stage == "anchors",
        matrices_out=args.dump_matrices,
        checkpoint_out=args.stage == "complete",
        trace_out=args.stage in (None, "complete"),
        retag_out=args.stage in (None, "assign"),
    )


def _stage_command(stage, **artifacts):
    def handler(args) -> int:
        return _execute(args, stage, **artifacts)

    return handler


def _cmd_eval(args) -> int:
    scored = read_retagged(args.retagged)
    truth = load_ground_truth(args.gt)
    predictions = {image: tuple(tag for tag, _ in entries) for image, entries in scored.items()}
    queries = tuple(args.queries or ())
    scores = image_ids = tag_ids = None
    if queries:
        image_ids = sorted(scored)
        tag_ids = sorted({tag for entries in scored.values() for tag, _ in entries} | set(queries))
        scores = scores_from_predictions(scored, image_ids, tag_ids)
    report = build_report(
        predictions,
        truth,
        scores=scores,
        image_ids=image_ids,
        tag_ids=tag_ids,
        queries=queries,
        cutoffs=args.cutoffs or (10, 20, 50, 100),
        r_mode=args.ap_r_mode or "topk",
    )
    out = Path(args.out) if args.out else Path(args.retagged).parent / METRICS_FILE
    report.write_json(out)
    if args.metrics_csv:
        report.write_csv(out.parent / METRICS_CSV_FILE)
    if not args.no_figures:
        render_run_figures(out.parent, report=report)
    logger.info("average F-score %.4f", report.average_fscore)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="sugartc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a planted synthetic dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--images", type=int, default=200)
    synth.add_argument("--users", type=int, default=40)
    synth.add_argument("--tags", type=int, default=30)
    synth.add_argument("--clusters", type=int, default=5)
    synth.add_argument("--tags-per-cluster", type=int, default=10)
    synth.add_argument("--missing", type=float, default=0.3)
    synth.add_argument("--noise", type=float, default=0.1)
    synth.add_argument("--feature-dim", type=int, default=16)
    synth.add_argument("--feature-noise", type=float, default=0.25)
    synth.add_argument("--groups-per-cluster", type=int, default=3)
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(func=_cmd_synth)

    run = sub.add_parser("run", help="execute the pipeline end-to-end")
    _add_run_options(run)
    run.add_argument("--gt", help="ground-truth pairs; enables metrics.json")
    run.add_argument("--stage", choices=STAGES, default=None, help="stop after this stage")
    run.add_argument("--dump-matrices", action="store_true", help="write the five adjacency files")
    run.add_argument("--metrics-csv", action="store_true", help="also write metrics.csv")
    run.set_defaults(func=_cmd_run)

    anchors = sub.add_parser("anchors", help="select anchor units and write anchors.tsv")
    _add_run_options(anchors)
    anchors.set_defaults(
        func=_stage_command(
            "anchors",
            anchors_out=True,
            matrices_out=False,
            checkpoint_out=False,
            trace_out=False,
            retag_out=False,
        )
    )

    graphs = sub.add_parser("graphs", help="build and write the five adjacency matrices")
    _add_run_options(graphs)
    graphs.set_defaults(
        func=_stage_command(
            "graphs",
            anchors_out=False,
            matrices_out=True,
            checkpoint_out=False,
            trace_out=False,
            retag_out=False,
        )
    )

    complete = sub.add_parser("complete", help="solve the completion and write the checkpoint")
    _add_run_options(complete)
    complete.set_defaults(
        func=_stage_command(
            "complete",
            anchors_out=False,
            matrices_out=False,
            checkpoint_out=True,
            trace_out=True,
            retag_out=False,
        )
    )

    assign = sub.add_parser("assign", help="rank tags for every image and write retagged.tsv")
    _add_run_options(assign)
    assign.set_defaults(
        func=_stage_command(
            "assign",
            anchors_out=False,
            matrices_out=False,
            checkpoint_out=False,
            trace_out=False,
            retag_out=True,
        )
    )

    evaluate = sub.add_parser("eval", help="re-score an existing retagged file")
    evaluate.add_argument("--retagged", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--out", help="metrics path (default: metrics.json beside the input)")
    evaluate.add_argument("--queries", type=_comma_strings, default=None, metavar="TAG,TAG,...")
    evaluate.add_argument("--cutoffs", type=_comma_ints, default=None, metavar="N,N,...")
    evaluate.add_argument("--ap-r-mode", choices=R_MODES, default=None)
    evaluate.add_argument("--metrics-csv", action="store_true")
    evaluate.add_argument("--no-figures", action="store_true")
    evaluate.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except CompletionNumericsError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (DataFormatError, TaxonomyCycleError, MissingFeatureError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except FileNotFoundError as exc:
        logger.error("missing file: %s", exc)
        return EXIT_DATA
    except (ValueError, ArithmeticError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
