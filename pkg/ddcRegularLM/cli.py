# -*- coding: utf-8 -*-
"""
Command-line entry point.

Exit codes: 0 on success, 1 when an operation fails (the last line of
standard error is a JSON object naming the error), 2 on usage errors.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence
from pydantic import ValidationError
from .analysis import analyze, truncated_sums
from .automaton import (
    geometric_automaton,
    load_automaton,
    save_automaton,
    two_branch_automaton,
    validate,
)
from .dataset import build_dataset, read_corpus, write_corpus
from .evaluation import (
    ScoreFile,
    exact_kl,
    ingest_external_scores,
    kl_estimate,
    read_results,
    score_with_automaton,
    write_scores,
)
from .exceptions import AutomatonException, CustomBaseException
from .experiment import (
    export_default_plots,
    export_plot,
    plot_file_name,
    run_experiment,
    summarize,
    write_plot_grid,
)
from .generation import FamilyKey, filter_by_expected_length, generate_family, median_expected_length, write_family_manifest
from .regression import (
    build_design_matrix,
    fit_dropping_dependent,
    ols_fit,
    regression_report,
    write_report_tsv,
)
from .rnn import load_checkpoint, save_checkpoint, score, train
from .settings import GenerationConfig, TrainConfig, load_experiment_config


log = logging.getLogger(__name__)

LOG_FORMAT = "[%(asctime)s.%(msecs)03d]:[%(levelname)s]:%(message)s"
LOG_DATEFMT = "%Y-%m-%dT%H:%M:%S"
BUILTINS = {"geometric": geometric_automaton, "two-branch": two_branch_automaton}


def _configure_logging(verbose: bool) -> None:
    logger = logging.getLogger("ddcRegularLM")
    if not any(getattr(h, "_rlm_cli", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        handler._rlm_cli = True
        logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def _print_json(data) -> None:
    sys.stdout.write(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {value}")
    return value


def _cmd_generate(args) -> int:
    if args.builtin:
        dpfsa = BUILTINS[args.builtin]().with_name(args.builtin)
        path = save_automaton(dpfsa, Path(args.out) / f"{args.builtin}.json")
        _print_json({"automaton_id": dpfsa.name, "file": str(path)})
        return 0
    if args.states is None or args.alphabet is None:
        raise argparse.ArgumentTypeError("--states and --alphabet are required without --builtin")

    overrides = {"state_sizes": [args.states], "alphabet_sizes": [args.alphabet]}
    if args.ranks is not None:
        overrides["rank_grid"] = args.ranks
    if args.logit_std is not None:
        overrides["logit_std"] = args.logit_std
    if args.length_filter is not None:
        overrides["length_filter"] = args.length_filter
    if args.threshold is not None:
        overrides["length_filter_threshold"] = args.threshold
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    config = GenerationConfig(**overrides)

    key = FamilyKey(args.states, args.alphabet, args.replicate)
    family = generate_family(config, key)
    threshold = median_expected_length(family) if config.length_filter == "median" else config.length_filter_threshold
    kept = filter_by_expected_length(family, threshold)
    path = write_family_manifest(kept, config, args.out, key)
    _print_json(
        {
            "manifest": str(path),
            "members": [a.name for a in kept],
            "filtered_out": sorted({a.name for a in family} - {a.name for a in kept}),
        }
    )
    return 0


def _cmd_sample(args) -> int:
    dpfsa = load_automaton(args.automaton)
    dataset = build_dataset(
        dpfsa,
        seed=args.seed if args.seed is not None else 0,
        size=args.size,
        max_len=args.max_len,
        min_test=args.min_test,
    )
    write_corpus(dataset, args.out)
    _print_json({"corpus": str(args.out), "train": len(dataset.train), "test": len(dataset.test), **dataset.stats.to_dict()})
    return 0


def _cmd_analyze(args) -> int:
    dpfsa = load_automaton(args.automaton)
    violations = validate(dpfsa)
    if violations:
        raise AutomatonException(
            f"{dpfsa.name}: " + "; ".join(f"{v.kind} at {v.location}: {v.message}" for v in violations)
        )
    report = analyze(dpfsa)
    sys.stdout.write(f"H={report.entropy_bits!r} bits, E[len]={report.expected_length!r}\n")
    if args.json:
        data = report.to_dict()
        if args.max_len is not None:
            sums = truncated_sums(dpfsa, args.max_len)
            data["truncated"] = {"max_len": sums.max_len, "mass": sums.mass, "tail_mass": sums.tail_mass}
        _print_json(data)
    return 0


def _cmd_train(args) -> int:
    dataset = read_corpus(args.corpus)
    overrides = {
        k: v
        for k, v in {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "seed": args.seed,
            "grad_clip": args.grad_clip,
        }.items()
        if v is not None
    }
    config = TrainConfig(**overrides)
    alphabet_size = args.alphabet_size
    if alphabet_size is None:
        alphabet_size = load_automaton(args.automaton).alphabet_size if args.automaton else None
    if alphabet_size is None:
        raise argparse.ArgumentTypeError("--alphabet-size or --automaton is required")
    result = train(dataset.train, alphabet_size, args.hidden_size, config)
    save_checkpoint(
        result.model,
        args.out,
        metadata={"epoch_losses": result.epoch_losses, "steps": result.steps, "train_seed": config.seed},
    )
    _print_json({"checkpoint": str(args.out), "epoch_losses": result.epoch_losses, "status": result.status})
    return 0


def _cmd_score(args) -> int:
    dataset = read_corpus(args.corpus)
    if args.automaton:
        dpfsa = load_automaton(args.automaton)
        scores = score_with_automaton(dpfsa, dataset.test)
    else:
        lm = load_checkpoint(args.checkpoint)
        scores = ScoreFile(
            model_id=Path(args.checkpoint).stem,
            automaton_id=dataset.source_automaton_id,
            records=tuple(score(lm, dataset.test, full_distributions=args.full_distributions)),
        )
    write_scores(scores, args.out)
    _print_json({"scores": str(args.out), "n_strings": len(scores.records)})
    return 0


def _cmd_kl(args) -> int:
    dpfsa = load_automaton(args.automaton)
    if args.against:
        kl_bits, tail = exact_kl(dpfsa, load_automaton(args.against), max_len=args.max_len)
        _print_json({"kl_bits": kl_bits, "tail_mass": tail, "max_len": args.max_len})
        return 0
    if not (args.scores and args.corpus):
        raise argparse.ArgumentTypeError("--scores and --corpus are required without --against")
    dataset = read_corpus(args.corpus)
    scores = ingest_external_scores(args.scores, dataset)
    _print_json(kl_estimate(dpfsa, scores, dataset).to_dict())
    return 0


def _cmd_regress(args) -> int:
    records = read_results(args.results)
    dm = build_design_matrix(records, exclude=args.drop or ())
    if args.drop_dependent:
        fit, dm, dropped = fit_dropping_dependent(dm)
        if dropped:
            sys.stdout.write(f"dropped aliased predictors: {', '.join(dropped)}\n")
    else:
        fit = ols_fit(dm)
    sys.stdout.write(regression_report(fit, dm) + "\n")
    if args.out:
        write_report_tsv(fit, dm, args.out)
    return 0


def _cmd_export_plot(args) -> int:
    if args.all:
        written = export_default_plots(args.results, args.out)
        _print_json({"files": [str(p) for p in written]})
        return 0
    if args.rows is None:
        raise argparse.ArgumentTypeError("--rows is required without --all")
    grid = export_plot(args.results, args.rows, args.cols, args.value)
    out = Path(args.out)
    if out.suffix != ".tsv":
        out = out / plot_file_name(grid)
    written = write_plot_grid(grid, out)
    _print_json({"files": [str(p) for p in written]})
    return 0


def _cmd_run(args) -> int:
    overrides = {"output_dir": args.output_dir, "parallelism": args.parallelism, "replicates": args.replicates}
    if args.d_grid is not None:
        overrides["d_grid"] = args.d_grid
    config = load_experiment_config(args.config, **overrides)
    if args.seed is not None:
        config = config.model_copy(
            update={"generation": config.generation.model_copy(update={"master_seed": args.seed})}
        )
    result = run_experiment(config, resume=not args.no_resume)
    _print_json(
        {
            "manifest": str(result.manifest_path),
            "results": str(result.results_path),
            "ok": result.n_ok,
            "failed": result.n_failed,
            "skipped": result.n_skipped,
            "mean_kl_by_D": {str(k): v for k, v in summarize(read_results(result.results_path)).items()},
        }
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None, help="seed for this step's random stream")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="ddcRegularLM", description="Learnability of regular language models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="sample a rank-truncated automaton family")
    p.add_argument("--states", type=int)
    p.add_argument("--alphabet", type=int)
    p.add_argument("--ranks", type=_int_list, help="comma-separated rank grid")
    p.add_argument("--logit-std", type=float)
    p.add_argument("--length-filter", choices=["fixed", "median"])
    p.add_argument("--threshold", type=float, help="expected-length threshold for the fixed filter")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--builtin", choices=sorted(BUILTINS))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("sample", parents=[common], help="sample a corpus and split it")
    p.add_argument("automaton")
    p.add_argument("--size", type=int, default=20000)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--min-test", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("analyze", parents=[common], help="closed-form entropy and expected length")
    p.add_argument("automaton")
    p.add_argument("--json", action="store_true", help="also print the full report")
    p.add_argument("--max-len", type=int, help="add exact length-truncated sums to the report")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("train", parents=[common], help="train an RNN language model")
    p.add_argument("corpus")
    p.add_argument("--hidden-size", "-D", type=int, required=True)
    p.add_argument("--alphabet-size", type=int)
    p.add_argument("--automaton", help="read the alphabet size from this automaton file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("score", parents=[common], help="score the test split")
    p.add_argument("corpus")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--automaton", help="score with the automaton itself")
    p.add_argument("--full-distributions", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("kl", parents=[common], help="KL divergence estimate in bits per string")
    p.add_argument("automaton")
    p.add_argument("--scores")
    p.add_argument("--corpus")
    p.add_argument("--against", help="exact KL to another automaton by dynamic programming")
    p.add_argument("--max-len", type=int, default=40)
    p.set_defaults(func=_cmd_kl)

    p = sub.add_parser("regress", parents=[common], help="OLS of KL on the automaton predictors")
    p.add_argument("results")
    p.add_argument("--drop", nargs="*", default=[], help="predictors to leave out")
    p.add_argument("--drop-dependent", action="store_true", help="remove aliased predictors and refit")
    p.add_argument("--out", help="report TSV")
    p.set_defaults(func=_cmd_regress)

    p = sub.add_parser("export-plot", parents=[common], help="grid of mean KL or entropy")
    p.add_argument("results")
    p.add_argument("--rows")
    p.add_argument("--cols")
    p.add_argument("--value", default="kl_bits")
    p.add_argument("--all", action="store_true", help="write the standard set of grids")
    p.add_argument("--out", required=True, help="TSV file or directory")
    p.set_defaults(func=_cmd_export_plot)

    p = sub.add_parser("run", parents=[common], help="run the whole experiment grid")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--output-dir")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--d-grid", type=_int_list)
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=_cmd_run)
    return parser


def _fail(error: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": error, "message": message}) + "\n")
    return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))
    except CustomBaseException as e:
        return _fail(**e.to_dict())
    except ValidationError as e:
        return _fail("ValidationError", str(e))
    except OSError as e:
        return _fail(type(e).__name__, str(e))
