# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import argparse
import os

from supattn.lib.config import ExperimentConfig
from supattn.lib.data import Dataset, save_dataset, synth_dataset
from supattn.lib.errors import (
    EXIT_OK,
    EXIT_VALIDATION,
    NumericalError,
    SupAttnError,
    ValidationError,
)
from supattn.lib.evaluation import (
    DcfConfig,
    ScoredTrialSet,
    Trial,
    build_trials,
    compute_eer,
    compute_min_dcf,
    det_curve,
    read_embeddings,
    read_trials,
    score_trials,
    write_det_csv,
    write_embeddings,
    write_scores,
    write_trials,
)
from supattn.lib.logging import Log
from supattn.lib.network import ModelShape, load_checkpoint, model_shape_of
from supattn.lib.numerics import seeded_rng, spawn
from supattn.lib.objectives import Objective, Variant
from supattn.lib.pooling import attention_dump, sap
from supattn.lib.training.gradsuite import GRAD_SUITE, run_grad_suite, summarize
from supattn.lib.training.model import embed
from supattn.lib.training.report import MetricsRow, metrics_table
from supattn.lib.training.trainer import (
    evaluate,
    extract_frames,
    load_experiment_data,
    load_experiment_source,
    sweep,
    train,
    write_det_files,
)
from supattn.lib.utils import format_table
from supattn.state import State


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors become ValidationError so they share exit code 1"""

    def error(self, message: str):
        raise ValidationError(f"{self.prog}: {message}")


class SupAttnApplication:
    def __init__(self) -> None:
        self.parser: argparse.ArgumentParser = self._build_parser()

    # ------ PRIVATE METHODS ------ #

    def _build_parser(self) -> argparse.ArgumentParser:
        parser = _ArgumentParser(
            prog=State.APP_ID,
            description="Supervised attentive pooling laboratory for speaker embeddings",
        )
        parser.add_argument("--version", action="version", version=f"%(prog)s {State.VERSION}")
        parser.add_argument("-q", "--quiet", action="store_true", help="no console output")
        parser.add_argument("--log-file", default=None, help="append the log to this file")
        commands = parser.add_subparsers(dest="command", required=True)

        def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
            p.add_argument("--config", help="flat key=value config file")
            p.add_argument(
                "--preset", default="default", choices=["default", "fast", "paper"]
            )
            p.add_argument(
                "--set",
                dest="overrides",
                action="append",
                default=[],
                metavar="KEY=VALUE",
                help="override one config key, may repeat",
            )
            return p

        p = with_config(commands.add_parser("synth", help="write a synthetic dataset"))
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(handler=self.do_synth)

        p = with_config(commands.add_parser("train", help="train and evaluate one model"))
        p.add_argument("--out", required=True, help="run directory")
        p.set_defaults(handler=self.do_train)

        p = with_config(commands.add_parser("evaluate", help="score a checkpoint"))
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--trials", help="trial file, built from held-out data when omitted")
        p.add_argument("--out", help="directory for DET curves and the trial list")
        p.add_argument("--write-embeddings", help="write full-utterance embeddings here")
        p.add_argument("--dump-attention", metavar="DIR", help="per-utterance attention CSVs")
        p.set_defaults(handler=self.do_evaluate)

        p = commands.add_parser("gradcheck", help="finite-difference gradient suite")
        p.add_argument("--seeds", type=int, default=10)
        p.add_argument("--eps", type=float, default=1e-6)
        p.add_argument("--tol", type=float, default=1e-4)
        p.add_argument("--op", action="append", choices=list(GRAD_SUITE), default=None)
        p.set_defaults(handler=self.do_gradcheck)

        p = commands.add_parser("score", help="cosine-score a trial list")
        p.add_argument("--embeddings", required=True)
        p.add_argument("--trials", required=True)
        p.add_argument("--out", required=True, help="score file")
        p.add_argument("--det", help="DET curve CSV")
        p.add_argument("--p-target", type=float, default=0.01)
        p.add_argument("--c-miss", type=float, default=1.0)
        p.add_argument("--c-fa", type=float, default=1.0)
        p.set_defaults(handler=self.do_score)

        p = with_config(commands.add_parser("sweep", help="objective × variant grid"))
        p.add_argument("--out", required=True)
        p.add_argument("--objective", action="append", choices=[o.value for o in Objective])
        p.add_argument("--variant", action="append", choices=[v.value for v in Variant])
        p.add_argument("--workers", type=int, default=None)
        p.set_defaults(handler=self.do_sweep)

        return parser

    def _load_config(self, args: argparse.Namespace) -> ExperimentConfig:
        if args.config:
            config: ExperimentConfig = ExperimentConfig.from_file(args.config)
        else:
            config = ExperimentConfig.preset(args.preset)
        changes: dict[str, str] = {}
        for item in args.overrides:
            if "=" not in item:
                raise ValidationError(f"--set expects KEY=VALUE, got '{item}'")
            key, value = item.split("=", 1)
            changes[key.strip()] = value.strip()
        if changes:
            config = config.copy(**changes)
        config.validate()
        return config

    # ------ PUBLIC METHODS ------ #

    def do_startup(self, args: argparse.Namespace) -> None:
        log_file: str | None = args.log_file
        if args.command in ("train", "sweep"):
            os.makedirs(args.out, exist_ok=True)
            log_file = log_file or os.path.join(args.out, "log.txt")
        Log.init(log_file=log_file, quiet=args.quiet)
        Log.debug(f"Application: Startup, command '{args.command}'")

    def run(self, argv: list[str]) -> int:
        try:
            args: argparse.Namespace = self.parser.parse_args(argv[1:])
            self.do_startup(args)
            return args.handler(args)
        except SupAttnError as e:
            Log.error(str(e))
            return e.exit_code
        except OSError as e:
            Log.error(f"Application: {e}")
            return EXIT_VALIDATION

    # ------ COMMANDS ------ #

    def do_synth(self, args: argparse.Namespace) -> int:
        config: ExperimentConfig = self._load_config(args)
        dataset = synth_dataset(config.synth)
        save_dataset(dataset, args.out)
        Log.info(f"Synth: Wrote {len(dataset)} utterances to '{args.out}'")
        return EXIT_OK

    def do_train(self, args: argparse.Namespace) -> int:
        config: ExperimentConfig = self._load_config(args)
        with open(os.path.join(args.out, "config.txt"), "w") as f:
            f.write(config.to_text())
        report = train(config, args.out)
        Log.info(f"Train: Accuracy {report.train_accuracy:.4f} after {report.steps_run} steps")
        return EXIT_OK

    def do_evaluate(self, args: argparse.Namespace) -> int:
        config: ExperimentConfig = self._load_config(args)
        params, pooling = load_checkpoint(args.checkpoint)
        attentive: bool = pooling == "sap"
        rng = seeded_rng(config.seed)

        if args.trials:
            # A trial list may name any utterance of the source
            dataset: Dataset = load_experiment_source(config)
            trials: list[Trial] = read_trials(args.trials)
        else:
            _, dataset = load_experiment_data(config)
            trials = build_trials(dataset, config.pairs_per_speaker, spawn(rng))

        shape: ModelShape = model_shape_of(params)
        if shape.feature_dim != dataset.feature_dim:
            raise ValidationError(
                f"evaluate: checkpoint expects {shape.feature_dim} features, "
                f"data has {dataset.feature_dim}"
            )
        rows: list[MetricsRow] = evaluate(
            params, attentive, dataset, config.test_durations(), trials, spawn(rng)
        )
        Log.empty(metrics_table(rows))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            write_det_files(rows, args.out)
            write_trials(trials, os.path.join(args.out, "trials.txt"))
        if args.write_embeddings:
            write_embeddings(
                {u.utterance_id: embed(params, u, attentive) for u in dataset.utterances},
                args.write_embeddings,
            )
        if args.dump_attention:
            if not attentive:
                raise ValidationError("evaluate: --dump-attention needs a SAP checkpoint")
            os.makedirs(args.dump_attention, exist_ok=True)
            for u in dataset.utterances:
                out = sap(extract_frames(params, u.features), params.proj, params.context)
                path: str = os.path.join(args.dump_attention, f"{u.utterance_id}.csv")
                attention_dump(out, path, u.informative_mask)
        return EXIT_OK

    def do_gradcheck(self, args: argparse.Namespace) -> int:
        if args.seeds < 1:
            raise ValidationError("gradcheck: --seeds must be ≥ 1")
        results = run_grad_suite(args.seeds, args.eps, args.tol, args.op)
        rows = summarize(results)
        Log.empty(
            format_table(
                ["operation", "seeds", "max_rel_error", "status"],
                [[name, n, f"{worst:.3e}", "ok" if ok else "FAIL"] for name, n, worst, ok in rows],
            )
        )
        failed: list[str] = [name for name, _, _, ok in rows if not ok]
        if failed:
            raise NumericalError(f"GradCheck: failed for {', '.join(failed)}")
        return EXIT_OK

    def do_score(self, args: argparse.Namespace) -> int:
        embeddings = read_embeddings(args.embeddings)
        trials: list[Trial] = read_trials(args.trials)
        scored: ScoredTrialSet = score_trials(trials, embeddings)
        write_scores(scored, args.out)
        if args.det:
            write_det_csv(det_curve(scored), args.det)
        dcf = DcfConfig(p_target=args.p_target, c_miss=args.c_miss, c_fa=args.c_fa)
        eer, eer_threshold = compute_eer(scored)
        min_dcf, dcf_threshold = compute_min_dcf(scored, dcf)
        Log.empty(f"EER {eer:.6f} at threshold {eer_threshold:.6f}")
        Log.empty(
            f"minDCF {min_dcf:.6f} at threshold {dcf_threshold:.6f} "
            f"(p-target={dcf.p_target:g}, c-miss={dcf.c_miss:g}, c-fa={dcf.c_fa:g})"
        )
        return EXIT_OK

    def do_sweep(self, args: argparse.Namespace) -> int:
        config: ExperimentConfig = self._load_config(args)
        objectives = [Objective(o) for o in args.objective] if args.objective else None
        variants = [Variant(v) for v in args.variant] if args.variant else None
        cells = sweep(config, objectives, variants, args.out, args.workers)

        headers: list[str] = ["objective", "variant", "accuracy"]
        durations: list[str] = [row.duration for row in cells[0].report.metrics]
        headers += [f"eer_{d}" for d in durations] + [f"min_dcf_{d}" for d in durations]
        table: str = format_table(
            headers,
            [
                [
                    c.objective.value,
                    c.variant.value,
                    c.report.train_accuracy,
                    *(c.report.metric(d).eer for d in durations),
                    *(c.report.metric(d).min_dcf for d in durations),
                ]
                for c in cells
            ],
        )
        with open(os.path.join(args.out, "sweep.txt"), "w") as f:
            f.write(table + "\n")
        Log.empty(table)
        return EXIT_OK
