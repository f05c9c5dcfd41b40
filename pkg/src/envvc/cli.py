"""Command-line entry point: ``envvc <subcommand> [flags]``.

Exit codes: 0 success, 1 usage, 2 missing artifact, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_RUNTIME = 0, 1, 2, 3

SUBCOMMANDS = ("gen-corpus", "train-clap", "train-backbone", "train-adapter", "build-tkb", "convert", "eval", "viz")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract reserves 2 for missing artifacts
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config (defaults when omitted)")
    common.add_argument("--seed", type=int, help="root seed; overrides the config")
    common.add_argument("--work-dir", type=Path, help="artifact directory; overrides paths.work_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="envvc", description="Text-driven voice conversion with environment control.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-corpus", parents=[common], help="render the synthetic corpus and manifest")
    p.add_argument("--out", type=Path, help="corpus directory (default <work-dir>/corpus)")
    sub.add_parser("train-clap", parents=[common], help="train the CLAP stand-in and the speaker encoder")
    sub.add_parser("train-backbone", parents=[common], help="train the latent diffusion denoiser")
    p = sub.add_parser("train-adapter", parents=[common], help="train the timbre adapter")
    p.add_argument("--loss-orientation", choices=("conventional", "paper"))
    sub.add_parser("build-tkb", parents=[common], help="build the timbre knowledge base")

    p = sub.add_parser("convert", parents=[common], help="convert one wav")
    p.add_argument("--src", type=Path, required=True)
    p.add_argument("--env-text", required=True)
    p.add_argument("--spk-text", required=True)
    p.add_argument("--omega-env", type=float)
    p.add_argument("--omega-speech", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="score conversions of held-out clips")
    p.add_argument("--out", type=Path, help="report directory (default <work-dir>/eval)")
    p = sub.add_parser("viz", parents=[common], help="PCA plots of raw vs adapted embeddings")
    p.add_argument("--out", type=Path, help="plot directory (default <work-dir>/viz)")
    return parser


def _config(args):
    from envvc.config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.work_dir is not None:
        cfg.paths.work_dir = str(args.work_dir)
    if getattr(args, "loss_orientation", None):
        cfg.train.adapter.loss_orientation = args.loss_orientation
    if args.command == "convert":
        s = cfg.sampler
        s.omega_env = s.omega_env if args.omega_env is None else args.omega_env
        s.omega_speech = s.omega_speech if args.omega_speech is None else args.omega_speech
        s.steps = s.steps if args.steps is None else args.steps
    return cfg.validate()


def _dispatch(args) -> None:
    from envvc.audio import write_wav
    from envvc.pipeline import Run

    cfg = _config(args)
    run = Run(cfg)
    cmd = args.command
    if cmd == "gen-corpus":
        print(run.gen_corpus(args.out))
    elif cmd == "train-clap":
        for path in run.train_encoders():
            print(path)
    elif cmd == "train-backbone":
        print(run.train_backbone())
    elif cmd == "train-adapter":
        print(run.train_adapter())
    elif cmd == "build-tkb":
        print(run.build_tkb())
    elif cmd == "convert":
        conv = run.convert(args.src, args.env_text, args.spk_text)
        print(write_wav(conv.audio, args.out))
        print(f"retrieved speaker {conv.speaker_id}")
    elif cmd == "eval":
        report = run.evaluate(args.out)
        print(report.table())
    elif cmd == "viz":
        paths, stats = run.visualize(args.out)
        for path in paths:
            print(path)
        for k, v in stats.items():
            print(f"{k:<20} {v:.4f}")


def main(argv=None) -> int:
    from envvc.config import ConfigError
    from envvc.pipeline import MissingArtifact

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"envvc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"envvc: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifact as exc:
        print(f"envvc: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"envvc: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # one-line diagnostic instead of a traceback
        if args.verbose:
            logging.exception("failed")
        print(f"envvc: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
