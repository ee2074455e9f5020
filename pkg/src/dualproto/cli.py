"""Command-line surface.

Subcommands: synth, run, ablate, gradcheck, inspect, plot.
Exit codes: 0 success, 1 usage error, 2 data or file error,
3 numeric abort during a stream run, 4 gradcheck failure.
"""

from __future__ import annotations

import argparse
import sys

from .engine import EngineConfig
from .errors import ConfigInvalid, EngineError, FileFormatError, LabelMissing

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def load_config_file(path: str) -> EngineConfig:
    """Flat `key = value` config document; unknown keys are errors."""
    mapping: dict[str, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ConfigInvalid(f"{path}:{lineno}: expected key = value")
            mapping[key.strip()] = value.strip()
    return EngineConfig.from_dict(mapping)


def _config_from_args(args) -> EngineConfig:
    config = (
        load_config_file(args.config) if getattr(args, "config", None)
        else EngineConfig()
    )
    for token in getattr(args, "set", None) or []:
        key, eq, value = token.partition("=")
        if not eq:
            raise ConfigInvalid(f"--set expects key=value, got {token!r}")
        merged = config.to_dict()
        merged[key.strip()] = value.strip()
        config = EngineConfig.from_dict(merged)
    return config


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _cmd_synth(args) -> int:
    from .stream_io import SynthConfig, generate_synthetic, write_classtext, write_stream

    cfg = SynthConfig(
        classes=args.classes,
        dim=args.dim,
        samples=args.samples,
        views=args.views,
        shift_angle=args.shift,
        sample_noise=args.noise,
        view_noise=args.view_noise,
        prompts_per_class=args.prompts,
        prompt_noise=args.prompt_noise,
        class_cone=args.class_cone,
        seed=args.seed,
    )
    classtext, samples, _ = generate_synthetic(cfg)
    write_classtext(f"{args.out_prefix}.dpec", classtext)
    write_stream(f"{args.out_prefix}.dpes", samples)
    print(f"wrote {args.out_prefix}.dpec and {args.out_prefix}.dpes")
    return EXIT_OK


def _cmd_run(args) -> int:
    from .harness import evaluate

    config = _config_from_args(args)
    report = evaluate(
        args.stream,
        args.classtext,
        config,
        window=args.window,
        checkpoint_every=args.checkpoint_every,
        checkpoint_path=args.checkpoint,
    )
    _emit(report.to_text(), args.report)
    if report.aborted_at is not None:
        print(f"aborted at sample {report.aborted_at}: {report.abort_reason}",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .harness import PRESETS, ablate, parse_grid_file

    config = _config_from_args(args)
    if args.grid:
        arms = parse_grid_file(args.grid)
    else:
        if args.preset not in PRESETS:
            raise ConfigInvalid(
                f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}"
            )
        arms = PRESETS[args.preset]
    result = ablate(args.stream, args.classtext, config, arms, window=args.window)
    _emit(result.to_text(), args.report)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .harness import gradcheck

    result = gradcheck(trials=args.trials, seed=args.seed)
    sys.stdout.write(result.to_text())
    return EXIT_OK if result.passed else EXIT_GRADCHECK


def _cmd_inspect(args) -> int:
    from .harness import inspect_file

    for path in args.paths:
        sys.stdout.write(inspect_file(path))
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .harness import plot_report

    with open(args.report) as f:
        text = f.read()
    for path in plot_report(text, args.out_prefix):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="dualproto", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic classtext + stream pair")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--shift", type=float, default=0.0, help="rotation angle, radians")
    p.add_argument("--noise", type=float, default=0.0, help="per-sample noise sigma")
    p.add_argument("--view-noise", type=float, default=0.1)
    p.add_argument("--prompts", type=int, default=4, help="prompt embeddings per class")
    p.add_argument("--prompt-noise", type=float, default=0.2)
    p.add_argument("--class-cone", type=float, default=0.0,
                   help="concentration of class means around a shared anchor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="evaluate one configuration over a stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--classtext", required=True)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")
    p.add_argument("--report", help="write the report here instead of stdout")
    p.add_argument("--window", type=int, default=250)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--checkpoint", help="checkpoint file path")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ablate", help="run a grid of config deltas on one stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--classtext", required=True)
    p.add_argument("--config", help="base config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--grid", help="grid file: one `name key=value ...` per line")
    group.add_argument("--preset", help="named grid: components, update-rules, "
                       "lambda, queue-size, steps, affinity")
    p.add_argument("--report", help="write the comparative report here")
    p.add_argument("--window", type=int, default=250)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect", help="print file headers and digests")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("plot", help="emit SVG charts for a run report")
    p.add_argument("--report", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, LabelMissing, ConfigInvalid, OSError) as exc:
        print(f"dualproto: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EngineError as exc:
        print(f"dualproto: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
