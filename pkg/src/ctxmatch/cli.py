"""Command-line entry point: ``ctxmatch <stage> --config run.json [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .pipeline import ABLATIONS, Pipeline, RunConfig, StageError, run_ablation

STAGE_COMMANDS = ("ingest", "index", "retrieve", "pseudo-label", "train-baseline", "train-selector",
                  "train-matcher", "evaluate", "pipeline")


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--force", action="store_true", help="rerun stages even if cached outputs match")
    common.add_argument("--ablation", choices=ABLATIONS, help="override the ablation mode")
    common.add_argument("--out", help="override paths.output_dir")
    common.add_argument("--set", dest="overrides", action="append", default=[], type=_parse_override,
                        metavar="KEY=VALUE", help="dotted config override, e.g. train.epochs=5 (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="ctxmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run stages up to {name}" if name != "pipeline"
                       else "run every stage and evaluate")
    ab = sub.add_parser("ablate", parents=[common], help="run several ablation modes and print the table")
    ab.add_argument("--modes", nargs="+", choices=ABLATIONS, default=list(ABLATIONS))
    syn = sub.add_parser("synth", help="write a synthetic dataset and a matching config")
    syn.add_argument("out_dir", type=Path)
    syn.add_argument("--pairs", type=int, default=2000)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.ablation is not None:
        overrides["ablation"] = args.ablation
    if args.out is not None:
        overrides["paths.output_dir"] = args.out
    return cfg.with_overrides(overrides)


def _synth(args) -> int:
    from .synthetic import experiment_config, generate

    data = generate(args.pairs, args.seed)
    paths = data.write(args.out_dir)
    cfg = experiment_config(paths, str(args.out_dir / "run"))
    cfg.save(args.out_dir / "config.json")
    print(f"wrote {len(data.train)} train / {len(data.test)} test pairs and {len(data.corpus)} contexts "
          f"to {args.out_dir}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        return _synth(args)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        cfg.validate()
    except (ValueError, TypeError, FileNotFoundError) as e:
        print(f"ctxmatch: invalid configuration: {e}", file=sys.stderr)
        return 2
    try:
        if args.command == "ablate":
            _, table = run_ablation(cfg, args.modes, args.force)
            print(table)
            return 0
        pipe = Pipeline(cfg, args.force)
        result = pipe.run_until(args.command)
    except StageError as e:
        print(f"ctxmatch: {e}", file=sys.stderr)
        return 1
    if args.command in ("evaluate", "pipeline"):
        print((Path(cfg.paths.output_dir) / "summary.txt").read_text(encoding="utf-8"), end="")
    else:
        print(f"{args.command}: ran {pipe.ran or 'nothing'}, reused {pipe.reused or 'nothing'}")
    return 0 if result is None or isinstance(result, dict) else 1


if __name__ == "__main__":
    raise SystemExit(main())
