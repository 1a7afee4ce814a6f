"""Command-line entry point.

Exit codes: 0 success, 1 invalid configuration, 2 run divergence,
3 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .dyna import DivergenceError
from .harness import (
    CheckpointError, cmd_export_plots, cmd_meta_train, cmd_run, cmd_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_CHECKPOINT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynameta",
        description="Dyna-style model-based RL with controlled rollout lengths",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("run", "train one controller across the configured seeds"),
        ("sweep", "compare all configured approaches and emit a results table"),
        ("meta-train", "train the rollout-length metareasoner"),
        ("export-plots", "export per-approach curve CSVs from run results"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, type=Path)
        cmd.add_argument("--out", type=Path, default=None)
        cmd.add_argument("--jobs", type=int, default=None)
        cmd.add_argument("--resume", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.out, args.jobs)
        if args.command == "meta-train":
            return cmd_meta_train(args.config, args.out, args.resume)
        if args.command == "export-plots":
            doc = load_config(args.config)
            results_dir = Path(doc.get("out_dir", "out"))
            return cmd_export_plots(results_dir, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
