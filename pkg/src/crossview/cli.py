"""Command-line entry point.

    crossview <command> [--config FILE] [--run-dir DIR] [--force]
              [--<dotted.key> VALUE ...]

Commands: generate-data, pretrain, prompt-tune, ego-finetune, evaluate,
export-features. Any flag of the form --section.key VALUE is a config
override applied after the config file; unknown keys are usage errors.
The run-directory root defaults to $CROSSVIEW_RUN_ROOT or ./runs.

Exit codes: 0 success; 2 usage/config error; 3 prerequisite or protocol
violation; 4 I/O or data corruption; 5 numeric abort; 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import pipeline
from .config import parse_config
from .errors import (
    ConfigurationError,
    CorruptDataError,
    FreezeViolationError,
    NumericError,
    PrerequisiteError,
    ProtocolViolationError,
    ValidationError,
)
from .evaluation import PROTOCOLS

COMMANDS = (
    "generate-data",
    "pretrain",
    "prompt-tune",
    "ego-finetune",
    "evaluate",
    "export-features",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossview", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--run-dir", type=Path, default=None)
        p.add_argument("--force", action="store_true")
        if name == "ego-finetune":
            p.add_argument("--mode", choices=["zero_shot", "few_shot"], required=True)
        if name == "evaluate":
            p.add_argument("--protocol", choices=list(PROTOCOLS), required=True)
        if name == "export-features":
            p.add_argument("--split", default="ego_test")
            p.add_argument("--stage", default=None)
    return parser


def _split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    """Pull out --dotted.key VALUE pairs (they contain a '.', which no
    built-in flag does)."""
    known, overrides = [], []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a.startswith("--") and "." in a.split("=", 1)[0]:
            key = a[2:]
            if "=" in key:
                key, value = key.split("=", 1)
            else:
                if i + 1 >= len(argv):
                    raise ConfigurationError(f"override --{key} needs a value")
                i += 1
                value = argv[i]
            overrides.append((key, value))
        else:
            known.append(a)
        i += 1
    return known, overrides


def _run_dir(args) -> Path:
    if args.run_dir is not None:
        return args.run_dir
    root = Path(os.environ.get("CROSSVIEW_RUN_ROOT", "runs"))
    return root / "default"


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        known, overrides = _split_overrides(argv)
        args = _build_parser().parse_args(known)
        cfg = parse_config(args.config, overrides)
        run_dir = _run_dir(args)
        if args.command == "generate-data":
            manifest = pipeline.cmd_generate_data(cfg, run_dir, force=args.force)
            print(f"generated {len(manifest.records)} clips in {run_dir / 'data'}")
        elif args.command == "pretrain":
            out = pipeline.cmd_pretrain(cfg, run_dir, force=args.force)
            print(f"wrote {out}")
        elif args.command == "prompt-tune":
            out = pipeline.cmd_prompt_tune(cfg, run_dir, force=args.force)
            print(f"wrote {out}")
        elif args.command == "ego-finetune":
            out = pipeline.cmd_ego_finetune(cfg, run_dir, args.mode, force=args.force)
            print(f"wrote {out}")
        elif args.command == "evaluate":
            report = pipeline.cmd_evaluate(cfg, run_dir, args.protocol)
            print(report.to_json())
        elif args.command == "export-features":
            out = pipeline.cmd_export_features(cfg, run_dir, args.split, args.stage)
            print(f"wrote {out}")
        return 0
    except (ConfigurationError, ValidationError) as e:
        _emit_error("usage", e)
        return 2
    except (PrerequisiteError, ProtocolViolationError, FreezeViolationError) as e:
        _emit_error("prerequisite", e)
        return 3
    except (CorruptDataError, OSError) as e:
        _emit_error("io", e)
        return 4
    except NumericError as e:
        _emit_error("numeric", e)
        return 5


def _emit_error(kind: str, exc: Exception) -> None:
    sys.stderr.write(
        json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)})
        + "\n"
    )


if __name__ == "__main__":
    sys.exit(main())
