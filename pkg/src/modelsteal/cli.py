"""Command-line entry point.

Subcommands mirror the pipeline stages: `train-victim`, `steal`
(selection + query + anchor), `distill` (stage-two student training),
`eval`, and `compare`. All stage subcommands consume the same YAML config;
`run` executes the whole pipeline. Failing stages exit with distinct
nonzero codes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ResumeError
from .runner import StageError, compare_runs, load_config, run_pipeline

EXIT_CODES = {"config": 2, "victim": 3, "steal": 4, "distill": 5, "eval": 6, "compare": 7}

log = logging.getLogger("modelsteal")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the top-level seed")
    parser.add_argument("--out", type=Path, required=True, help="run directory")
    parser.add_argument("--resume", action="store_true", help="skip completed stages")
    parser.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="seeded single-threaded mode (default: on)",
    )


def _build_config(args) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic is not None:
        overrides["deterministic"] = args.deterministic
    return load_config(args.config, overrides)


def _run_stages(args, upto: str) -> int:
    try:
        cfg = _build_config(args)
    except (ConfigError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CODES["config"]
    try:
        run_pipeline(cfg, args.out, resume=args.resume, upto=upto)
    except ResumeError as exc:
        log.error("%s", exc)
        return EXIT_CODES["config"]
    except StageError as exc:
        log.error("%s", exc)
        return EXIT_CODES.get(exc.stage, 1)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="modelsteal")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, upto in [
        ("run", "eval"),
        ("train-victim", "victim"),
        ("steal", "steal"),
        ("distill", "distill"),
        ("eval", "eval"),
    ]:
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(upto=upto)

    p_cmp = sub.add_parser("compare")
    p_cmp.add_argument("runs", nargs="+", type=Path, help="run directories to compare")
    p_cmp.add_argument("--role", default="student", choices=["student", "anchor", "victim_baseline"])

    args = parser.parse_args(argv)
    if args.command == "compare":
        try:
            print(compare_runs(args.runs, role=args.role))
        except ConfigError as exc:
            log.error("%s", exc)
            return EXIT_CODES["compare"]
        return 0

    rc = _run_stages(args, args.upto)
    if rc == 0 and args.command in ("run", "eval"):
        metrics = Path(args.out) / "metrics.json"
        if metrics.exists():
            print(json.dumps(json.loads(metrics.read_text()), indent=2, sort_keys=True))
    return rc


if __name__ == "__main__":
    sys.exit(main())
