"""Command-line entry point: ``dyclu run|gen-env|replay|summarize``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .environment import generate_environment
from .errors import ConfigError, ParseError
from .harness import replay_experiment, run_experiment, summarize

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; that code is reserved for crashes
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dyclu", description="Clustered non-stationary bandit simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each finished run")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", help="run every (learner, seed) of a config")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, help="run this seed only, ignoring the config's list")
    run.add_argument("--out", type=Path, help="override output_dir")

    gen = sub.add_parser("gen-env", help="write the generated environment to JSON")
    gen.add_argument("config", type=Path)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--row", help="grid row to generate (default: first)")
    gen.add_argument("--out", type=Path, help="output file (default: stdout)")

    rep = sub.add_parser("replay", help="evaluate learners offline on a logged CSV")
    rep.add_argument("log", type=Path)
    rep.add_argument("config", type=Path)

    summ = sub.add_parser("summarize", help="rebuild summary.json from run records")
    summ.add_argument("directory", type=Path)
    return parser


def _cmd_run(args) -> None:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg = cfg.model_copy(update={"output_dir": str(args.out)})
    seeds = [args.seed] if args.seed is not None else None
    summaries = run_experiment(cfg, seeds=seeds)
    for row, summary in summaries.items():
        prefix = f"[{row}] " if row else ""
        for entry in summary["learners"]:
            print(f"{prefix}{entry['learner']:<16} regret {entry['final_regret_mean']:10.3f}"
                  f" +- {entry['final_regret_std']:.3f}  ({entry['n_seeds']} seeds)")
    print(f"records written to {cfg.output_dir}")


def _cmd_gen_env(args) -> None:
    cfg = load_config(args.config)
    rows = dict(cfg.rows())
    if args.row is None:
        block = cfg.rows()[0][1]
    elif args.row in rows:
        block = rows[args.row]
    else:
        raise ConfigError(f"no grid row named {args.row!r}", "grid")
    env = generate_environment(block.to_env_config(), args.seed)
    text = json.dumps(env.to_dict(), indent=1)
    if args.out is None:
        print(text)
    else:
        args.out.write_text(text + "\n", encoding="utf-8")


def _cmd_replay(args) -> None:
    if not args.log.is_file():
        raise ConfigError(f"log file not found: {args.log}")
    cfg = load_config(args.config)
    for res in replay_experiment(args.log, cfg):
        print(f"{res['learner']:<16} reward {res['reward']:.3f}  random {res['random_reward']:.3f}"
              f"  normalized {res['normalized_reward']:.4f}  ({res['events']} events)")


def _cmd_summarize(args) -> None:
    for row, summary in summarize(args.directory).items():
        prefix = f"[{row}] " if row else ""
        for entry in summary["learners"]:
            print(f"{prefix}{entry['learner']:<16} regret {entry['final_regret_mean']:10.3f}"
                  f" +- {entry['final_regret_std']:.3f}")


COMMANDS = {"run": _cmd_run, "gen-env": _cmd_gen_env, "replay": _cmd_replay,
            "summarize": _cmd_summarize}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        logging.getLogger(__name__).debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
