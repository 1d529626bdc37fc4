"""Command-line entry point: ``edgesched {train,eval,replay,optimize,bench}``.

On success the last stdout line is a JSON summary.  On failure a single
JSON object ``{"error": ..., "type": ...}`` goes to stderr and the exit
code is nonzero (2 for configuration/input errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from .config import ConfigError, load_config
from .replay import ReplayError
from .runner import default_run_dir, run_bench, run_eval, run_optimize, run_replay_to, run_train


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgesched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def experiment(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", help="output directory (default runs/<timestamp>)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    experiment("train", "train an EAT-family agent; writes curves.csv and checkpoint")
    experiment("eval", "evaluate an agent on held-out seeds; writes metrics.csv and trace.jsonl")
    experiment("optimize", "optimize a genetic/harmony open-loop sequence; writes sequence.json")
    experiment("bench", "measure per-decision latency of an agent")
    rp = sub.add_parser("replay", help="replay a scripted scenario fixture")
    rp.add_argument("fixture", help="fixture path, or a bundled name: traditional, eat")
    rp.add_argument("--out", help="output directory (default runs/<timestamp>)")
    rp.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fmt(x) -> Optional[float]:
    return None if x is None else round(x, 6)


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    out = args.out or str(default_run_dir())
    try:
        if args.verb == "replay":
            result = run_replay_to(args.fixture, out)
            for r in result.rows:
                print(f"task {r.task}: response {r.response:.2f} s (wait {r.wait:.2f}, init {r.init:.2f}, "
                      f"exec {r.exec:.2f}, reuse {str(r.reuse).lower()})")
            summary = {"verb": "replay", "out": out, "latencies": [_fmt(x) for x in result.latencies],
                       "mean_latency": _fmt(result.mean_latency)}
        else:
            config = load_config(args.config, args.overrides)
            if args.verb == "train":
                est = run_train(config, out)
                last = est.history_[-1] if est.history_ else {}
                summary = {"verb": "train", "out": out, "episodes": len(est.history_),
                           "last_reward": _fmt(last.get("reward"))}
            elif args.verb == "eval":
                report = run_eval(config, out)
                summary = {"verb": "eval", "out": out, "agent": config.agent,
                           **{k: _fmt(v) if isinstance(v, float) else v for k, v in report.as_dict().items()}}
            elif args.verb == "optimize":
                est = run_optimize(config, out)
                summary = {"verb": "optimize", "out": out, "best_fitness": _fmt(est.best_fitness_)}
            else:
                seconds = run_bench(config, out)
                summary = {"verb": "bench", "out": out, "agent": config.agent, "seconds_per_decision": seconds}
    except (ConfigError, ReplayError, FileNotFoundError, ValueError, TypeError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable failure line
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
