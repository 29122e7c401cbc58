"""Command-line front end: gen, train, eval, and parse subcommands.

Exit codes are a stable scripting contract: 0 success, 2 config error,
3 checkpoint error, 4 parse error, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

from . import __version__
from .agent import evaluate, train
from .checkpoint import FORMAT_VERSION, load_checkpoint
from .config import load_config, metadata_block
from .cvrp import Instance, generate_instance, parse_cvrplib
from .errors import (
    CheckpointError,
    ConfigError,
    OpselectError,
    ParseError,
    UnsupportedFormatError,
)
from .rng import derive_seed

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_PARSE = 4


def _combined_overrides(args) -> list[str]:
    return list(args.set or [])


def cmd_gen(args) -> int:
    cfg = load_config(args.config, _combined_overrides(args))
    cfg = replace(cfg, train=replace(cfg.train, master_seed=args.seed))
    with open(args.out, "w", encoding="utf-8") as out:
        out.write(json.dumps({"metadata": metadata_block(cfg)}, sort_keys=True) + "\n")
        for i in range(args.count):
            inst = generate_instance(
                args.n, seed=derive_seed(args.seed, 10, i), capacity=args.capacity
            )
            out.write(inst.to_json() + "\n")
    print(f"wrote {args.count} instances (n={args.n}, seed={args.seed}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = _combined_overrides(args)
    if args.policy:
        overrides.append(f"train.policy={args.policy}")
    cfg = load_config(args.config, overrides)
    summary = train(cfg, args.out_checkpoint, args.log)
    print(
        f"trained {summary['episodes']} episodes: "
        f"mean best cost {summary['mean_best_cost']:.6f}"
        + (f", checkpoint {summary['checkpoint']}" if summary["checkpoint"] else "")
    )
    return EXIT_OK


def read_instances(path: str) -> list[Instance]:
    """Read instances from a JSONL dataset (metadata line optional) or a
    CVRPLib .vrp file."""
    if path.endswith(".vrp"):
        with open(path, encoding="utf-8") as f:
            return [parse_cvrplib(f.read())]
    instances = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "metadata" in obj and "coords" not in obj:
                continue
            instances.append(Instance.from_json(line))
    if not instances:
        raise OpselectError(f"no instances found in {path}")
    return instances


def cmd_eval(args) -> int:
    overrides = _combined_overrides(args)
    for flag, dotted in (
        ("T", "search.max_steps"),
        ("runs", "eval.runs"),
        ("mode", "eval.mode"),
        ("threads", "eval.threads"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{dotted}={value}")
    cfg = load_config(args.config, overrides)

    params = None
    if cfg.train.policy == "gama":
        if not args.checkpoint:
            raise ConfigError("eval of the gama policy requires --checkpoint")
        params, _ = load_checkpoint(args.checkpoint, cfg.model)

    instances = read_instances(args.data)
    refs = None
    if args.refs:
        with open(args.refs, encoding="utf-8") as f:
            refs = {str(k): float(v) for k, v in json.load(f).items()}

    rows, summary = evaluate(cfg, instances, params, refs=refs)

    fieldnames = ["instance_id", "run", "best_cost", "time_ms"]
    if any("gap_pct" in r for r in rows):
        fieldnames.append("gap_pct")
    with open(args.out_csv, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    with open(args.out_summary, "w", encoding="utf-8") as f:
        json.dump({"metadata": metadata_block(cfg), "summary": summary}, f, sort_keys=True)
        f.write("\n")
    print(
        f"evaluated {len(instances)} instances x {cfg.eval.runs} runs: "
        f"mean {summary['mean']:.6f} best {summary['best']:.6f} std {summary['std']:.6f}"
    )
    return EXIT_OK


def cmd_parse(args) -> int:
    with open(args.infile, encoding="utf-8") as f:
        inst = parse_cvrplib(f.read())
    if args.out:
        obj = json.loads(inst.to_json())
        obj["metadata"] = {"version": __version__, "source": args.infile}
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(obj, f, sort_keys=True)
            f.write("\n")
    print(f"dimension={inst.n_nodes} capacity={inst.capacity}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opselect",
        description="Learning-to-improve CVRP solver with learned operator selection.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"opselect {__version__} (checkpoint format {FORMAT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable; wins over the file)",
        )

    p = sub.add_parser("gen", help="generate a synthetic instance dataset (JSONL)")
    add_config_flags(p)
    p.add_argument("--n", type=int, required=True, help="customers per instance")
    p.add_argument("--count", type=int, required=True, help="number of instances")
    p.add_argument("--seed", type=int, required=True, help="dataset master seed")
    p.add_argument("--capacity", type=int, default=None, help="vehicle capacity override")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a policy and write checkpoint + JSONL log")
    add_config_flags(p)
    p.add_argument("--out-checkpoint", required=True, help="checkpoint output path")
    p.add_argument("--log", required=True, help="JSONL training log path")
    p.add_argument(
        "--policy",
        choices=("gama", "random", "fixed-sequence"),
        default=None,
        help="shorthand for --set train.policy=...",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy; writes CSV rows + summary JSON")
    add_config_flags(p)
    p.add_argument("--checkpoint", default=None, help="checkpoint to evaluate")
    p.add_argument("--data", required=True, help="JSONL dataset or CVRPLib .vrp file")
    p.add_argument("--T", type=int, default=None, help="shorthand for search.max_steps")
    p.add_argument("--runs", type=int, default=None, help="runs per instance")
    p.add_argument("--mode", choices=("greedy", "sample"), default=None)
    p.add_argument(
        "--threads", type=int, default=None, help="parallel eval workers (0 = all cores)"
    )
    p.add_argument("--refs", default=None, help="JSON file of reference costs by instance id")
    p.add_argument("--out-csv", required=True, help="per-run results CSV path")
    p.add_argument("--out-summary", required=True, help="summary JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("parse", help="parse a CVRPLib file; print dimension/capacity")
    p.add_argument("--in", dest="infile", required=True, help="CVRPLib .vrp file")
    p.add_argument("--out", default=None, help="write the instance as JSON here")
    p.set_defaults(func=cmd_parse)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ParseError, UnsupportedFormatError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OpselectError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
