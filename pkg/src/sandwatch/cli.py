"""Command-line entry point: ``sandwatch <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .errors import ConfigInvalid, SandwatchError
from .pipeline import STAGE_COMMANDS, RunConfig, load_mapping, run_all
from .synth import SynthConfig, generate_chain, write_dataset

log = logging.getLogger("sandwatch")

# flag name -> RunConfig field
_RUN_FLAGS = {
    "transactions": str, "mempool": str, "labels": str, "forks": str, "block_ranges": str,
    "out": str, "window_days": int, "n_max": int, "adoption_n_max": int, "top_k": int,
    "threads": int, "provider_mode": str, "provider_base_url": str, "provider_batch_size": int,
    "provider_max_rps": float, "provider_cache": str,
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML run config; flags override its values")
    for name, typ in _RUN_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--strict-visibility-tie", dest="strict_visibility_tie", action="store_true", default=None,
                   help="count a mempool sighting in the block's own second as private")


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    return replace(cfg, **overrides)


_SYNTH_FLAGS = {
    "seed": int, "n_blocks": int, "n_addresses": int, "n_attackers": int, "sandwich_rate": float,
    "private_victim_rate": float, "churn_probability": float, "adoption_probability": float,
    "fork_block_count": int, "span_days": int, "window_days": int,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sandwatch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGE_COMMANDS, "all"):
        _add_run_flags(sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage"))

    sp = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    sp.add_argument("--config", help="JSON or YAML synth config; flags override its values")
    sp.add_argument("--out", required=True)
    for name, typ in _SYNTH_FLAGS.items():
        sp.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    sp.add_argument("--txs-per-block", nargs=2, type=int, metavar=("MIN", "MAX"), default=None)
    return parser


def cmd_synth(args: argparse.Namespace) -> dict[str, str]:
    data: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
        data = load_mapping(text, path)
    for name in _SYNTH_FLAGS:
        if getattr(args, name) is not None:
            data[name] = getattr(args, name)
    if args.txs_per_block is not None:
        data["txs_per_block"] = args.txs_per_block
    cfg = SynthConfig.from_dict(data)
    records, labels, truth = generate_chain(cfg)
    digests = write_dataset(args.out, cfg, records, labels, truth)
    log.info("wrote %d transactions, %d planted sandwiches to %s", len(records), len(truth.events), args.out)
    return digests


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            for name, digest in cmd_synth(args).items():
                print(f"{digest}  {name}")
            return 0
        cfg = _run_config(args)
        if args.command == "all":
            run_all(cfg)
        else:
            STAGE_COMMANDS[args.command](cfg)
        return 0
    except SandwatchError as exc:
        print(f"sandwatch {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sandwatch {args.command}: {exc}", file=sys.stderr)
        return 3
    except (TypeError, ValueError) as exc:
        print(f"sandwatch {args.command}: internal error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
