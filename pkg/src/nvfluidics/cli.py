"""Command-line entry point: ``nvfluidics run|validate|list-examples``.

Exit codes: 0 success, 1 run failure, 2 invalid scenario or usage.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from . import scenario


def _load(target: str) -> scenario.ScenarioConfig:
    p = Path(target)
    if p.exists() or target.endswith(".toml"):
        return scenario.parse_scenario(p)
    return scenario.load_example(target)


def _report(target, exc: scenario.ScenarioError):
    for line in exc.errors:
        print(f"{target}: error: {line}", file=sys.stderr)


def _cmd_validate(args) -> int:
    status = 0
    for target in args.scenarios:
        try:
            cfg = _load(target)
        except scenario.ScenarioError as exc:
            _report(target, exc)
            status = 2
            continue
        print(f"{target}: ok ({cfg.kind})")
    return status


def _cmd_list(args) -> int:
    for name in scenario.list_examples():
        cfg = scenario.load_example(name)
        print(f"{name}\t{cfg.kind}")
    return 0


def _cmd_run(args) -> int:
    try:
        cfg = _load(args.scenario).with_overrides(seed=args.seed, paper_scale=args.paper_scale)
    except scenario.ScenarioError as exc:
        _report(args.scenario, exc)
        return 2
    out_dir = Path(args.out_dir) if args.out_dir else Path("out") / Path(args.scenario).stem
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            manifest = scenario.run(cfg, out_dir, workers=args.workers)
        except RuntimeError as exc:
            print(f"{args.scenario}: error: {exc}", file=sys.stderr)
            return 1
    for w in caught:
        print(f"{args.scenario}: warning: {w.message}", file=sys.stderr)
    print(f"wrote {len(manifest.digests)} files and {manifest.path.name} to {out_dir} "
          f"in {manifest.wall_time_s:.2f} s")
    for key, value in manifest.summary.items():
        print(f"  {key} = {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvfluidics", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file or shipped example")
    p.add_argument("scenario", help="path to a .toml scenario or an example name")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--paper-scale", action="store_true",
                   help="use full Monte Carlo counts instead of desk-scale defaults")
    p.add_argument("--out-dir", default=None, help="output directory (default out/<name>)")
    p.add_argument("--workers", type=int, default=None, help="Monte Carlo worker threads")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("validate", help="check scenario files without running them")
    p.add_argument("scenarios", nargs="+")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("list-examples", help="list shipped example scenarios")
    p.set_defaults(fn=_cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    return args.fn(args)
