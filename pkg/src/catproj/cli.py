"""Command line: ``catproj run <config>``, ``catproj preset <name>``, ``catproj list-presets``.

Exit codes: 0 success, 1 validation error, 2 runtime failure of some request.
The default output directory comes from CATPROJ_OUT.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from catproj.config import ConfigError, load_config, parse_config
from catproj.presets import list_presets, preset_config
from catproj.runner import run_experiment, write_atomic

OUT_ENV = "CATPROJ_OUT"
DEFAULT_OUT = "catproj-out"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV) or DEFAULT_OUT


def _report(result, stream) -> int:
    for o in result.outcomes:
        status = "ok" if o.ok else "FAILED"
        extra = f" ({o.error})" if o.error else ""
        print(f"{o.id}: {status} {o.result}{extra}", file=stream)
    print(f"outputs written to {result.out_dir}", file=stream)
    return EXIT_OK if result.ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="catproj",
                                 description="Alternating projections and regularity "
                                             "certificates in model spaces.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config (YAML)")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or {DEFAULT_OUT})")
    run.add_argument("--seed", type=int, help="override every request seed")
    pre = sub.add_parser("preset", help="run a built-in preset")
    pre.add_argument("name")
    pre.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or {DEFAULT_OUT})")
    pre.add_argument("--seed", type=int, help="override every request seed")
    sub.add_parser("list-presets", help="list built-in presets")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-presets":
        for name, desc in list_presets().items():
            print(f"{name}\t{desc}")
        return EXIT_OK
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.seed)
            text = None
        else:
            text = preset_config(args.name)
            cfg = parse_config(text, args.seed)
    except ConfigError as exc:
        where = args.config if args.command == "run" else f"preset {args.name}"
        print(f"{where}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (KeyError, OSError) as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = args.out or default_out_dir()
    if args.command == "preset":
        out = os.path.join(out, args.name) if not args.out else out
        os.makedirs(out, exist_ok=True)
        write_atomic(os.path.join(out, "config.yaml"), text)
    return _report(run_experiment(cfg, out), sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
