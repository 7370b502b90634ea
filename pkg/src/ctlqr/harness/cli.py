"""``ctlqr`` command line.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from ..exceptions import ConfigError, CtlqrError
from .config import parse_config
from .runner import run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctlqr", description="Continuous-time identification and LQR experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--seed", type=_u64)
    r.add_argument("--threads", type=_positive)
    v = sub.add_parser("validate", help="check a configuration and print its canonical form")
    v.add_argument("--config", required=True)
    return ap


def _env_threads() -> Optional[int]:
    raw = os.environ.get("CTLQR_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CTLQR_THREADS must be an integer, got {raw!r}", "env.CTLQR_THREADS") from None
    if n < 1:
        raise ConfigError("CTLQR_THREADS must be >= 1", "env.CTLQR_THREADS")
    return n


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.command == "validate":
            sys.stdout.write(cfg.canonical_json())
            return EXIT_OK
        threads = _env_threads() or args.threads
        manifest = run(cfg, out_dir=args.out, seed=args.seed, threads=threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CtlqrError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = args.out or cfg.output_dir
    print(f"{cfg.experiment}: wrote {len(manifest.files)} files to {out} in {manifest.wall_clock_s:.2f}s")
    for f in manifest.failures:
        print(f"failed point {f.point} episode {f.episode}: {f.kind}: {f.message}", file=sys.stderr)
    return EXIT_NUMERIC if manifest.failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
