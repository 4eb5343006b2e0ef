"""Command line entry point: configure and run the shim."""

import argparse
import sys

from .service import DEFAULT_PORT, ShimConfig, ShimStartupError, serve
from .wire import ROLES


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pose-shim",
        description="HTTP service for the three-role pose/generation protocol")
    p.add_argument("--mock", action="store_true",
                   help="scripted deterministic answers, no checkpoints")
    p.add_argument("--roles", default=",".join(ROLES),
                   help=f"comma-separated subset of {','.join(ROLES)}")
    p.add_argument("--checkpoint", action="append", default=[],
                   metavar="ROLE=PATH",
                   help="checkpoint path for one role (repeatable)")
    p.add_argument("--device", default="cpu")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT,
                   help=f"default {DEFAULT_PORT}; 0 binds an ephemeral port")
    return p


def config_from_args(args) -> ShimConfig:
    checkpoints = {}
    for spec in args.checkpoint:
        role, sep, path = spec.partition("=")
        if not sep or not role or not path:
            raise ValueError(f"--checkpoint expects ROLE=PATH, got {spec!r}")
        checkpoints[role] = path
    roles = tuple(r.strip() for r in args.roles.split(",") if r.strip())
    return ShimConfig(roles=roles, checkpoints=checkpoints,
                      device=args.device, mock=args.mock,
                      host=args.host, port=args.port)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        serve(cfg)
    except (ValueError, ShimStartupError) as exc:
        print(f"pose-shim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
