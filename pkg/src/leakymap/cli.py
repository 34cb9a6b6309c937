"""Command line entry point: ``leakymap {check,tower,accim,escape,shrink}``.

Exit codes: 0 success, 1 invalid configuration, 2 computational failure,
3 a requested admissibility check failed (``check`` only).
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

from . import _backend
from .config import ConfigError, load_config, validate
from .output import Emitter, jsonable
from .simulate import FamilyError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COMPUTE = 2
EXIT_CHECK = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leakymap", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["check", "tower", "accim", "escape", "shrink"])
    p.add_argument("--config", metavar="PATH", help="JSON run configuration (defaults if omitted)")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--seed", metavar="U64", type=int, help="override the config seed")
    p.add_argument("--threads", metavar="N", type=int, help="numba thread count")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    from .commands import COMMANDS  # heavy imports after argument parsing

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            validate(cfg)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be a positive integer")
    except ConfigError as exc:
        print(f"leakymap: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _backend.set_threads(args.threads)

    em = Emitter(args.out, cfg, args.command)
    try:
        res = COMMANDS[args.command](cfg, em)
    except (ConfigError, FamilyError) as exc:
        field = getattr(exc, "field", "shrink.holes")
        print(f"leakymap: invalid configuration: {exc}", file=sys.stderr)
        em.report({"error": {"kind": "validation", "field": field, "message": str(exc)}})
        em.manifest(constants={}, defects={}, exit_code=EXIT_CONFIG, status="validation failure")
        return EXIT_CONFIG
    except Exception as exc:  # computational failure: keep the payload
        print(f"leakymap: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        em.report({"error": {"kind": type(exc).__name__, "message": str(exc),
                             "module": type(exc).__module__, "traceback": traceback.format_exc()}})
        em.manifest(constants={}, defects={}, exit_code=EXIT_COMPUTE, status="computational failure")
        return EXIT_COMPUTE
    em.report(res.report)
    status = "ok" if res.exit_code == EXIT_OK else "check failed"
    em.manifest(constants=res.constants, defects=res.defects, exit_code=res.exit_code, status=status)
    summary = {k: v for k, v in jsonable(res.report).items() if not isinstance(v, (dict, list))}
    print(json.dumps(summary, sort_keys=True))
    return res.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
