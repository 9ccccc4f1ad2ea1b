"""``stokeshape solve|optimize|converge|sweep --config <file> [--out <dir>]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .fem import SingularSystemError
from .geometry import DegenerateDomainError
from .harness import COMMANDS, DegenerateSequenceError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INTERNAL = 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stokeshape",
                                description="Stokes shape optimization on a reference domain.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML experiment file (defaults apply when omitted)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(code: int, exc: BaseException, out: str | None) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            path = Path(out)
            path.mkdir(parents=True, exist_ok=True)
            (path / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        cfg = load_config(args.config)
        out = out if out is not None else cfg.output.dir
        summary = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, out)
    except (SingularSystemError, DegenerateDomainError, DegenerateSequenceError) as exc:
        return _fail(EXIT_NUMERICAL, exc, out)
    except Exception as exc:  # noqa: BLE001 - the CLI reports everything as JSON
        logging.getLogger(__name__).debug("unhandled error", exc_info=True)
        return _fail(EXIT_INTERNAL, exc, out)
    print(json.dumps({"command": args.command, "out": str(out),
                      "j": summary.get("j")}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
