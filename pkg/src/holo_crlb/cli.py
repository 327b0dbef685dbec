"""Command line entry point ``holo-crlb``."""

import argparse
import logging
import sys

import numpy as np

from . import harness
from .bench import METHODS
from .fisher import SingularFimError
from .linx import NotPositiveDefiniteError
from .scene import ConfigError

log = logging.getLogger("holo_crlb")

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


def _seed(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="holo-crlb",
        description="CRLB-driven beamforming for multi-band holographic surfaces.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in harness.COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--method", choices=sorted(METHODS), default=None)
        p.add_argument("--band", type=int, default=0, help="band for capacity loss")
        p.add_argument("--eval-samples", type=int, default=1000)
        p.add_argument("--beams", default=None, help="beams.json to evaluate / synthesize with")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        report = harness.run_experiment(
            args.command, args.config, args.seed, args.out, method=args.method,
            band=args.band, eval_samples=args.eval_samples, beams=args.beams)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (SingularFimError, NotPositiveDefiniteError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE

    ev = report["evaluation"]
    if args.command == "gradcheck":
        log.info("gradcheck max relative error %.3e (tolerance %.0e)",
                 ev["max_rel_err"], ev["tolerance"])
        return EXIT_OK if ev["passed"] else EXIT_FAILED_CHECK
    for m in report["methods"]:
        log.info("%-12s objective %.6g  (%.2f s)", m["method"], m["objective"], m["wall_time_s"])
    if "avg_crlb_heldout" in ev:
        log.info("held-out avg CRLB %.6g over %d samples", ev["avg_crlb_heldout"], ev["n_eval"])
    log.info("wrote %s", ", ".join(report["files"]))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
