"""``isac`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load

log = logging.getLogger("isac_covert")

FAULTS = ("negate_filter",)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment TOML file")
    common.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="worker processes for sweep wavefronts")
    common.add_argument("--desk-scale", action="store_true",
                        help="override geometry to N_T=4, N_R=4, N=16")
    common.add_argument("--timing", action="store_true",
                        help="fill the ms column of trace.csv (breaks byte-determinism)")

    p = argparse.ArgumentParser(prog="isac", description="Covert ISAC waveform design bench")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("design", parents=[common], help="design one waveform")
    sub.add_parser("sweep", parents=[common], help="(xi, eps) grid with warm starts and SER")
    sub.add_parser("doppler", parents=[common], help="SCNR across the Doppler evaluation grid")
    sub.add_parser("ser", parents=[common], help="long-format SER over the sweep grid")
    v = sub.add_parser("verify", parents=[common], help="run the oracle suite")
    v.add_argument("--inject-fault", choices=FAULTS, help="corrupt a component on purpose")
    return p


def _setup_logging():
    level = os.environ.get("ISAC_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this subcommand", None, "<cli>")
    cfg = load(args.config, desk_scale=args.desk_scale)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer", None, "<cli>")
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    cfg.symbols()
    cfg.warden()
    return cfg


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return ex.EXIT_CONFIG
    try:
        if args.command == "verify":
            cfg = _config(args) if args.config else None
            seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
            out = args.out or (cfg.out_dir if cfg else "out")
            code, rows, path = ex.run_verify(cfg, seed, out, args.inject_fault)
            for r in rows:
                print(f"{'PASS' if r.passed else 'FAIL'} {r.check}: {r.value:.3e} (limit {r.threshold:g})")
            if code:
                print("failing: " + ", ".join(r.check for r in rows if not r.passed), file=sys.stderr)
            return code
        cfg = _config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG

    if args.command == "design":
        outcome = ex.run_design(cfg, timing=args.timing)
        print(outcome.message)
        return outcome.exit_code
    if args.command == "sweep":
        code, points, path = ex.run_sweep(cfg, jobs=args.jobs)
        print(f"{len(points)} grid points written to {path}")
        return code
    if args.command == "ser":
        code, points, path = ex.run_ser(cfg, jobs=args.jobs)
        print(f"SER table written to {path}")
        return code
    if args.command == "doppler":
        code, summary, files = ex.run_doppler(cfg)
        for name, (worst, spread) in summary.items():
            print(f"{name}: worst {worst:.4f} dB, spread {spread:.4f} dB")
        return code
    raise AssertionError(args.command)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
