"""Command-line entry point.

Every subcommand except ``iact`` takes ``--config PATH`` (TOML) and
``--out DIR``; ``iact`` reads a chain CSV directly.  On a failed
verification the failing metric is printed and the exit status is
nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import lab


def _add_config_out(sub):
    sub.add_argument("--config", required=True, help="TOML experiment config")
    sub.add_argument("--out", default=None, help="output directory (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlgrf",
        description="Multilevel Gaussian random fields and MCMC experiments",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    for name, help_ in [
        ("verify-covariance", "statistical verification of the noise/field laws"),
        ("sample-prior", "dump single-level prior field realizations"),
        ("sample-hier", "dump hierarchically-constructed field realizations"),
        ("decompose", "split one realization into per-level components"),
        ("timing", "per-level realization timing table"),
        ("mcmc-sl", "single-level pCN MCMC"),
        ("mcmc-ml", "multilevel MCMC with allocation and estimate"),
    ]:
        _add_config_out(subs.add_parser(name, help=help_))

    p_iact = subs.add_parser("iact", help="IACT of a CSV chain column")
    p_iact.add_argument("series", help="chain CSV file")
    p_iact.add_argument("--column", default="Q", help="column name (default Q)")
    return parser


_KIND_BY_COMMAND = {
    "verify-covariance": "verify-covariance",
    "sample-prior": "sample",
    "sample-hier": "sample",
    "decompose": "decompose",
    "timing": "timing",
    "mcmc-sl": "mcmc-sl",
    "mcmc-ml": "mcmc-ml",
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    try:
        if args.command == "iact":
            out = lab.run_iact_file(args.series, column=args.column)
            print(json.dumps(out))
            return 0

        cfg = lab.load_config(
            args.config, kind=_KIND_BY_COMMAND[args.command], out_dir=args.out
        )
        if args.command == "verify-covariance":
            report = lab.run_verify_covariance(cfg)
            for check in report["checks"]:
                metric = check.get("max_se_multiple", check.get("max_abs_error"))
                status = "pass" if check["pass"] else "FAIL"
                print(f"{check['name']}: {status} ({metric:.3g})")
        elif args.command in ("sample-prior", "sample-hier"):
            out = lab.run_sample(cfg, hierarchical=args.command == "sample-hier")
            print(f"wrote {len(out['files'])} field(s) to {cfg.out_dir}")
        elif args.command == "decompose":
            out = lab.run_decompose(cfg)
            print(f"component sum error: {out['component_sum_error']:.3g}")
        elif args.command == "timing":
            out = lab.run_timing(cfg)
            for level, elements, count, seconds, _ in out["rows"]:
                print(f"level {level}: {elements} elements, {count} samples, {seconds:.4f} s")
        elif args.command == "mcmc-sl":
            summary = lab.run_mcmc_sl(cfg)
            print(json.dumps(summary, default=lab._json_default))
        elif args.command == "mcmc-ml":
            summary = lab.run_mlmcmc(cfg)
            print(json.dumps(summary, default=lab._json_default))
    except lab.VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 1
    except (lab.ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
