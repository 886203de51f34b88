"""Command-line entry point: ``deomctl <subcommand> --config PATH --out DIR``.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 validation failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex
from .config import load_config
from .errors import ConfigError, DeomError, ExpansionAccuracyError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="deomctl", description="Weak-field environment-targeted control runs.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI config file (defaults when omitted)")
    common.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent legs")
    common.add_argument("--seed", type=int, default=0, help="seed for the symmetry-diagnostic sampling")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("decompose-bath", parents=[common], help="exponential expansion and residual report")
    sub.add_parser("design-field", parents=[common], help="response kernels, spectra and optimal fields")
    sub.add_parser("run-controlled", parents=[common], help="repeated application of the optimal fields")
    v = sub.add_parser("validate", parents=[common], help="oracle report")
    v.add_argument("--inject", default=None, choices=ex.FAULTS, help="perturb one check on purpose")
    sub.add_parser("sweep", parents=[common], help="target temperatures x correlation modes")
    return p


def _print_fields(res):
    for bt, fld in res["fields"].items():
        flag = " (fallback)" if fld.fallback else ""
        print(f"beta_tilde={bt:g} Lambda_eff={fld.Lambda:.6e} asymmetry={res['asymmetry'][bt]:.2e}{flag}")


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg = cfg.with_output(args.out)
        out = cfg.output.dir
        if args.command == "decompose-bath":
            res = ex.cmd_decompose(cfg, out)
            print(f"terms={res['n_terms']} thermal_poles={res['n_thermal']} worst_residual={res['worst']:.3e}")
            return EXIT_OK
        if args.command == "design-field":
            _print_fields(ex.cmd_design_field(cfg, out, args.threads, args.seed))
            return EXIT_OK
        if args.command == "run-controlled":
            res = ex.cmd_run_controlled(cfg, out, args.threads, args.seed)
            for bt, rows in res["tracks"].items():
                print(f"beta_tilde={bt:g} t={rows[-1, 0]:g} P_acceptor={rows[-1, 3]:.6e}")
            return EXIT_OK
        if args.command == "validate":
            res = ex.cmd_validate(cfg, out, args.inject)
            for c in res["checks"]:
                print(f"{c.name}: reference={c.reference:.6e} computed={c.computed:.6e} "
                      f"tolerance={c.tolerance:.1e} {'PASS' if c.passed else 'FAIL'}")
            return EXIT_OK if res["passed"] else EXIT_VALIDATION
        if args.command == "sweep":
            res = ex.cmd_sweep(cfg, out, args.threads, args.seed)
            for mode, tracks in res.items():
                for bt, rows in tracks.items():
                    print(f"{mode} beta_tilde={bt:g} P_acceptor={rows[-1, 3]:.6e}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExpansionAccuracyError as exc:
        print(f"numerical failure: {exc} (achieved residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_NUMERICAL
    except DeomError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
