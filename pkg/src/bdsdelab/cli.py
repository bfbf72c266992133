"""Command line entry point.

    bdsdelab run --config cfg.json [--set mc.seed=9 ...] [--out dir] [--threads n]
    bdsdelab validate --config cfg.json
    bdsdelab presets

Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .coefficients import (DRIVER_PRESETS, GTILDE_PRESETS, TERMINAL_PRESETS,
                           make_driver)
from .errors import ConfigurationError, NumericalFailureError
from .scenarios import SCENARIOS, load_config, run_scenario, validate_config

GENERATOR_PRESETS = ("const:a", "sin_field:amp", "fractional:alpha")
REGRESSION_BASES = ("piecewise_constant", "piecewise_linear", "polynomial", "fourier")
BASIS_IDS = ("const", "sin:j", "cos:j")


def list_presets() -> dict:
    """Registry listing: names, parameter schemas, declared constants."""
    cubic = make_driver("cubic_monotone")
    return {
        "scenarios": list(SCENARIOS),
        "terminal_presets": list(TERMINAL_PRESETS),
        "driver_presets": list(DRIVER_PRESETS),
        "driver_constants": {
            "cubic_monotone": {"L_mono": cubic.mono, "L_lip_y": cubic.lip_y},
            "decay:c": {"L_mono": 0.0, "L_lip_y": "c"},
            "grad_linear:theta": {"L_lip_z": "theta", "m_grad": 0.0},
        },
        "noise_presets": list(GTILDE_PRESETS),
        "generator_presets": list(GENERATOR_PRESETS),
        "covariance_basis_ids": list(BASIS_IDS),
        "regression_bases": list(REGRESSION_BASES),
    }


def _parse_args(argv):
    parser = argparse.ArgumentParser(prog="bdsdelab")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute a scenario config")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="key=value", help="dotted-path config override")
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--threads", type=int, default=1)
    val_p = sub.add_parser("validate", help="validate a scenario config")
    val_p.add_argument("--config", required=True)
    sub.add_parser("presets", help="list registered presets")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    if args.command == "presets":
        json.dump(list_presets(), sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    try:
        overrides = [kv.split("=", 1) for kv in getattr(args, "overrides", [])]
        cfg = load_config(args.config, overrides)
    except (OSError, json.JSONDecodeError, ConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        diag = validate_config(cfg)
        json.dump(diag, sys.stdout, indent=1, sort_keys=True, default=str)
        sys.stdout.write("\n")
        return 0 if diag["pass"] else 2
    try:
        summary = run_scenario(cfg, out_dir=args.out, threads=args.threads)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        import os
        from .emit import write_json
        out = args.out or cfg.output_dir
        write_json(os.path.join(out, "summary.json"),
                   {"scenario": cfg.scenario, "failed_stage": str(exc),
                    "all_pass": False})
        return 3
    print(json.dumps({"scenario": summary["scenario"],
                      "all_pass": summary["all_pass"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
