"""Command line entry point: ``sle4 run <suite>``."""
from __future__ import annotations

import argparse
import fnmatch
import json
import sys
from pathlib import Path

from .errors import InvalidArgument, NumericalFailure, ResourceError
from .harness import Check, SuiteResult, load_config, write_manifest
from .suites import SUITE_IDS, SUITES

# check names per suite, so --check can be validated before any work starts
CHECKS = {
    "sle-oracle": ["closed_form_g_t", "closed_form_f_t", "closed_form_psi_t",
                   "closed_form_abs_f_prime", "closed_form_tip", "hcap_2t"],
    "gff-verify": ["sampler_vs_green", "green_vs_continuum", "radial_brownian"],
    "chaos-verify": ["tail_exp_minus_2x", "conditioned_nonpositive", "conditioned_mean_t0.5",
                     "conditioned_ks_t0.5", "conditioned_mean_t1", "conditioned_ks_t1",
                     "moment_k1_finite", "moment_slope_bound", "summability_diagnostic",
                     "coordinate_change_scaling"],
    "measure-intensity": ["intensity_ratios", "mirror_symmetry", "angular_vanishing"],
    "measure-scaling": ["scaling_exponent", "negative_control_rejected"],
    "measure-invariance": ["ks_invariance", "wrong_exponent_rejected"],
    "minkowski": ["minkowski_stable_d1.5", "minkowski_drift_d1.4", "minkowski_drift_d1.6"],
    "consistency": ["consistency_s_vs_2s"],
}


def _parser():
    p = argparse.ArgumentParser(prog="sle4", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a verification suite")
    run.add_argument("suite", choices=list(SUITES) + ["all"])
    run.add_argument("--config", help="key=value config file ('#' comments)")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default: results)")
    run.add_argument("--workers", type=int)
    run.add_argument("--check", help="only gate on checks matching this name (glob)")
    return p


def run_suite(name, cfg, out_dir, pattern=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = SUITES[name](cfg, out_dir)
    except (NumericalFailure, ResourceError) as e:
        result = SuiteResult(name, [Check(f"{name}_numerical", False, str(e))], [])
    if pattern:
        result = SuiteResult(name, [c for c in result.checks
                                    if fnmatch.fnmatchcase(c.name, pattern)], result.files)
    write_manifest(out_dir, name, cfg, result,
                   {"master": cfg.seed, "suite_stream": SUITE_IDS[name]})
    return result


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides={"seed": args.seed, "out": args.out,
                                                  "workers": args.workers})
    except InvalidArgument as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if args.check:
        names = [n for n in names
                 if any(fnmatch.fnmatchcase(c, args.check) for c in CHECKS[n])]
        if not names:
            print(f"invalid config: no check named {args.check!r}", file=sys.stderr)
            return 2
    out = Path(cfg.out)
    status = {}
    failed = []
    for name in names:
        target = out / name if args.suite == "all" else out
        try:
            res = run_suite(name, cfg, target, args.check)
        except InvalidArgument as e:
            print(f"invalid config: {name}: {e}", file=sys.stderr)
            return 2
        for c in res.checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {name}/{c.name} {c.detail}".rstrip(),
                  flush=True)
            if not c.passed:
                failed.append(f"{name}/{c.name}")
        status[name] = "PASS" if res.passed else "FAIL"
    if args.suite == "all":
        (out / "summary.json").write_text(json.dumps(
            {"status": "FAIL" if failed else "PASS", "suites": status, "failed": failed},
            indent=2, sort_keys=True) + "\n")
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
