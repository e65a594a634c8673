"""Command line entry point ``levy-valley-lab``."""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .experiments import SCENARIOS, ConfigError, ExperimentConfig, run
from .path_sim import HorizonCapExceeded


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="levy-valley-lab",
        description="Monte Carlo laboratory for diffusions in spectrally negative "
                    "Levy environments.",
    )
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--env", required=True,
                   help="preset such as bm-kappa:2, a JSON file or an inline JSON object")
    p.add_argument("--reps", type=int, default=1000, help="replications (default 1000)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r", type=float, help="space horizon (thm1, thm2, crosscheck-direct)")
    p.add_argument("--t", type=float, help="time horizon (thm3)")
    p.add_argument("--h", type=float, help="valley height (thm4, decompose)")
    p.add_argument("--delta", type=float, help="valley margin in (0, 1/2)")
    p.add_argument("--dt", type=float, help="environment grid step")
    p.add_argument("--eps", type=float, help="subordinator truncation (thm3)")
    p.add_argument("--eta", type=float, default=0.0, help="renewal shift in [0, 1)")
    p.add_argument("--k-reps", type=int, default=20_000,
                   help="samples for the Monte Carlo estimate of K")
    p.add_argument("--r-bank", type=int, default=3000, help="size of the R bank (thm3)")
    p.add_argument("--r-bank-h", type=float, help="height at which R is sampled (thm3)")
    p.add_argument("--spacing", choices=("replication", "within"), default="replication",
                   help="thm4: one ascent per replication or spacings along one path")
    p.add_argument("--valleys-per-rep", type=int, default=20)
    p.add_argument("--path", help="decompose: CSV path t,v,is_jump instead of simulating")
    p.add_argument("--brownian-step", type=float, default=0.02,
                   help="crosscheck-direct: natural-scale step of the walk")
    p.add_argument("--max-steps", type=int, help="grid-step budget per valley or ascent")
    p.add_argument("--threshold", type=float, help="override the KS or error threshold")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory (default .)")
    p.add_argument("--dump-samples", action="store_true",
                   help="also write samples.csv and scenario sidecars")
    p.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit with status 2 when a check fails")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = ExperimentConfig(
        scenario=args.scenario, env=args.env, reps=args.reps, seed=args.seed,
        r=args.r, t=args.t, h=args.h, delta=args.delta, dt=args.dt, eps=args.eps,
        eta=args.eta, workers=args.workers, out=args.out, dump_samples=args.dump_samples,
        k_reps=args.k_reps, r_bank=args.r_bank, r_bank_h=args.r_bank_h,
        spacing=args.spacing, valleys_per_rep=args.valleys_per_rep, path=args.path,
        threshold=args.threshold, max_steps=args.max_steps, brownian_step=args.brownian_step,
    )
    try:
        report = run(cfg)
    except ConfigError as exc:
        print(f"levy-valley-lab: error: {exc}", file=sys.stderr)
        return 1
    except HorizonCapExceeded as exc:
        print(f"levy-valley-lab: step budget exceeded: {exc}", file=sys.stderr)
        return 1
    s = report.summary
    ks = s.get("ks_distance")
    line = f"{cfg.scenario}: n={s['n']} mean={s['mean']:.6g}"
    if ks is not None:
        line += f" ks={ks:.4f}"
    for c in report.checks:
        line += f" [{c['name']} {'ok' if c['passed'] else 'FAIL'}]"
    print(line)
    if args.assert_ and not report.passed:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
