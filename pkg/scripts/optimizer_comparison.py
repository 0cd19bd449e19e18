"""Regression selective risk at low coverage under plain gradient descent
and under Adam, on the heteroscedastic sinusoid.

Precision weights spread over two orders of magnitude, which makes the
weighted squared loss badly conditioned for a constant gradient step; this
script shows the effect on the ERM/wERM comparison.
"""

import argparse
from dataclasses import replace

from wermlab.dgp import RegressionDgpSpec
from wermlab.pipeline import FitConfig
from wermlab.risk import sweep
from wermlab.rng import derive_seed

ap = argparse.ArgumentParser()
ap.add_argument("--seeds", type=int, default=3)
ap.add_argument("--steps", type=int, default=5000)
args = ap.parse_args()

alphas = [0.1, 0.2, 0.3, 0.5, 1.0]
seeds = [derive_seed(0, s) for s in range(args.seeds)]
base = FitConfig(steps=args.steps, hidden=64)
for label, cfg in (("gd step 0.01", replace(base, step_size=0.01)),
                   ("adam step 0.003", replace(base, optimizer="adam", step_size=0.003))):
    print(f"{label}: alpha erm werm", flush=True)
    for r in sweep(RegressionDgpSpec(), alphas, seeds, cfg).aggregate():
        print(f"  {r.alpha:g} {r.mean_erm:.5f} {r.mean_werm:.5f}", flush=True)
