"""Completeness gap of integrated gradients against the number of path steps.

Uses a trained checkpoint from a pipeline run and compares the right Riemann
sum with the trapezoid rule.

    python3 scripts/ig_convergence.py --run runs/repro/a --samples 20 --steps 64 256 1024
"""

import argparse
from pathlib import Path

import numpy as np

from apricot.attribute import integrated_gradients_heads
from apricot.cohort import load_windows
from apricot.model import load_model
from apricot.records import PRIMARY_HEADS


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", required=True, help="pipeline output directory")
    ap.add_argument("--samples", type=int, default=5)
    ap.add_argument("--steps", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    run = Path(args.run)
    params, cfg = load_model(run / "train" / "model")
    val = [s for s in load_windows(run / "prepare" / "windows_validation.npz") if len(s.codes)]
    picked = np.random.default_rng(args.seed).choice(len(val), args.samples, replace=False)
    print("rule       steps  worst_rel_gap  median_rel_gap  over_1pct")
    for rule in ("right", "trapezoid"):
        for steps in args.steps:
            rel = []
            for i in picked:
                for a in integrated_gradients_heads(params, val[i], PRIMARY_HEADS, cfg, steps, rule=rule):
                    rel.append(a.completeness_gap / max(1e-12, abs(a.f_input - a.f_baseline)))
            rel = np.array(rel)
            print(f"{rule:9s} {steps:6d}  {rel.max():13.4%}  {np.median(rel):14.4%}  {int((rel > 0.01).sum()):9d}")


if __name__ == "__main__":
    main()
