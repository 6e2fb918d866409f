"""Run the default pipeline twice with one seed and report headline numbers.

    python3 scripts/reproduce.py --out runs/repro --seed 7
"""

import argparse
import csv
import filecmp
import json
import time
from pathlib import Path

from apricot.cli import main

REPORTS = ("eval/metrics.csv", "eval/metrics.json", "analyze/lead_time_summary.csv", "attribute/ranking.csv")


def run(out: Path, seed: int, extra: list[str]) -> float:
    start = time.perf_counter()
    code = main(["pipeline", "--out", str(out), "--seed", str(seed), "--force"] + extra)
    if code:
        raise SystemExit(code)
    return time.perf_counter() - start


def main_() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/repro")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--once", action="store_true", help="skip the determinism rerun")
    args, extra = ap.parse_known_args()
    out = Path(args.out)
    minutes = run(out / "a", args.seed, extra) / 60
    metrics = json.loads((out / "a/eval/metrics.json").read_text())["validation"]
    print(f"pipeline: {minutes:.1f} min")
    for head in ("stable", "unstable", "deceased", "discharge"):
        auc = metrics[head]["auroc"]
        print(f"  {head:10s} AUROC {auc[0]:.3f} [{auc[1]:.3f}, {auc[2]:.3f}]" if auc else f"  {head:10s} undefined")
    summary = json.loads((out / "a/attribute/summary.json").read_text())
    print("  top variables:", ", ".join(summary["top_variables"]))
    with open(out / "a/analyze/lead_time_summary.csv") as fh:
        for r in csv.DictReader(fh):
            print(f"  {r['outcome']}: sensitivity {r['sensitivity']} -> {r['adjusted_sensitivity']}, "
                  f"ppv {r['ppv']} -> {r['adjusted_ppv']}")
    if not args.once:
        run(out / "b", args.seed, extra)
        same = all(filecmp.cmp(out / "a" / r, out / "b" / r, shallow=False) for r in REPORTS)
        print("rerun byte-identical:", same)


if __name__ == "__main__":
    main_()
