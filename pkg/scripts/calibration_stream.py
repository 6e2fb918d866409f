"""Brier reduction from 3-fold isotonic calibration on squared-probability streams.

Two readings of a squared stream are compared: the score is the square of
the event probability, or the event probability is the square of the score.
Under the first reading no monotone recalibration can remove more than 20%
of the Brier score, since the gain is E[x^2] / (E[x] + E[x^2]) with
x = p(1 - p) <= 1/4.

    python3 scripts/calibration_stream.py
"""

import argparse

import numpy as np

from apricot.calibrate import brier, calibrate_cv3

DRAWS = {
    "uniform": lambda rng, n: rng.uniform(size=n),
    "beta(1,2)": lambda rng, n: rng.beta(1, 2, n),
    "logit-normal": lambda rng, n: 1 / (1 + np.exp(-rng.normal(size=n))),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=30_000)
    ap.add_argument("--fit-frac", type=float, default=1 / 3)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    n_fit = int(args.n * args.fit_frac)
    print("reading           draw           brier_raw  brier_cal  reduction")
    for reading in ("score = p^2", "rate = score^2"):
        for name, draw in DRAWS.items():
            red, raw, cal = [], [], []
            for seed in range(args.seeds):
                rng = np.random.default_rng(seed)
                u = draw(rng, args.n)
                score, rate = (u ** 2, u) if reading == "score = p^2" else (u, u ** 2)
                y = (rng.uniform(size=args.n) < rate).astype(int)
                c = calibrate_cv3(score[:n_fit], y[:n_fit], seed)
                b0, b1 = brier(score[n_fit:], y[n_fit:]), brier(c(score[n_fit:]), y[n_fit:])
                raw.append(b0), cal.append(b1), red.append(1 - b1 / b0)
            print(f"{reading:17s} {name:13s} {np.mean(raw):10.4f} {np.mean(cal):10.4f} {np.mean(red):10.1%}")


if __name__ == "__main__":
    main()
