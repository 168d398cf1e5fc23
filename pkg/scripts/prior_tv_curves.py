"""Prior-predictive calibration curves for the transformation smoothness prior.

Sweeps the Weibull scale psi over a log2 grid and reports upper quantiles of
the total variation distance between hierarchically sampled residual
densities and the standard normal.  Use the table to pick a psi matching the
desired scepticism about deviations from Gaussianity (small TV = near-normal
shapes a priori).

Example:
    python3 scripts/prior_tv_curves.py --k-range -6 2 --n-tau 50 --n-delta 50
"""

import argparse

import numpy as np
import pandas as pd

from transreg.priors import prior_predictive_tv
from transreg.transform import make_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--k-range", nargs=2, type=int, default=(-10, 4),
                        metavar=("KMIN", "KMAX"), help="psi = 2**k for k in [KMIN, KMAX]")
    parser.add_argument("--n-tau", type=int, default=100, help="variance draws per psi")
    parser.add_argument("--n-delta", type=int, default=100,
                        help="coefficient draws per variance draw")
    parser.add_argument("--n-bases", type=int, default=31)
    parser.add_argument("--levels", nargs="+", type=float, default=(0.90, 0.95, 0.99))
    parser.add_argument("--seed", type=int, default=20250812)
    parser.add_argument("--out", type=str, default=None, help="optional CSV path")
    args = parser.parse_args(argv)

    tconfig = make_config(n_bases=args.n_bases)
    rng = np.random.default_rng(args.seed)
    rows = []
    for k in range(args.k_range[0], args.k_range[1] + 1):
        psi = 2.0 ** k
        tv = prior_predictive_tv(psi, args.n_tau, args.n_delta, rng, tconfig)
        row = {"k": k, "psi": psi}
        for level in args.levels:
            row[f"q{int(round(100 * level))}"] = float(np.quantile(tv, level))
        rows.append(row)
        print(f"psi = 2^{k:+d}: " + "  ".join(
            f"q{int(round(100 * lv))} {row[f'q{int(round(100 * lv))}']:.3f}"
            for lv in args.levels
        ))

    frame = pd.DataFrame(rows)
    if args.out:
        frame.to_csv(args.out, index=False)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
