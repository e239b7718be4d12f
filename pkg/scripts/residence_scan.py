"""(1/δ)·occupation of {|K| ≤ δ} over a δ grid and several horizons t.

Each row reports the estimate and its SE; paired differences between
successive δ are in the last two columns.
"""
import argparse
import csv
import sys

import numpy as np

from flatham.fullsim import PathConfig, estimate_of, residence_functional, uniform_on_level
from flatham.model import builtin_specs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="radial")
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--t", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025, 0.0125])
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    spec = builtin_specs()[a.model]
    deltas = sorted(a.deltas, reverse=True)
    x0 = uniform_on_level(spec, 0.0, a.seed, np.arange(a.paths))
    w = csv.writer(sys.stdout)
    w.writerow(["t", "delta", "value", "se", "growth_vs_prev", "growth_se"])
    for t in a.t:
        est, samples = residence_functional(spec, x0, PathConfig(epsilon=a.eps, t_end=t, seed=a.seed), deltas,
                                            a.threads)
        for i, d in enumerate(deltas):
            g = estimate_of(samples[:, i] - samples[:, i - 1]) if i else None
            w.writerow([t, d, repr(est[d].value), repr(est[d].se),
                        "" if g is None else repr(g.value), "" if g is None else repr(g.se)])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
