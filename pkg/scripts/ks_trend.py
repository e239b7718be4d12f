"""KS distance between the killed law of K(X^ε_t) and the edge diffusion, over a list of ε.

Writes a CSV (epsilon, ks, n_full, n_reduced) to stdout or --csv.
"""
import argparse
import csv
import sys

import numpy as np
from scipy.stats import ks_2samp

from flatham.averaging import tabulate_reduced
from flatham.fullsim import PathConfig, killed_level_law, uniform_on_level
from flatham.model import builtin_specs
from flatham.reduced import simulate_edge


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="radial_mixed")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    ap.add_argument("--h0", type=float, default=0.5)
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--kill", type=float, default=0.05)
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--reduced-paths", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--csv")
    a = ap.parse_args()
    spec = builtin_specs()[a.model]
    table = tabulate_reduced(spec, threads=a.threads)
    red = simulate_edge(table, a.h0, a.t, 1e-4, a.seed, a.reduced_paths, lower=a.kill).h
    idx = np.arange(a.paths)
    x0 = uniform_on_level(spec, a.h0, a.seed, idx)
    out = open(a.csv, "w", newline="") if a.csv else sys.stdout
    w = csv.writer(out)
    w.writerow(["epsilon", "ks", "n_full", "n_reduced"])
    for eps in a.eps:
        K = killed_level_law(spec, x0, PathConfig(epsilon=eps, t_end=a.t, seed=a.seed), a.kill, a.threads)
        w.writerow([eps, repr(float(ks_2samp(K, red).statistic)), a.paths, a.reduced_paths])
        out.flush()


if __name__ == "__main__":
    main()
