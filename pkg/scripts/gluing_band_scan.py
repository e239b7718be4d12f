"""Band-exit probability through the inner side, full system vs the 1-D prediction, per band width."""
import argparse

import numpy as np

from flatham.fullsim import PathConfig, exit_statistics, uniform_on_level
from flatham.model import builtin_specs
from flatham.reduced import band_exit_prediction


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="radial")
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--bands", type=float, nargs="+", default=[0.1, 0.05])
    ap.add_argument("--paths", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    spec = builtin_specs()[a.model]
    x0 = uniform_on_level(spec, 0.0, a.seed, np.arange(a.paths))
    print("band,p_inner,se,prediction,z")
    for band in a.bands:
        (pin, _, _), _ = exit_statistics(spec, x0, PathConfig(epsilon=a.eps, t_end=1.0, seed=a.seed), band,
                                         a.threads)
        pred = band_exit_prediction(spec, band)
        print(f"{band},{pin.value:.5f},{pin.se:.5f},{pred:.5f},{(pin.value - pred) / pin.se:+.2f}", flush=True)


if __name__ == "__main__":
    main()
