"""Run every config in configs/ (or the ones given) and print a verdict table.

    python scripts/run_suite.py                      # all configs
    python scripts/run_suite.py configs/corrector.toml --threads 4
"""
import argparse
import json
import sys
import time
from pathlib import Path

from flatham.config import load_config
from flatham.experiments import run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("configs", nargs="*", help="config files (default: configs/*.toml)")
    ap.add_argument("--out-root", default="out", help="prefix for output directories")
    ap.add_argument("--threads", type=int)
    args = ap.parse_args()
    paths = [Path(p) for p in args.configs] or sorted((ROOT / "configs").glob("*.toml"))
    summary = {}
    for path in paths:
        cfg = load_config(str(path))
        cfg.output_dir = str(Path(args.out_root) / path.stem)
        if args.threads:
            cfg.threads = args.threads
        t0 = time.perf_counter()
        m = run_experiment(cfg)
        failed = [k for k, v in m["verdicts"].items() if not v]
        status = "PASS" if m["passed"] else "FAIL " + ",".join(failed)
        print(f"{path.stem:<20} {cfg.experiment:<18} {time.perf_counter() - t0:7.1f}s  {status}", flush=True)
        summary[path.stem] = {"experiment": cfg.experiment, "passed": m["passed"], "verdicts": m["verdicts"]}
    Path(args.out_root).mkdir(parents=True, exist_ok=True)
    (Path(args.out_root) / "suite_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0 if all(s["passed"] for s in summary.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
