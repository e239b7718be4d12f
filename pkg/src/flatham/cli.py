"""Command line: ``flatham <command> [--config PATH] [--seed N] [--out DIR] [--threads N]``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .config import config_from_dict, load_document
from .errors import ConfigError, FlathamError

# (command, subcommand) -> experiment name
COMMANDS = {
    ("model-check", None): "model-check",
    ("coeffs", "tabulate"): "coeffs-tabulate",
    ("simulate", "full"): "simulate-full",
    ("simulate", "reduced"): "simulate-reduced",
    ("corrector", "solve"): "corrector-solve",
    ("verify", "averaging"): "verify-averaging",
    ("verify", "residence"): "verify-residence",
    ("verify", "gluing"): "verify-gluing",
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML or JSON experiment file")
    p.add_argument("--model", help="built-in model name when no --config is given (default: radial)")
    p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads (overrides FLATHAM_THREADS and the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flatham", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("model-check", help="mean-drift and ψ identities on a grid"))
    coeffs = sub.add_parser("coeffs", help="reduced coefficients and orbits")
    csub = coeffs.add_subparsers(dest="sub", required=True)
    _common(csub.add_parser("tabulate", help="b̄ and σ̄² on an h grid (CSV)"))
    orb = csub.add_parser("orbit", help="dump one level curve as CSV (idx, x1, x2, dl)")
    _common(orb)
    orb.add_argument("--h", type=float, required=True, help="level of K")
    orb.add_argument("--n-points", type=int, default=256)
    for name, subs in (("simulate", ("full", "reduced")), ("corrector", ("solve",)),
                       ("verify", ("averaging", "residence", "gluing"))):
        p = sub.add_parser(name)
        s = p.add_subparsers(dest="sub", required=True)
        for x in subs:
            _common(s.add_parser(x))
    return ap


def _document(args) -> dict:
    if args.config:
        doc = load_document(args.config)
        if args.model:
            raise ConfigError("--model", "use either --config or --model")
    else:
        doc = {"model": {"builtin": args.model or "radial"}}
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["output_dir"] = args.out
    env = os.environ.get("FLATHAM_THREADS")
    if env:
        try:
            doc["threads"] = int(env)
        except ValueError as e:
            raise ConfigError("FLATHAM_THREADS", "expected an integer") from e
    if args.threads is not None:
        doc["threads"] = args.threads
    return doc


def _orbit(args) -> int:
    from .flow import discretize_orbit

    doc = _document(args)
    cfg = config_from_dict({**doc, "experiment": "model-check", "params": {}})
    orbit = discretize_orbit(cfg.model, args.h, args.n_points)
    out = sys.stdout
    fh = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        fh = out = open(os.path.join(args.out, "orbit.csv"), "w", newline="")
    w = csv.writer(out)
    w.writerow(["idx", "x1", "x2", "dl"])
    for i, (p, dl) in enumerate(zip(orbit.points, orbit.weights)):
        w.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(dl))])
    if fh:
        fh.close()
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "coeffs" and args.sub == "orbit":
            return _orbit(args)
        experiment = COMMANDS[(args.command, getattr(args, "sub", None))]
        cfg = config_from_dict(_document(args), experiment)
        from .experiments import run_experiment

        manifest = run_experiment(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FlathamError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 3
    summary = {"experiment": manifest["experiment"], "passed": manifest["passed"],
               "verdicts": manifest["verdicts"], "output_dir": cfg.output_dir}
    print(json.dumps(summary, indent=2))
    return 0 if manifest["passed"] else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
