"""Strict TOML/JSON experiment configuration."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError, FlathamError
from .model import Harmonic, ModelSpec, SigmaModel, builtin_specs

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXPERIMENTS = (
    "model-check",
    "coeffs-tabulate",
    "simulate-full",
    "simulate-reduced",
    "corrector-solve",
    "verify-averaging",
    "verify-residence",
    "verify-gluing",
)

# per-experiment parameters and their defaults
PARAMS: dict[str, dict[str, Any]] = {
    "model-check": {"grid": 32, "nodes": 256},
    "coeffs-tabulate": {"h_start": 0.05, "h_stop": 1.0, "h_step": 0.05, "n_points": 256,
                        "nodes": 256, "interpolation": "monotone_cubic"},
    "simulate-full": {"epsilon": 0.05, "h0": 0.5, "t_end": 0.5, "n_paths": 1000, "dt_factor": 0.02,
                      "delta": 0.05, "trace_paths": 0, "trace_stride": 100},
    "simulate-reduced": {"start": "edge", "h0": 0.5, "x0": [0.0, 0.0], "t_end": 0.5, "dt": 1e-4,
                         "n_paths": 1000, "excursion_scale": 0.0, "p_edge": -1.0},
    "corrector-solve": {"beta0": 0.0, "modes": [[1, 1.0, 0.0]], "n_s": 2000, "n_theta": 32,
                        "s_max": 20.0, "bump": [1.0, 2.0]},
    "verify-averaging": {"checks": ["drift_qv", "weak"], "epsilon": 0.05, "h0": 0.5, "delta": 0.05,
                         "n_paths": 10000, "dt_factor": 0.02, "ks_epsilons": [0.2, 0.05],
                         "ks_paths": 4000, "ks_reduced_paths": 20000, "ks_t": 0.5, "ks_kill": 0.05,
                         "ks_dt": 1e-4, "ks_min_reduction": 0.3},
    "verify-residence": {"epsilon": 0.05, "t": 0.5, "deltas": [0.1, 0.05, 0.025], "n_paths": 10000,
                         "dt_factor": 0.02, "start_level": 0.0},
    "verify-gluing": {"epsilon": 0.05, "band": 0.1, "n_paths": 10000, "t_end": 0.5, "dt_factor": 0.02,
                      "reduced_dt": 1e-6, "reduced_paths": 10000},
}

TOP_KEYS = {"experiment", "seed", "output_dir", "threads", "model", "drift", "sigma", "params"}
MODEL_KEYS = {"builtin", "family", "n", "h_star", "epsilon", "collar_a", "semi_axes"}
DRIFT_KEYS = {"harmonics"}
HARMONIC_KEYS = {"index", "field", "amplitude", "phase"}
SIGMA_KEYS = {"kind", "matrix", "terms", "cos_matrix"}
TERM_KEYS = {"i", "j", "matrix"}


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelSpec
    params: dict
    seed: int = 0
    output_dir: str = "out"
    threads: int = 1
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Fully resolved, JSON-serializable form (re-loadable)."""
        out = dict(self.raw)
        out["experiment"] = self.experiment
        out["seed"] = self.seed
        out["params"] = self.params
        out.pop("output_dir", None)
        out.pop("threads", None)
        return out


def _strict(section: dict, allowed: set, prefix: str):
    if not isinstance(section, dict):
        raise ConfigError(prefix, "expected a table")
    for k in section:
        if k not in allowed:
            raise ConfigError(f"{prefix}.{k}" if prefix else k, "unknown key")


def _model_from(doc: dict) -> ModelSpec:
    m = doc.get("model")
    if m is None:
        raise ConfigError("model", "missing section")
    _strict(m, MODEL_KEYS, "model")
    if "builtin" in m:
        specs = builtin_specs()
        if m["builtin"] not in specs:
            raise ConfigError("model.builtin", f"unknown built-in {m['builtin']!r}; known: {sorted(specs)}")
        base = specs[m["builtin"]]
    else:
        for key in ("family", "n", "h_star"):
            if key not in m:
                raise ConfigError(f"model.{key}", "missing required key")
        base = ModelSpec()
    changes = {}
    for key in ("family", "n", "h_star", "epsilon", "collar_a"):
        if key in m:
            changes[key] = m[key]
    if "semi_axes" in m:
        changes["semi_axes"] = tuple(m["semi_axes"])
    if "drift" in doc:
        _strict(doc["drift"], DRIFT_KEYS, "drift")
        hs = []
        for i, h in enumerate(doc["drift"].get("harmonics", [])):
            _strict(h, HARMONIC_KEYS, f"drift.harmonics[{i}]")
            for key in ("index", "field"):
                if key not in h:
                    raise ConfigError(f"drift.harmonics[{i}].{key}", "missing required key")
            try:
                hs.append(Harmonic(h["index"], h["field"], float(h.get("amplitude", 1.0)), h.get("phase", "cos")))
            except FlathamError as e:
                raise ConfigError(f"drift.harmonics[{i}]", str(e)) from e
        changes["harmonics"] = tuple(hs)
    if "sigma" in doc:
        s = doc["sigma"]
        _strict(s, SIGMA_KEYS, "sigma")
        if "kind" not in s:
            raise ConfigError("sigma.kind", "missing required key")
        terms = []
        for i, t in enumerate(s.get("terms", [])):
            _strict(t, TERM_KEYS, f"sigma.terms[{i}]")
            terms.append((t.get("i", 0), t.get("j", 0), t["matrix"]))
        kw = {"kind": s["kind"], "terms": tuple(terms)}
        if "matrix" in s:
            kw["matrix"] = s["matrix"]
        if "cos_matrix" in s:
            kw["cos_matrix"] = s["cos_matrix"]
        try:
            changes["sigma"] = SigmaModel(**kw)
        except (FlathamError, ValueError) as e:
            raise ConfigError("sigma", str(e)) from e
    try:
        return base.with_(**changes) if changes else base
    except (FlathamError, ValueError) as e:
        raise ConfigError("model", str(e)) from e


def _params_from(experiment: str, given: dict) -> dict:
    defaults = PARAMS[experiment]
    _strict(given, set(defaults), "params")
    out = {}
    for k, v in defaults.items():
        val = given.get(k, v)
        if isinstance(v, bool) or isinstance(v, str):
            ok = isinstance(val, type(v))
        elif isinstance(v, (int, float)):
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
            if ok and isinstance(v, int) and not isinstance(v, bool) and int(val) != val:
                ok = False
            if ok:
                val = type(v)(val)
        elif isinstance(v, list):
            ok = isinstance(val, list)
        else:
            ok = True
        if not ok:
            raise ConfigError(f"params.{k}", f"expected {type(v).__name__}, got {val!r}")
        out[k] = val
    return out


def config_from_dict(doc: dict, experiment: str | None = None) -> ExperimentConfig:
    """Validate everything before any computation starts."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a table")
    _strict(doc, TOP_KEYS, "")
    exp = doc.get("experiment", experiment)
    if exp is None:
        raise ConfigError("experiment", "missing required key")
    if experiment is not None and exp != experiment:
        raise ConfigError("experiment", f"config says {exp!r} but the command runs {experiment!r}")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {exp!r}; known: {list(EXPERIMENTS)}")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed", "expected an unsigned 64-bit integer")
    threads = doc.get("threads", 1)
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads", "expected a positive integer")
    model = _model_from(doc)
    params = _params_from(exp, doc.get("params", {}))
    return ExperimentConfig(exp, model, params, seed, str(doc.get("output_dir", "out")), threads, doc)


def load_document(path) -> dict:
    p = Path(path)
    text = p.read_bytes()
    try:
        if p.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(str(p), f"cannot parse: {e}") from e


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    return config_from_dict(load_document(path), experiment)


def spec_document(spec: ModelSpec) -> dict:
    return {
        "family": spec.family, "n": spec.n, "h_star": spec.h_star, "epsilon": spec.epsilon,
        "semi_axes": list(spec.semi_axes), "collar_a": spec.collar_a,
        "harmonics": [[h.index, h.field, h.amplitude, h.phase] for h in spec.harmonics],
        "sigma": {"kind": spec.sigma.kind, "matrix": spec.sigma.matrix,
                  "terms": [list(t) for t in spec.sigma.terms], "cos_matrix": spec.sigma.cos_matrix},
    }


def spec_hash(spec: ModelSpec) -> str:
    blob = json.dumps(spec_document(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
