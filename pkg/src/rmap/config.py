"""Experiment configuration: YAML files validated against a JSON schema.

Validation happens before any computation.  Unknown keys are rejected at
every level.  Defaults are filled in after validation so the config hash
covers the fully resolved configuration.
"""

import copy
import hashlib
import json
import os
from importlib import resources

import jsonschema
import yaml

from rmap.errors import ConfigError

_solver = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "eps_f": {"type": "number", "exclusiveMinimum": 0},
        "eps_x": {"type": "number", "exclusiveMinimum": 0},
        "eps_g": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": {"type": "integer", "minimum": 1},
        "delta0": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "delta_max": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "eta_max": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "cg_max_iters": {"type": ["integer", "null"], "minimum": 1},
        "hessian_mode": {"enum": ["gauss-newton", "full"]},
        "preconditioner": {"enum": ["prior", "none"]},
        "lm_rtol": {"type": "number", "exclusiveMinimum": 0},
    },
}

_combination = {
    "type": "object",
    "additionalProperties": False,
    "required": ["optimizer", "start"],
    "properties": {
        "optimizer": {"enum": ["trincg", "lm"]},
        "start": {"enum": ["random", "prior-mean", "map", "warm"]},
    },
}

_analytical = {
    "additionalProperties": False,
    "required": ["type", "kind"],
    "properties": {
        "type": {"const": "analytical"},
        "kind": {"enum": ["J1", "J2", "linear"]},
    },
}

_linear = {
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"const": "linear"},
        "n_params": {"type": "integer", "minimum": 1, "maximum": 200},
        "n_obs": {"type": "integer", "minimum": 1, "maximum": 200},
        "noise_sigma": {"type": "number", "exclusiveMinimum": 0},
        "prior_var": {"type": "number", "exclusiveMinimum": 0},
        "matrix_seed": {"type": "integer", "minimum": 0},
    },
}

_helmholtz = {
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"const": "helmholtz"},
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nx": {"type": "integer", "minimum": 2},
                "ny": {"type": "integer", "minimum": 2},
            },
        },
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "u0": {"type": "number"},
        "noise_pct": {"type": "number", "minimum": 0},
        "noise_mode": {"enum": ["rms", "max"]},
        "observations": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid": {"type": "integer", "minimum": 1},
                "lo": {"type": "number", "minimum": 0, "maximum": 1},
                "hi": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tag": {"enum": ["left", "right", "bottom", "top"]},
                "flux": {"type": "number"},
            },
        },
        "data_seed": {"type": "integer", "minimum": 0},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rmap experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "problem", "sampler"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "seed": {"type": "integer", "minimum": 0},
        "problem": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": ["analytical", "linear", "helmholtz"]}},
            "allOf": [
                {"if": {"properties": {"type": {"const": name}}}, "then": branch}
                for name, branch in (("analytical", _analytical), ("linear", _linear), ("helmholtz", _helmholtz))
            ],
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "required": ["method", "n"],
            "properties": {
                "method": {"enum": ["rmap", "rto", "sn", "dram"]},
                "n": {"type": "integer", "minimum": 1},
                "start": {"enum": ["random", "prior-mean", "map", "warm"]},
                "start_point": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "optimizer": {"enum": ["trincg", "lm"]},
                "metropolize": {"enum": ["none", "simplified", "full"]},
                "weighted": {"type": "boolean"},
                "block_size": {"type": "integer", "minimum": 1},
                "warm_rank": {"type": ["integer", "null"], "minimum": 1},
                "rto_variant": {"enum": ["qr", "modified"]},
                "burn_in": {"type": "integer", "minimum": 0},
                "adapt_interval": {"type": "integer", "minimum": 1},
                "dr_scale": {"type": "number", "exclusiveMinimum": 0},
                "solver": _solver,
                "combinations": {"type": "array", "items": _combination, "minItems": 1},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "histogram": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lo", "hi", "bins"],
                    "properties": {
                        "lo": {"type": "number"},
                        "hi": {"type": "number"},
                        "bins": {"type": "integer", "minimum": 1},
                    },
                },
                "write_case": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "problem": {
        "linear": {"n_params": 10, "n_obs": 6, "noise_sigma": 0.5, "prior_var": 1.0, "matrix_seed": 0},
        "helmholtz": {
            "mesh": {"nx": 16, "ny": 16},
            "alpha": 8.0,
            "s": 2.0,
            "u0": 0.5,
            "noise_pct": 1.0,
            "noise_mode": "rms",
            "observations": {"grid": 5, "lo": 0.1, "hi": 0.9},
            "source": {"tag": "left", "flux": 1.0},
            "data_seed": 0,
        },
        "analytical": {},
    },
    "sampler": {
        "start": "random",
        "optimizer": "trincg",
        "metropolize": "none",
        "weighted": False,
        "block_size": 10,
        "warm_rank": None,
        "rto_variant": "qr",
        "burn_in": 1000,
        "adapt_interval": 100,
        "dr_scale": 0.01,
        "solver": {},
    },
    "outputs": {"write_case": True},
}

PRESETS = ("J1", "J2", "linear", "helmholtz-a8", "helmholtz-a3")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw):
    """Validate a parsed config and return it with defaults filled in.

    Raises:
        ConfigError: schema violation (the message names the offending path).
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        # oneOf errors are unhelpful on their own, report the closest branch
        err = jsonschema.exceptions.best_match(errors)
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {err.message}")
    cfg = copy.deepcopy(raw)
    cfg.setdefault("seed", DEFAULTS["seed"])
    cfg["problem"] = _merge(DEFAULTS["problem"][cfg["problem"]["type"]], cfg["problem"])
    cfg["sampler"] = _merge(DEFAULTS["sampler"], cfg["sampler"])
    cfg["outputs"] = _merge(DEFAULTS["outputs"], cfg.get("outputs", {}))
    smp = cfg["sampler"]
    if smp["method"] in ("sn", "dram") and "combinations" in smp:
        raise ConfigError("invalid config at sampler/combinations: only optimization-based samplers take combinations")
    if smp["metropolize"] != "none" and smp["method"] != "rmap":
        raise ConfigError("invalid config at sampler/metropolize: only rmap chains can be metropolized")
    hp = cfg["problem"]
    if hp["type"] == "helmholtz" and hp["observations"]["lo"] > hp["observations"]["hi"]:
        raise ConfigError("invalid config at problem/observations: lo must not exceed hi")
    return cfg


def load_config(path):
    """Read, parse and validate a YAML config file (or a preset name)."""
    if not os.path.exists(path) and path in PRESETS:
        return preset(path)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return validate(raw)


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("rmap").joinpath("presets", f"{name}.yaml").read_text()


def preset(name):
    return validate(yaml.safe_load(preset_text(name)))


def config_hash(cfg):
    """Short SHA-256 of the canonical JSON form of a resolved config."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
