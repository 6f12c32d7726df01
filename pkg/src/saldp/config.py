"""Experiment configuration: YAML in, fully explicit dict out.

A config names a model builder and its parameters, a step schedule, the
horizon ``T``, a seed, an output directory and operation parameters.  The
canonical form (every default filled in) is what gets echoed and hashed.
"""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path as FsPath

import numpy as np
import yaml

from . import models as mdl
from .schedule import ScheduleError, StepSchedule


class ConfigError(ValueError):
    pass


DEFAULT_PARAMS = {
    "n": 1000,
    "N": 1000,
    "dt": 1e-3,
    "K": 8,
    "nodes": 8,
    "delta": 0.05,
    "cap": 1.0,
    "chunk": 256,
    "n_list": [100, 1000, 10000],
}

DEFAULTS = {
    "model": {"builder": "bernoulli", "params": {}},
    "schedule": {"kind": "harmonic"},
    "T": 1.0,
    "seed": 0,
    "out": "out",
    "params": DEFAULT_PARAMS,
}

MODEL_DEFAULTS = {
    "bernoulli": {"p": 0.5, "x0": 0.0},
    "two_state": {"a": 0.3, "b": 0.4, "kappa": 0.0, "x0": 0.0},
    "finite": {"matrix": [[0.7, 0.3], [0.6, 0.4]], "g": [[0.0], [1.0]], "x0": None},
    "sgd_logistic": {"xi": [-1.5, -0.5, 0.5, 1.5, -1.0, 1.0], "labels": [-1, -1, 1, 1, 1, -1], "x0": None},
    "rbm": {"dV": 3, "dH": 3, "M": 5, "scale": 0.5, "seed": 0},
    "wang_landau": {"spec": "symmetric"},
    "gaussian": {"b": [0.0], "sigma": 1.0, "x0": [0.0]},
}

WL_SPECS = {
    "symmetric": mdl.symmetric_spec,
    "multicanonical": mdl.multicanonical_spec,
    "free_energy": mdl.free_energy_spec,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[k] = nxt
        cur = nxt
    cur[keys[-1]] = value


def parse_override(item):
    """``key.sub=value`` with the value parsed as YAML (numbers, lists, ...)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    k, v = item.split("=", 1)
    try:
        return k.strip(), yaml.safe_load(v)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {v!r}: {exc}") from exc


def canonical(raw):
    """Fill defaults and validate; returns a plain nested dict."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    builder = cfg["model"].get("builder")
    if builder not in MODEL_DEFAULTS:
        raise ConfigError(f"unknown model builder {builder!r}; choose from {sorted(MODEL_DEFAULTS)}")
    extra = set(cfg["model"]) - {"builder", "params"}
    if extra:
        raise ConfigError(f"unknown model keys: {sorted(extra)}")
    cfg["model"]["params"] = _merge(MODEL_DEFAULTS[builder], cfg["model"].get("params"))
    bad = set(cfg["model"]["params"]) - set(MODEL_DEFAULTS[builder])
    if bad:
        raise ConfigError(f"unknown parameters for {builder}: {sorted(bad)}")
    try:
        cfg["schedule"] = StepSchedule.from_dict(cfg["schedule"]).to_dict()
    except (ScheduleError, TypeError) as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc
    try:
        cfg["T"] = float(cfg["T"])
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad T or seed: {exc}") from exc
    if not cfg["T"] > 0:
        raise ConfigError("T must be positive")
    cfg["out"] = str(cfg["out"])
    return cfg


def load(path=None, preset=None, overrides=()):
    raw = {}
    if preset is not None:
        raw = load_preset(preset)
    if path is not None:
        try:
            text = FsPath(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = _merge(raw, yaml.safe_load(text) or {})
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    for item in overrides:
        k, v = parse_override(item)
        _set_path(raw, k, v)
    return canonical(raw)


def preset_names():
    root = resources.files("saldp") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name):
    root = resources.files("saldp") / "presets"
    f = root / f"{name}.yaml"
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return yaml.safe_load(f.read_text()) or {}


def dump(cfg):
    return yaml.safe_dump(cfg, sort_keys=True)


def config_hash(cfg):
    """Short sha256 of the canonical config; the output directory is excluded
    so that reruns elsewhere carry the same hash."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_model(cfg):
    """Model instance (and, for some builders, an auxiliary spec) from a canonical config."""
    b = cfg["model"]["builder"]
    p = cfg["model"]["params"]
    try:
        if b == "bernoulli":
            return mdl.bernoulli_model(p["p"], p["x0"]), None
        if b == "two_state":
            return mdl.two_state_model(p["a"], p["b"], p["kappa"], p["x0"]), None
        if b == "finite":
            return mdl.finite_model(p["matrix"], p["g"], p["x0"]), None
        if b == "sgd_logistic":
            data = mdl.LogisticDataset(p["xi"], p["labels"])
            return mdl.sgd_logistic_model(data, p["x0"]), data
        if b == "rbm":
            spec = mdl.RBMSpec.random(p["dV"], p["dH"], p["M"], p["scale"], p["seed"])
            return mdl.rbm_model(spec), spec
        if b == "wang_landau":
            if p["spec"] not in WL_SPECS:
                raise ConfigError(f"unknown Wang-Landau spec {p['spec']!r}")
            spec = WL_SPECS[p["spec"]]()
            return mdl.wang_landau_model(spec), spec
        if b == "gaussian":
            return mdl.gaussian_additive(np.asarray(p["b"], dtype=float), p["sigma"], p["x0"]), None
    except (ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot build model {b!r}: {exc}") from exc
    raise ConfigError(f"unknown builder {b!r}")


def schedule_of(cfg):
    return StepSchedule.from_dict(cfg["schedule"])
