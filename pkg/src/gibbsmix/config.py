"""Strict YAML experiment configuration.

Duplicate keys, unknown keys and out-of-domain values are rejected at load
time; every default that gets filled in is recorded in the resolved config.
"""
from __future__ import annotations

import copy
import math
import os
from dataclasses import asdict, dataclass, field

import yaml

__all__ = ["ConfigError", "ExperimentConfig", "KINDS", "load_config", "load_config_file",
           "resolve_config", "default_output_dir", "OUTPUT_ENV"]

KINDS = ("sample", "bounds", "verify_isoperimetry", "sweep", "calibrate")
OUTPUT_ENV = "GIBBSMIX_OUTPUT_DIR"
FAMILIES = ("gaussian", "two_point", "logcosh", "perturbed_gaussian")
CHECKS = ("cube", "facts", "three_set")


class ConfigError(ValueError):
    """Invalid configuration text or value."""


class _StrictLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    loader.flatten_mapping(node)
    seen = {}
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            m = key_node.start_mark
            raise ConfigError(f"line {m.line + 1}, column {m.column + 1}: duplicate key {key!r}")
        seen[key] = True
    return yaml.SafeLoader.construct_mapping(loader, node, deep=deep)


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "runs")


_CHAIN_DEFAULTS = {"lazy": False, "scan": "random_uniform", "thin": None}
_TARGET_DEFAULTS = {"family": "two_point", "params": {}}
_START_DEFAULTS = {"type": "underdispersed", "c": 0.5, "x0": None}

# per kind: key -> default (a value of REQUIRED must be supplied)
REQUIRED = object()
_COMMON = {"kind": REQUIRED, "seed": 0, "output_dir": None, "plot_data": True}
_SCHEMA = {
    "bounds": {"n": REQUIRED, "kappa": REQUIRED, "M": REQUIRED, "gamma": 0.1, "mu": 1.0,
               "lipschitz": None, "c_prime": 1.0},
    "sample": {"n": 2, "kappa": 1.0, "target": _TARGET_DEFAULTS, "chain": _CHAIN_DEFAULTS,
               "start": _START_DEFAULTS, "T": 1000, "replicas": 1},
    "sweep": {"dims": [2, 4, 8, 16, 32], "kappas": [1, 4, 16], "gamma": 0.1,
              "criterion": "moment_match", "threshold": 0.05, "replicas_per_dim": 1500,
              "start": _START_DEFAULTS, "T_max": 20000, "workers": 1, "chain": _CHAIN_DEFAULTS},
    "verify_isoperimetry": {"grids": [[3, 2], [4, 2], [2, 3]], "family": "gaussian",
                            "epsilon": 0.01, "cubes": 100, "halfspaces": 100,
                            "random_partitions": 1000, "ball_cells": 24,
                            "checks": list(CHECKS)},
    "calibrate": {"n": 2, "kappa": 1.0, "samples": 100000, "bins": 40, "ess_length": 10000},
}


@dataclass
class ExperimentConfig:
    kind: str
    values: dict = field(default_factory=dict)
    defaults_filled: list = field(default_factory=list)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def resolved(self) -> dict:
        return copy.deepcopy(self.values)

    def as_dict(self) -> dict:
        return {"resolved": self.resolved(), "defaults_filled": list(self.defaults_filled)}


def _fail(msg: str):
    raise ConfigError(msg)


def _open_unit(name: str, value, clause: str):
    if not (isinstance(value, (int, float)) and 0.0 < value < 0.5):
        sym = {"gamma": "γ", "epsilon": "ε", "s": "s"}.get(name, name)
        _fail(f"{name} = {value!r} violates {sym} ∈ (0, 1/2), {clause}")


def _positive_int(name, value, least=1):
    if not isinstance(value, int) or isinstance(value, bool) or value < least:
        _fail(f"{name} must be an integer >= {least}, got {value!r}")


def _number(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _fail(f"{name} must be a finite number, got {value!r}")
    return float(value)


def _merge_sub(name: str, given, defaults: dict, filled: list) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        _fail(f"{name} must be a mapping")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        _fail(f"unknown key(s) in {name}: {', '.join(map(str, unknown))}")
    out = copy.deepcopy(defaults)
    for k in defaults:
        if k in given:
            out[k] = given[k]
        else:
            filled.append(f"{name}.{k}")
    return out


def _validate(kind: str, v: dict):
    thm = "required by the mixing-time theorem's hypotheses"
    if "seed" in v:
        if not isinstance(v["seed"], int) or not 0 <= v["seed"] < 2 ** 64:
            _fail(f"seed must be a 64-bit unsigned integer, got {v['seed']!r}")
    if "gamma" in v:
        _open_unit("gamma", v["gamma"], thm)
    if "epsilon" in v:
        _open_unit("epsilon", v["epsilon"], "required of the concentration radius and of s")
    if "M" in v:
        if _number("M", v["M"]) < 1.0:
            _fail(f"M = {v['M']!r} violates M >= 1 (a warm start has density ratio at least 1)")
    if "kappa" in v:
        if _number("kappa", v["kappa"]) < 1.0:
            _fail(f"kappa = {v['kappa']!r} violates L >= mu > 0 (kappa = L/mu >= 1)")
    if "mu" in v:
        if _number("mu", v["mu"]) <= 0:
            _fail(f"mu = {v['mu']!r} violates L >= mu > 0")
    if v.get("lipschitz") is not None:
        if _number("lipschitz", v["lipschitz"]) < v.get("mu", 1.0):
            _fail(f"lipschitz = {v['lipschitz']!r} violates L >= mu > 0")
    if kind == "bounds":
        _positive_int("n", v["n"], 2)
    if kind in ("sample", "calibrate"):
        _positive_int("n", v["n"], 1)
    if kind == "sample":
        _positive_int("T", v["T"], 0)
        _positive_int("replicas", v["replicas"])
    if kind == "calibrate":
        if v["n"] > 2:
            _fail("calibrate uses histogram TV and needs n <= 2")
        _positive_int("samples", v["samples"])
        _positive_int("bins", v["bins"])
        _positive_int("ess_length", v["ess_length"], 100)
    if kind == "sweep":
        for key, least in (("dims", 2), ("kappas", 1)):
            seq = v[key]
            if not isinstance(seq, list) or not seq:
                _fail(f"{key} must be a nonempty list")
            for x in seq:
                if key == "dims":
                    _positive_int("dims entry", x, least)
                elif _number("kappas entry", x) < 1.0:
                    _fail(f"kappas entry {x!r} violates L >= mu > 0 (kappa >= 1)")
        if v["criterion"] not in ("moment_match", "gaussian_kl"):
            _fail("sweep criterion must be moment_match or gaussian_kl")
        if _number("threshold", v["threshold"]) <= 0:
            _fail("threshold must be positive")
        _positive_int("replicas_per_dim", v["replicas_per_dim"])
        _positive_int("T_max", v["T_max"])
        _positive_int("workers", v["workers"])
    if kind == "verify_isoperimetry":
        if v["family"] not in ("gaussian", "logcosh"):
            _fail("verify_isoperimetry family must be gaussian or logcosh")
        for g in v["grids"]:
            if (not isinstance(g, list) or len(g) != 2 or g[1] not in (2, 3)
                    or not isinstance(g[0], int) or g[0] < 1):
                _fail(f"grid entry {g!r} must be [cells_per_axis, dim] with dim 2 or 3")
        bad = sorted(set(v["checks"]) - set(CHECKS))
        if bad:
            _fail(f"unknown checks {bad}; choose from {list(CHECKS)}")
        for key in ("cubes", "halfspaces", "random_partitions", "ball_cells"):
            _positive_int(key, v[key])
    if "chain" in v:
        c = v["chain"]
        if c["scan"] not in ("random_uniform", "systematic_cyclic"):
            _fail(f"chain.scan must be random_uniform or systematic_cyclic, got {c['scan']!r}")
        if not isinstance(c["lazy"], bool):
            _fail("chain.lazy must be a boolean")
    if "start" in v:
        s = v["start"]
        if s["type"] not in ("underdispersed", "point", "target"):
            _fail("start.type must be underdispersed, point or target")
        if s["type"] == "underdispersed" and not (isinstance(s["c"], (int, float)) and 0 < s["c"] < 1):
            _fail(f"start.c = {s['c']!r} must lie in (0, 1); the warmness c^(-n/2) is finite only there")
    if "target" in v and v["target"]["family"] not in FAMILIES:
        _fail(f"target.family must be one of {list(FAMILIES)}")


def resolve_config(data: dict) -> ExperimentConfig:
    """Validate a parsed mapping and fill defaults."""
    if not isinstance(data, dict):
        _fail("configuration must be a mapping")
    kind = data.get("kind")
    if kind not in KINDS:
        _fail(f"kind must be one of {list(KINDS)}, got {kind!r}")
    schema = {**_COMMON, **_SCHEMA[kind]}
    unknown = sorted(set(data) - set(schema))
    if unknown:
        _fail(f"unknown key(s) for kind {kind}: {', '.join(map(str, unknown))}")
    values, filled = {}, []
    for key, default in schema.items():
        if key in data:
            val = data[key]
            if isinstance(default, dict):
                val = _merge_sub(key, val, default, filled)
            values[key] = val
        elif default is REQUIRED:
            _fail(f"missing required key {key!r} for kind {kind}")
        else:
            values[key] = copy.deepcopy(default)
            filled.append(key)
    if values["output_dir"] is None:
        values["output_dir"] = default_output_dir()
    _validate(kind, values)
    return ExperimentConfig(kind, values, filled)


def load_config(text: str) -> ExperimentConfig:
    """Parse strict YAML text into a resolved config."""
    try:
        data = yaml.load(text, Loader=_StrictLoader)
    except yaml.MarkedYAMLError as exc:
        m = exc.problem_mark or exc.context_mark
        where = f"line {m.line + 1}, column {m.column + 1}: " if m else ""
        raise ConfigError(f"{where}{exc.problem or exc}") from None
    return resolve_config(data)


def load_config_file(path) -> ExperimentConfig:
    with open(path) as fh:
        return load_config(fh.read())
