"""Run configuration: a JSON file validated against a schema at load time."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .fixedpoint import ExponentParams


class ConfigError(ValueError):
    """Malformed configuration; the message names the line or the field."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 16, "multipleOf": 2}, "box_side": _pos},
        },
        "profile": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "amplitude": {"type": "number", "minimum": 0},
                "support_radius": _pos,
                "shape": {"enum": ["axisymmetric_swirl", "curl_bump"]},
                "b": _pos,
                "theta_amplitude": {"type": "number", "minimum": 0},
            },
        },
        "exponents": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _num for k in ("a", "delta", "beta", "gamma", "b", "N", "M")},
        },
        "stepper": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dt": _pos, "tau0": _num, "tau_min": _num},
        },
        "spectra": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_star": {"type": "number", "minimum": 0.2, "maximum": 1.0},
                "krylov_dim": {"type": "integer", "minimum": 8},
                "tol": _pos,
                "seed": {"type": "integer", "minimum": 0},
                "sweep_amplitudes": {"type": "array", "items": _pos, "minItems": 1},
                "sweep_n": {"type": "integer", "minimum": 16, "multipleOf": 2},
                "sweep_box_side": _pos,
            },
        },
        "fixedpoint": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _pos,
                "max_iter": {"type": "integer", "minimum": 1},
                "coefficients": {"type": "array", "items": _num, "minItems": 2},
            },
        },
        "probe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "generator": {"enum": ["L", "L_ss"]},
                "m": {"type": "number", "minimum": 0},
                "k": {"type": "number", "minimum": 0},
                "seeds": {"type": "integer", "minimum": 5},
            },
        },
        "mode": {"enum": ["computed", "synthetic", "auto"]},
    },
}

DEFAULTS = {
    "grid": {"n": 32, "box_side": 12.0},
    "profile": {
        "amplitude": 1.0,
        "support_radius": 1.0,
        "shape": "axisymmetric_swirl",
        "b": 1.5,
        "theta_amplitude": 1.0,
    },
    "exponents": {"a": 2.0, "delta": 0.1, "beta": 2.5, "gamma": 3.0, "N": 1.75, "M": 0.5},
    "stepper": {"dt": 1e-3, "tau0": math.log(0.1), "tau_min": math.log(1e-3)},
    "spectra": {
        "tau_star": 0.5,
        "krylov_dim": 16,
        "tol": 1e-6,
        "seed": 0,
        "sweep_amplitudes": [1, 2, 4, 8, 16],
        "sweep_n": 16,
        "sweep_box_side": 8.0,
    },
    "fixedpoint": {"tol": 1e-6, "max_iter": 30, "coefficients": [1.0, 2.0]},
    "probe": {"generator": "L", "m": 0, "k": 1, "seeds": 10},
    "mode": "auto",
}


@dataclass
class RunConfig:
    data: dict
    source: str = "<defaults>"

    def __getitem__(self, key):
        return self.data[key]

    @property
    def mode(self) -> str:
        return self.data["mode"]

    def exponents(self) -> ExponentParams:
        e, st = self.data["exponents"], self.data["stepper"]
        return ExponentParams(
            e["a"], e["delta"], e["beta"], e["gamma"], e["b"], e["N"], st["tau0"], e["M"]
        )

    def with_overrides(self, mode: str | None = None, seed: int | None = None) -> "RunConfig":
        d = copy.deepcopy(self.data)
        if mode is not None:
            d["mode"] = mode
        if seed is not None:
            d["spectra"]["seed"] = int(seed)
        return RunConfig(d, self.source)


def _field_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def _locate(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{source}: line {err.lineno}, column {err.colno}: {err.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = _field_path(err)
        last = str(err.absolute_path[-1]) if err.absolute_path else None
        if err.validator == "additionalProperties":
            # the offending key is named in the message, not the path
            last = err.message.split("'")[1] if "'" in err.message else last
            path = f"{path}.{last}" if path != "<root>" else last
        line = _locate(text, last) if last else None
        where = f"line {line}, field {path}" if line else f"field {path}"
        raise ConfigError(f"{source}: {where}: {err.message}")
    data = copy.deepcopy(DEFAULTS)
    for block, val in raw.items():
        if isinstance(val, dict):
            data[block].update(val)
        else:
            data[block] = val
    pb = data["profile"]["b"]
    eb = data["exponents"].setdefault("b", pb)
    if eb != pb:
        line = _locate(text, "b")
        where = f"line {line}, field exponents.b" if line else "field exponents.b"
        raise ConfigError(f"{source}: {where}: exponent b = {eb} differs from profile b = {pb}")
    if data["stepper"]["tau_min"] >= data["stepper"]["tau0"]:
        raise ConfigError(f"{source}: field stepper.tau_min: must be smaller than stepper.tau0")
    return RunConfig(data, source)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err.strerror})") from None
    return parse_config(text, str(path))


def default_config() -> RunConfig:
    d = copy.deepcopy(DEFAULTS)
    d["exponents"]["b"] = d["profile"]["b"]
    return RunConfig(d)
