"""Run-configuration schemas. Energies are in units of U, times in hbar/U."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

JOB_KINDS = ("echo-curve", "sequence", "scan-critical", "spectrum", "predict")


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

LATTICE = {
    "type": "object",
    "properties": {"n_sites": _posint, "n_bosons": {"type": "integer", "minimum": 0}},
    "required": ["n_sites", "n_bosons"],
    "additionalProperties": False,
}

INITIAL = {
    "oneOf": [
        {"enum": ["mott", "ground"]},
        {
            "type": "object",
            "properties": {"fock": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
            "required": ["fock"],
            "additionalProperties": False,
        },
    ]
}

TIME_GRID = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"t_max": _pos, "n_points": {"type": "integer", "minimum": 2}},
            "required": ["t_max"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "auto": {"const": True},
                "n_points": {"type": "integer", "minimum": 2},
                "target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "t_cap": _pos,
            },
            "required": ["auto"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"log": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                           "n_points": {"type": "integer", "minimum": 2}},
            "required": ["log"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}},
            "required": ["times"],
            "additionalProperties": False,
        },
    ]
}

TOLERANCES = {
    "type": "object",
    "properties": {
        "krylov_dim": {"type": "integer", "minimum": 2},
        "step_tolerance": _pos,
        "max_substeps": _posint,
        "eig_tol": _pos,
    },
    "additionalProperties": False,
}

FIT = {
    "type": "object",
    "properties": {
        "model": {"enum": ["gaussian", "quartic"]},
        "window": {"oneOf": [{"const": "shoulder"},
                             {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2}]},
        "f_floor": {"type": "number", "minimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}

_common = {
    "job": {"enum": list(JOB_KINDS)},
    "seed": {"type": "integer"},
    "tolerances": TOLERANCES,
    "threads": _posint,
    "output_dir": {"type": "string", "minLength": 1},
}

SCHEMAS = {
    "echo-curve": {
        "type": "object",
        "properties": {
            **_common,
            "lattice": LATTICE,
            "J": _num,
            "U": _num,
            "initial": INITIAL,
            "scenarios": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["ideal", "delta_j_symmetric", "delta_j_oneleg", "delta_u", "gravity"]},
                        "magnitude": _num,
                        "label": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
            },
            "time_grid": TIME_GRID,
            "fit": FIT,
        },
        "required": ["lattice", "J", "U", "scenarios", "time_grid"],
        "additionalProperties": False,
    },
    "sequence": {
        "type": "object",
        "properties": {
            **_common,
            "lattice": LATTICE,
            "initial": INITIAL,
            "sequence": {
                "type": "object",
                "properties": {
                    "J": _num,
                    "U": _num,
                    "F_background": _num,
                    "imprint": {"enum": ["ideal", "pulsed"]},
                    "phase_error": _num,
                    "delta_u": _num,
                    "F_pulse": _num,
                    "tau": _pos,
                    "pulse_includes_lattice": {"type": "boolean"},
                    "closing_imprint": {"type": "boolean"},
                    "mass": _pos,
                    "spacing": _pos,
                    "tau_physical": _pos,
                },
                "additionalProperties": False,
            },
            "time_grid": TIME_GRID,
        },
        "required": ["lattice", "sequence", "time_grid"],
        "additionalProperties": False,
    },
    "scan-critical": {
        "type": "object",
        "properties": {
            **_common,
            "sizes": {"type": "array", "items": _posint, "minItems": 1},
            "delta_j": _pos,
            "U": _num,
            "J_grid": {
                "type": "object",
                "properties": {"start": {"type": "number", "minimum": 0}, "stop": _num, "step": _pos},
                "required": ["start", "stop", "step"],
                "additionalProperties": False,
            },
            "t_max": _pos,
            "n_times": {"type": "integer", "minimum": 8},
            "f_floor": {"type": "number", "minimum": 0, "maximum": 1},
            "gap": {"type": "boolean"},
        },
        "required": ["sizes", "delta_j", "J_grid"],
        "additionalProperties": False,
    },
    "spectrum": {
        "type": "object",
        "properties": {
            **_common,
            "lattice": LATTICE,
            "J": _num,
            "U": _num,
            "F": _num,
            "k": {"oneOf": [_posint, {"const": "all"}]},
            "method": {"enum": ["auto", "dense", "lanczos"]},
        },
        "required": ["lattice", "J", "U"],
        "additionalProperties": False,
    },
    "predict": {
        "type": "object",
        "properties": {
            **_common,
            "kind": {"enum": ["delta_u", "delta_j", "gravity", "gaussian"]},
            "J": _num,
            "U": _num,
            "magnitude": _num,
            "beta": _num,
            "time_grid": TIME_GRID,
        },
        "required": ["kind", "magnitude", "time_grid"],
        "additionalProperties": False,
    },
}


def validate(job: str, config: dict) -> dict:
    if job not in SCHEMAS:
        raise ConfigError(f"unknown job kind {job!r}")
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(config, SCHEMAS[job])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    if config.get("job", job) != job:
        raise ConfigError(f"config declares job {config['job']!r} but subcommand is {job!r}")
    if "lattice" in config:
        lat = config["lattice"]
        init = config.get("initial", "mott")
        if init == "mott" and lat["n_bosons"] != lat["n_sites"]:
            raise ConfigError("initial state 'mott' needs n_bosons == n_sites")
        if isinstance(init, dict):
            occ = init["fock"]
            if len(occ) != lat["n_sites"] or sum(occ) != lat["n_bosons"]:
                raise ConfigError("initial fock occupations do not match the lattice")
    if job == "sequence":
        from .echo import SequenceSpec

        try:
            SequenceSpec(**config["sequence"])
        except ValueError as exc:
            raise ConfigError(f"sequence: {exc}") from None
    if job == "scan-critical":
        g = config["J_grid"]
        if g["stop"] <= g["start"] + g["step"]:
            raise ConfigError("J_grid needs at least three points")
    return config


def load(path, job: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return validate(job, config)
