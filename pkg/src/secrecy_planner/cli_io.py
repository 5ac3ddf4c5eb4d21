"""Scenario files, CSV emission and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import jsonschema
import numpy as np

from .errors import ParseError
from .geometry import AntennaArray, NodeSpec, RadioParams, Scenario, validate_scenario

__all__ = [
    "SCENARIO_SCHEMA",
    "LoadedScenario",
    "load_scenario",
    "load_scenario_bundle",
    "bundled_scenario_path",
    "format_float",
    "write_csv",
    "write_manifest",
    "file_digest",
]

TOOL_VERSION = "0.1.0"

_position = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_array = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["circular", "linear"]},
        "radius_m": {"type": "number"},
        "spacing_m": {"type": "number"},
        "azimuth_rad": {"type": "number"},
        "normal": _position,
    },
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["uav", "radio", "nodes"],
    "properties": {
        "description": {"type": "string"},
        "uav": {
            "type": "object",
            "additionalProperties": False,
            "required": ["start", "K", "array", "d_max", "d_delta"],
            "properties": {
                "start": _position,
                "K": {"type": "integer", "minimum": 1},
                "array": _array,
                "d_max": {"type": "number"},
                "d_delta": {"type": "number"},
                "altitude_fixed": {"type": "boolean"},
                "min_altitude": {"type": "number"},
            },
        },
        "radio": {
            "type": "object",
            "additionalProperties": False,
            "required": ["c_p", "alpha", "noise_nu", "p_max", "wavelength_m"],
            "properties": {
                "c_p": {"type": "number"},
                "alpha": {"type": "number"},
                "noise_nu": {"type": "number"},
                "p_max": {"type": "number"},
                "wavelength_m": {"type": "number"},
                "phase_model": {"enum": ["linear_distance", "sqrt_distance"]},
            },
        },
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["role", "position", "N", "kappa", "array"],
                "properties": {
                    "role": {"enum": ["destination", "eavesdropper"]},
                    "position": _position,
                    "N": {"type": "integer", "minimum": 1},
                    "kappa": {"type": "number"},
                    "array": _array,
                },
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps1": {"type": "number"},
                "eps2": {"type": "number"},
                "max_outer_iters": {"type": "integer"},
                "max_inner_iters": {"type": "integer"},
                "subgradient_iters": {"type": "integer"},
                "step_a": {"type": "number"},
                "step_b": {"type": "number"},
                "psi_floor": {"type": "number"},
                "d_delta": {"type": "number"},
                "strict_paper_gradients": {"type": "boolean"},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


@dataclass(frozen=True)
class LoadedScenario:
    scenario: Scenario
    optimizer: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    digest: str = ""
    path: Optional[str] = None


def _array_from(obj: dict, count: int) -> AntennaArray:
    return AntennaArray(
        kind=obj["kind"],
        element_count=count,
        radius_m=obj.get("radius_m"),
        spacing_m=obj.get("spacing_m"),
        azimuth_rad=float(obj.get("azimuth_rad", 0.0)),
        normal=tuple(obj.get("normal", (0.0, 0.0, 1.0))),
    )


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def scenario_from_dict(raw: dict, text: str = "") -> Scenario:
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path)
        if exc.validator == "required":
            missing = exc.message.split("'")[1] if "'" in exc.message else path
            fieldname = f"{path}.{missing}" if path else missing
        elif exc.validator == "additionalProperties":
            extra = exc.message.split("'")[1] if "'" in exc.message else path
            fieldname = f"{path}.{extra}" if path else extra
        else:
            fieldname = path or "<root>"
        raise ParseError(exc.message, field=fieldname, line=_line_of(text, fieldname.split(".")[-1])) from None
    uav = raw["uav"]
    radio = raw["radio"]
    nodes = tuple(
        NodeSpec(
            role=n["role"],
            position=np.asarray(n["position"], dtype=float),
            antennas=_array_from(n["array"], n["N"]),
            rician_kappa=float(n["kappa"]),
        )
        for n in raw["nodes"]
    )
    sc = Scenario(
        uav_start=np.asarray(uav["start"], dtype=float),
        uav_array=_array_from(uav["array"], uav["K"]),
        d_max=float(uav["d_max"]),
        d_delta=float(uav["d_delta"]),
        altitude_fixed=bool(uav.get("altitude_fixed", False)),
        nodes=nodes,
        radio=RadioParams(
            c_p=float(radio["c_p"]),
            alpha=float(radio["alpha"]),
            noise_nu=float(radio["noise_nu"]),
            p_max=float(radio["p_max"]),
            wavelength_m=float(radio["wavelength_m"]),
            phase_model=radio.get("phase_model", "linear_distance"),
        ),
        min_altitude=uav.get("min_altitude"),
    )
    return validate_scenario(sc)


def load_scenario_bundle(path) -> LoadedScenario:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read scenario file: {exc.strerror}", field=str(path)) from None
    text = data.decode("utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(raw, dict):
        raise ParseError("scenario must be a JSON object", line=1)
    sc = scenario_from_dict(raw, text)
    return LoadedScenario(sc, dict(raw.get("optimizer", {})), dict(raw.get("mc", {})), raw,
                          hashlib.sha256(data).hexdigest(), str(path))


def load_scenario(path) -> Scenario:
    return load_scenario_bundle(path).scenario


def bundled_scenario_path(name: str) -> Path:
    fname = name if name.endswith(".json") else f"{name}.json"
    return Path(str(resources.files("secrecy_planner") / "data" / fname))


def with_uav_elements(raw: dict, K: int) -> dict:
    """Copy of a raw scenario dict with the UAV antenna count replaced."""
    out = json.loads(json.dumps(raw))
    out["uav"]["K"] = int(K)
    return out


def format_float(x) -> str:
    return format(float(x), ".17g")


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    text = csv_text(header, rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, scenario_digest: str, config: dict, seed=None) -> dict:
    manifest = {
        "command": command,
        "scenario_digest": scenario_digest,
        "config": config,
        "tool_version": TOOL_VERSION,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest
