"""Scenario files: JSON schema, validation and conversion to w units."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from .scene import CrosstalkSpec, DarkCountSpec, SceneConfig

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_range = {
    "type": "object",
    "properties": {"from": _nonneg, "to": _nonneg, "points": {"type": "integer", "minimum": 1}},
    "required": ["from", "to", "points"],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "demuxest scenario",
    "type": "object",
    "properties": {
        "psf": {
            "type": "object",
            "properties": {"w": _pos},
            "required": ["w"],
            "additionalProperties": False,
        },
        "sources": {
            "type": "object",
            "properties": {
                "N": _nonneg,
                "kappa": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "theta": _num,
                "d": _nonneg,
                "d_scan": _range,
                "d_values": {"type": "array", "items": _nonneg, "minItems": 1},
            },
            "required": ["N"],
            "additionalProperties": False,
        },
        "measurement": {
            "type": "object",
            "properties": {
                "basis": {"enum": ["hg", "pixels"]},
                "Q": {"type": "integer", "minimum": 0, "maximum": 60},
                "pitch": _pos,
                "extent": _pos,
                "direct_imaging": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {
                "misalignment": {
                    "type": "object",
                    "properties": {"d_s": _nonneg, "theta_s": _num},
                    "required": ["d_s"],
                    "additionalProperties": False,
                },
                "crosstalk": {
                    "type": "object",
                    "properties": {
                        "mean_power": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "seed": {"type": "integer", "minimum": 0},
                        "ensemble": {"type": "integer", "minimum": 1},
                    },
                    "required": ["mean_power"],
                    "additionalProperties": False,
                },
                "dark": {
                    "type": "object",
                    "properties": {
                        "sigma": {"oneOf": [_nonneg, {"type": "array", "items": _nonneg, "minItems": 1}]},
                    },
                    "required": ["sigma"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "montecarlo": {
            "type": "object",
            "properties": {
                "mu": {"type": "integer", "minimum": 1},
                "repetitions": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "m_from_d": _nonneg,
            },
            "required": ["mu", "repetitions"],
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "variable": {"enum": ["d_s", "mean_power", "sigma"]},
                "values": {"type": "array", "items": _nonneg, "minItems": 1},
                "brightness": {"type": "array", "items": _pos, "minItems": 1},
                "window": {
                    "type": "object",
                    "properties": {"from": _pos, "to": _pos, "points": {"type": "integer", "minimum": 2}},
                    "required": ["from", "to"],
                    "additionalProperties": False,
                },
            },
            "required": ["variable", "values"],
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"path": {"type": "string"}, "format": {"enum": ["csv", "json"]}},
            "additionalProperties": False,
        },
    },
    "required": ["psf", "sources"],
    "additionalProperties": False,
}


class ScenarioError(ValueError):
    """Scenario failed validation; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


def _path(parts) -> str:
    return "/".join(str(p) for p in parts)


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(e.message, _path(e.absolute_path))
    src = doc["sources"]
    given = [k for k in ("d", "d_scan", "d_values") if k in src]
    if len(given) > 1:
        raise ScenarioError("give only one of d, d_scan, d_values", "sources")
    scan = src.get("d_scan")
    if scan is not None and scan["to"] < scan["from"]:
        raise ScenarioError("d_scan 'to' must be >= 'from'", "sources/d_scan")
    sigma = doc.get("noise", {}).get("dark", {}).get("sigma")
    if isinstance(sigma, list):
        K = (doc.get("measurement", {}).get("Q", 2) + 1) ** 2
        if len(sigma) != K:
            raise ScenarioError(f"per-mode sigma needs {K} entries, got {len(sigma)}", "noise/dark/sigma")
    meas = doc.get("measurement", {})
    power = doc.get("noise", {}).get("crosstalk", {}).get("mean_power", 0)
    if meas.get("basis", "hg") == "hg" and power > 0 and power >= 1.0 / (meas.get("Q", 2) + 1) ** 2:
        raise ScenarioError(f"crosstalk power {power} must be < 1/K", "noise/crosstalk/mean_power")
    if meas.get("basis") == "pixels" and power > 0:
        raise ScenarioError("crosstalk is only defined for the hg basis", "noise/crosstalk")
    if meas.get("basis") == "pixels" and meas.get("pitch", 0.125 * doc["psf"]["w"]) > doc["psf"]["w"] / 8 * (1 + 1e-12):
        raise ScenarioError("pixel pitch must be <= w/8", "measurement/pitch")


@dataclass
class Scenario:
    """Validated scenario with every length converted to units of ``w``."""

    doc: dict
    w: float
    base: SceneConfig
    d_grid: np.ndarray
    basis: str
    pitch: float
    extent: float | None
    direct_imaging: bool

    @property
    def sha256(self) -> str:
        blob = json.dumps(self.doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def montecarlo(self) -> dict | None:
        return self.doc.get("montecarlo")

    @property
    def sweep(self) -> dict | None:
        return self.doc.get("sweep")

    @property
    def output(self) -> dict:
        return self.doc.get("output", {})

    def seeds(self) -> dict:
        out = {}
        xt = self.doc.get("noise", {}).get("crosstalk")
        if xt is not None:
            out["crosstalk"] = xt.get("seed", 0)
        if self.montecarlo is not None:
            out["montecarlo"] = self.montecarlo.get("seed", 0)
        return out


def from_dict(doc: dict, seed: int | None = None) -> Scenario:
    """Validate ``doc`` and build the base :class:`SceneConfig`.

    ``seed`` overrides every seed in the document (crosstalk and Monte Carlo).
    """
    doc = copy.deepcopy(doc)
    validate(doc)
    if seed is not None:
        if "crosstalk" in doc.get("noise", {}):
            doc["noise"]["crosstalk"]["seed"] = seed
        if "montecarlo" in doc:
            doc["montecarlo"]["seed"] = seed
    w = float(doc["psf"]["w"])
    src = doc["sources"]
    meas = doc.get("measurement", {})
    noise = doc.get("noise", {})

    if "d_scan" in src:
        s = src["d_scan"]
        d_grid = np.linspace(s["from"], s["to"], s["points"]) / w
    elif "d_values" in src:
        d_grid = np.asarray(src["d_values"], dtype=float) / w
    else:
        d_grid = np.array([src.get("d", 0.0)], dtype=float) / w

    mis = noise.get("misalignment", {})
    xt = noise.get("crosstalk")
    dark = noise.get("dark")
    crosstalk = None
    if xt is not None and xt["mean_power"] > 0:
        crosstalk = CrosstalkSpec(xt["mean_power"], xt.get("seed", 0), xt.get("ensemble", 500))
    dark_spec = None
    if dark is not None:
        sig = dark["sigma"]
        dark_spec = DarkCountSpec(tuple(sig) if isinstance(sig, list) else float(sig))
    base = SceneConfig(
        d=float(d_grid[0]),
        theta=float(src.get("theta", math.pi / 4)),
        N=float(src["N"]),
        kappa=float(src.get("kappa", 1.0)),
        Q=int(meas.get("Q", 2)),
        d_s=float(mis.get("d_s", 0.0)) / w,
        theta_s=float(mis.get("theta_s", 0.0)),
        crosstalk=crosstalk,
        dark=dark_spec,
    )
    pitch = float(meas.get("pitch", w / 8)) / w
    extent = meas.get("extent")
    return Scenario(
        doc=doc,
        w=w,
        base=base,
        d_grid=d_grid,
        basis=meas.get("basis", "hg"),
        pitch=pitch,
        extent=None if extent is None else float(extent) / w,
        direct_imaging=bool(meas.get("direct_imaging", False)),
    )


def load(path, seed: int | None = None) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc
    return from_dict(doc, seed=seed)
