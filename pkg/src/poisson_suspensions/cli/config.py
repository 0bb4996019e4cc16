"""Experiment configs: TOML files validated against a JSON schema.

Named regions, maps, observables and step functions are declared in their own
tables and referenced by name from the experiment-specific sections.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ..chaos import SimpleFunction
from ..dynamics import MapSpec, Step, axis_map_from_dict, AxisRule
from ..errors import ConfigError
from ..intensity import Box, Component, IntensityMeasure, RegionSet, profile_from_dict
from ..stats import Observable, observable_from_dict

SCHEMA_VERSION = 1
KINDS = ("sample", "equivariance", "ergodic", "mixing", "chaos", "cf", "maharam", "witness")

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_BOX = {"type": "object", "required": ["component", "lower", "upper"],
        "properties": {"component": {"type": "string"}, "lower": _VEC, "upper": _VEC}}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind", "name", "seed", "intensity"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": list(KINDS)},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "title": {"type": "string"},
        "anchor": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "replicas": {"type": "integer", "minimum": 1},
        "max_cell_mass": {"type": "number", "exclusiveMinimum": 0},
        "significance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "runtime_budget_s": {"type": "number", "exclusiveMinimum": 0},
        "window_budget": {"type": "number", "exclusiveMinimum": 0},
        "intensity": {
            "type": "object", "required": ["components"],
            "properties": {"components": {"type": "array", "minItems": 1, "items": {
                "type": "object", "required": ["label", "kind"],
                "properties": {
                    "label": {"type": "string", "minLength": 1},
                    "kind": {"enum": ["constant", "torus", "exponential", "profiles"]},
                    "dimension": {"type": "integer", "minimum": 1},
                    "density": {"type": "number", "exclusiveMinimum": 0},
                    "lower": _VEC, "upper": _VEC,
                    "profiles": {"type": "array", "items": {"type": "object"}},
                }}}},
        },
        "regions": {"type": "object", "additionalProperties": {
            "oneOf": [_BOX,
                      {"type": "object", "required": ["boxes"],
                       "properties": {"boxes": {"type": "array", "items": _BOX}}},
                      {"type": "object", "required": ["union"],
                       "properties": {"union": {"type": "array", "items": {"type": "string"}}}}]}},
        "maps": {"type": "object", "additionalProperties": {
            "oneOf": [{"type": "object", "required": ["rules"]},
                      {"type": "object", "required": ["steps"]},
                      {"type": "object", "required": ["word"]}]}},
        "observables": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["kind"]}},
        "functions": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["terms"],
            "properties": {"terms": {"type": "array", "items": {
                "type": "object", "required": ["coeff", "region"],
                "properties": {"coeff": _NUM, "region": {"type": "string"}}}}}}},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"enum": ["sample"]}}},
         "then": {"required": ["replicas", "tests"]}},
        {"if": {"properties": {"kind": {"const": "equivariance"}}},
         "then": {"required": ["replicas", "pairs"]}},
        {"if": {"properties": {"kind": {"const": "ergodic"}}},
         "then": {"required": ["replicas", "ergodic"]}},
        {"if": {"properties": {"kind": {"const": "mixing"}}},
         "then": {"required": ["replicas", "cases"]}},
        {"if": {"properties": {"kind": {"const": "chaos"}}},
         "then": {"required": ["replicas", "pairs"]}},
        {"if": {"properties": {"kind": {"const": "cf"}}},
         "then": {"required": ["replicas", "cf"]}},
        {"if": {"properties": {"kind": {"const": "maharam"}}},
         "then": {"required": ["checks"]}},
        {"if": {"properties": {"kind": {"const": "witness"}}},
         "then": {"anyOf": [{"required": ["cubes"]}, {"required": ["searches"]}]}},
    ],
}


@dataclass
class ExperimentConfig:
    raw: dict
    path: Path | None
    mu: IntensityMeasure
    regions: dict[str, RegionSet] = field(default_factory=dict)
    maps: dict[str, MapSpec] = field(default_factory=dict)
    observables: dict[str, Observable] = field(default_factory=dict)
    functions: dict[str, SimpleFunction] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def replicas(self) -> int:
        return int(self.raw.get("replicas", 1))

    @property
    def significance(self) -> float:
        return float(self.raw.get("significance", 1e-3))

    @property
    def max_cell_mass(self) -> float:
        return float(self.raw.get("max_cell_mass", 1.0))

    @property
    def runtime_budget_s(self) -> float:
        return float(self.raw.get("runtime_budget_s", 600.0))

    @property
    def window_budget(self) -> float:
        return float(self.raw.get("window_budget", 1e4))

    def region(self, name: str) -> RegionSet:
        try:
            return self.regions[name]
        except KeyError:
            raise ConfigError(f"unknown region {name!r}") from None

    def map(self, name: str) -> MapSpec:
        try:
            return self.maps[name]
        except KeyError:
            raise ConfigError(f"unknown map {name!r}") from None

    def observable(self, name: str) -> Observable:
        try:
            return self.observables[name]
        except KeyError:
            raise ConfigError(f"unknown observable {name!r}") from None

    def function(self, name: str) -> SimpleFunction:
        try:
            return self.functions[name]
        except KeyError:
            raise ConfigError(f"unknown function {name!r}") from None


def _component(d: dict) -> Component:
    kind, label = d["kind"], d["label"]
    dim = int(d.get("dimension", 1))
    density = float(d.get("density", 1.0))
    if kind == "constant":
        support = (d["lower"], d["upper"]) if "lower" in d else None
        return Component.constant(label, dim, density, support)
    if kind == "torus":
        return Component(label, Component.torus(label, dim).profiles, density)
    if kind == "exponential":
        return Component.exponential(label, dim, density)
    return Component(label, tuple(profile_from_dict(p) for p in d["profiles"]), density)


def _box(d: dict) -> Box:
    return Box(d["component"], tuple(float(v) for v in d["lower"]), tuple(float(v) for v in d["upper"]))


def _rules(entries: list) -> Step:
    return Step(tuple((e["component"],
                       AxisRule(tuple(axis_map_from_dict(a) for a in e["axes"]), e.get("target")))
                      for e in entries))


def _map(d: dict, known: dict[str, MapSpec]) -> MapSpec:
    if "rules" in d:
        return MapSpec((_rules(d["rules"]),))
    if "steps" in d:
        return MapSpec(tuple(_rules(s["rules"]) for s in d["steps"]))
    out = MapSpec.identity()
    for name, e in reversed(d["word"]):
        if name not in known:
            raise ConfigError(f"map word refers to unknown map {name!r}")
        if e not in (1, -1):
            raise ConfigError("word exponents must be +1 or -1")
        m = known[name] if e == 1 else known[name].inverse()
        out = m.compose(out)
    return out


def _resolve_observable(d: dict, cfg: ExperimentConfig) -> dict:
    d = dict(d)
    if d["kind"] == "affine":
        d["terms"] = [{"weight": t["weight"], "observable": cfg.observable(t["observable"]).to_dict()}
                      for t in d["terms"]]
    elif "region" in d:
        d["region"] = cfg.region(d["region"]).to_dict()
    return d


def build(raw: dict, path: Path | None = None) -> ExperimentConfig:
    """Validate ``raw`` and resolve every named object it declares."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}") from None
    try:
        mu = IntensityMeasure(tuple(_component(c) for c in raw["intensity"]["components"]))
        cfg = ExperimentConfig(raw, path, mu)
        for name, d in raw.get("regions", {}).items():
            if "union" in d:
                r = RegionSet.empty()
                for part in d["union"]:
                    r = r.union(cfg.region(part))
            elif "boxes" in d:
                r = RegionSet(_box(b) for b in d["boxes"])
            else:
                r = RegionSet((_box(d),))
            for b in r.boxes:
                mu.check_box(b)
            cfg.regions[name] = r
        for name, d in raw.get("maps", {}).items():
            m = _map(d, cfg.maps)
            for st in m.steps:
                for lab, _ in st.rules:
                    mu.component(lab)
                    mu.component(st.target(lab))
            cfg.maps[name] = m
        for name, d in raw.get("observables", {}).items():
            cfg.observables[name] = observable_from_dict(_resolve_observable(d, cfg))
        for name, d in raw.get("functions", {}).items():
            cfg.functions[name] = SimpleFunction(tuple((float(t["coeff"]), cfg.region(t["region"]))
                                                       for t in d["terms"]))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"invalid config: {e}") from e
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return build(raw, path)
