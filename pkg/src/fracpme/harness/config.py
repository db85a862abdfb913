"""Experiment configuration: YAML files validated against ``schema.json``."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from ..errors import FracPMEError
from ..geometry import EvolvingGeometry, snapshot_at
from ..manifold import CIRCLE, ManifoldSnapshot, SpectralField, constant, random_field, sup_norm
from ..nonlinearity import PowerLaw, arctan_example, make_regularized
from ..solver import Cylinder, ExplicitRK, ImplicitEuler

VERBS = {
    "verify": ("verify-extension", "verify-norms"),
    "solve": ("solve",),
    "sweep": ("sweep-R", "sweep-k", "sweep-dt", "sweep-N"),
    "compare": ("exact-compare",),
}


class ConfigError(FracPMEError, ValueError):
    """Invalid experiment configuration; carries the offending field and line."""

    def __init__(self, message, *, field_path=None, line=None, source=None):
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field_path:
            where.append(f"field '{field_path}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.field_path = field_path
        self.line = line


def schema() -> dict:
    text = resources.files(__package__).joinpath("schema.json").read_text()
    return json.loads(text)


def _node_line(root, path) -> int | None:
    """1-based line of the YAML node at ``path``; nearest ancestor if missing."""
    node = root
    line = None if node is None else node.start_mark.line + 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
        if node is None:
            break
    return line


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    kind: str
    seed: int = 0
    geometries: tuple = ()
    nonlinearities: tuple = ()
    solver: dict = field(default_factory=dict)
    data: dict | None = None
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    source: str | None = None

    @property
    def geometry(self) -> dict:
        return self.geometries[0] if self.geometries else {}

    @property
    def nonlinearity(self) -> dict:
        return self.nonlinearities[0] if self.nonlinearities else {"kind": "power", "m": 1}

    def tol(self, name: str, default: float | None = None) -> float:
        if name in self.tolerances:
            return float(self.tolerances[name])
        if default is None:
            raise ConfigError(f"missing tolerance {name!r}", field_path=f"tolerances.{name}", source=self.source)
        return default


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {exc}", line=mark.line + 1 if mark else None, source=source) from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", line=1, source=source)
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            # point at the first unexpected key rather than its parent mapping
            known = set(err.schema.get("properties", {}))
            extra = [k for k in err.instance if k not in known]
            if extra:
                path.append(extra[0])
        raise ConfigError(
            err.message, field_path=".".join(map(str, path)) or "<root>",
            line=_node_line(root, path), source=source,
        )
    for single, plural in (("geometry", "geometries"), ("nonlinearity", "nonlinearities")):
        if single in raw and plural in raw:
            raise ConfigError(
                f"give either '{single}' or '{plural}', not both",
                field_path=plural, line=_node_line(root, [plural]), source=source,
            )
    geos = tuple(raw.get("geometries") or ([raw["geometry"]] if "geometry" in raw else []))
    nls = tuple(raw.get("nonlinearities") or ([raw["nonlinearity"]] if "nonlinearity" in raw else []))
    cfg = ExperimentConfig(
        id=raw["id"], kind=raw["kind"], seed=int(raw.get("seed", 0)),
        geometries=geos, nonlinearities=nls, solver=dict(raw.get("solver", {})),
        data=raw.get("data"), params=dict(raw.get("params", {})),
        tolerances=dict(raw.get("tolerances", {})), output=raw.get("output"), source=source,
    )
    # constructors own the semantic checks; surface their errors with a location
    for i, g in enumerate(geos):
        key = ["geometries", i] if "geometries" in raw else ["geometry"]
        try:
            build_geometry(g)
        except (ValueError, FracPMEError) as exc:
            raise ConfigError(str(exc), field_path=".".join(map(str, key)), line=_node_line(root, key), source=source) from exc
    for i, n in enumerate(nls):
        key = ["nonlinearities", i] if "nonlinearities" in raw else ["nonlinearity"]
        if n["kind"] == "power":
            try:
                PowerLaw(n.get("m", 1.0))
            except (ValueError, FracPMEError) as exc:
                raise ConfigError(str(exc), field_path=".".join(map(str, key)), line=_node_line(root, key), source=source) from exc
    try:
        build_stepper(cfg.solver)
        build_cylinder(cfg.solver)
    except (ValueError, FracPMEError) as exc:
        raise ConfigError(str(exc), field_path="solver", line=_node_line(root, ["solver"]), source=source) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from exc
    return parse_config(text, source=str(path))


def build_geometry(g: dict, **override) -> EvolvingGeometry:
    g = {**g, **override}
    return EvolvingGeometry(
        family=g["family"], r0=float(g.get("r0", 1.0)), horizon=float(g.get("horizon", 1.0)),
        mode_count=int(g.get("modes", 16)), law=g.get("law", "constant"),
        amplitude=float(g.get("amplitude", 0.0)), omega=float(g.get("omega", 0.0)),
    )


def build_stepper(s: dict):
    if s.get("stepper", "implicit-euler") == "explicit-rk":
        return ExplicitRK(rtol=float(s.get("rtol", 1e-10)), atol=float(s.get("atol", 1e-12)))
    return ImplicitEuler(
        newton_tol=float(s.get("newton_tol", 1e-10)), max_iter=int(s.get("max_iter", 30)),
        transport=s.get("transport", "exact"),
    )


def build_cylinder(s: dict) -> Cylinder:
    kind = s.get("cylinder", "full")
    return Cylinder(kind, s.get("R")) if kind == "truncated" else Cylinder()


def build_nonlinearity(n: dict, A: float | None = None):
    kind = n["kind"]
    if kind == "power":
        return PowerLaw(float(n.get("m", 1.0)))
    A = float(n.get("A", A if A is not None else 1.0))
    if kind == "regularized":
        return make_regularized(float(n.get("m", 1.0)), float(n["k"]), A)
    return arctan_example(A)


def trig_field(snapshot: ManifoldSnapshot, spec: dict) -> SpectralField:
    """Field from physical amplitudes: ``c + sum a_k cos k + b_k sin k`` or ``sum a_l P_l``."""
    c = np.array(constant(snapshot, float(spec.get("constant", 0.0))).coeffs)
    r, n = snapshot.radius, snapshot.mode_count
    if snapshot.family == CIRCLE:
        for key, slot in (("cos", 1), ("sin", 2)):
            for k, a in (spec.get(key) or {}).items():
                k = int(k)
                if not 1 <= k <= n:
                    raise ConfigError(f"frequency {k} outside 1..{n}", field_path=f"data.{key}.{k}")
                c[2 * k - 2 + slot] += float(a) * math.sqrt(math.pi * r)
    else:
        for l, a in (spec.get("legendre") or {}).items():
            l = int(l)
            if not 0 <= l <= n:
                raise ConfigError(f"degree {l} outside 0..{n}", field_path=f"data.legendre.{l}")
            c[l] += float(a) * math.sqrt(4.0 * math.pi * r * r / (2 * l + 1))
    return SpectralField(snapshot, c)


def scaled_random(snapshot: ManifoldSnapshot, rng: np.random.Generator, spec: dict) -> SpectralField:
    """``offset + amplitude * f / max|f|`` for a seeded mean-zero trigonometric ``f``."""
    f = random_field(
        snapshot, rng, bandwidth=int(spec.get("bandwidth", 4)),
        decay=float(spec.get("decay", 0.6)), mean_zero=True,
    )
    f = f * (float(spec.get("amplitude", 0.4)) / sup_norm(f))
    return f + constant(snapshot, float(spec.get("offset", 1.0)))


def initial_data(geo: EvolvingGeometry, spec: dict | None, rng: np.random.Generator) -> SpectralField:
    s0 = snapshot_at(geo, 0.0)
    if spec is None:
        return constant(s0, 1.0)
    if spec["type"] == "trig":
        return trig_field(s0, spec)
    return scaled_random(s0, rng, spec)
