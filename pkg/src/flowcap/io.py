"""JSON (de)serialization and validation for densities and flow stacks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import densities as dens
from .errors import ContractViolation, FlowcapError
from .flows import FLOW_SCHEMA, FlowStack, Householder, Planar, Radial, Sylvester

DIST_SCHEMA = dens.DIST_SCHEMA

_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_activation = {"type": "string", "enum": ["relu", "tanh", "sigmoid", "arctan"]}

FLOW_JSON_SCHEMA = {
    "type": "object",
    "required": ["layers"],
    "properties": {
        "schema": {"type": "string"},
        "layers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["variant"],
                "properties": {"variant": {"enum": ["planar", "sylvester", "radial", "householder"]}},
                "allOf": [
                    {
                        "if": {"properties": {"variant": {"const": "planar"}}},
                        "then": {
                            "required": ["u", "w"],
                            "properties": {"u": _vector, "w": _vector, "b": {"type": "number"}, "h": _activation},
                        },
                    },
                    {
                        "if": {"properties": {"variant": {"const": "sylvester"}}},
                        "then": {
                            "required": ["A", "B", "b"],
                            "properties": {"A": _matrix, "B": _matrix, "b": _vector, "h": _activation},
                        },
                    },
                    {
                        "if": {"properties": {"variant": {"const": "radial"}}},
                        "then": {
                            "required": ["a", "b", "z0"],
                            "properties": {
                                "a": {"type": "number", "exclusiveMinimum": 0},
                                "b": {"type": "number"},
                                "z0": _vector,
                            },
                        },
                    },
                    {
                        "if": {"properties": {"variant": {"const": "householder"}}},
                        "then": {"required": ["v"], "properties": {"v": _vector}},
                    },
                ],
            },
        },
    },
}

_DIST_KINDS = {
    "gaussian1d": {"required": ["mu", "sigma"], "properties": {"mu": {"type": "number"}, "sigma": {"type": "number", "exclusiveMinimum": 0}}},
    "gaussian": {"required": ["mean", "cov"], "properties": {"mean": _vector, "cov": _matrix}},
    "mixture": {"required": ["weights", "components"], "properties": {"weights": _vector, "components": {"type": "array", "minItems": 1}}},
    "piecewise_gaussian": {
        "required": ["breakpoints", "mus", "sigmas"],
        "properties": {"breakpoints": {"type": "array"}, "mus": _vector, "sigmas": _vector},
    },
    "piecewise_constant": {"required": ["breakpoints", "values"], "properties": {"breakpoints": _vector, "values": _vector}},
    "twin_bump": {},
    "relaxed": {"required": ["base", "eps"], "properties": {"base": {"type": "object"}, "eps": {"type": "number"}}},
    "truncated": {"required": ["base", "lo", "hi"], "properties": {"base": {"type": "object"}, "lo": {"type": "number"}, "hi": {"type": "number"}}},
    "radial": {"required": ["d", "tau"], "properties": {"d": {"type": "integer", "minimum": 1}, "tau": {"type": "number"}, "variant": {"enum": ["pure", "flat_core"]}}},
    "student_t": {"required": ["loc", "scale", "df"], "properties": {"loc": _vector, "scale": _matrix, "df": {"type": "number"}}},
    "product_pow": {"required": ["g", "r", "d"], "properties": {"g": {"type": "object"}, "r": {"type": "number"}, "d": {"type": "integer"}}},
}

DIST_JSON_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {"schema": {"type": "string"}, "kind": {"enum": sorted(_DIST_KINDS)}},
    "allOf": [{"if": {"properties": {"kind": {"const": k}}}, "then": s} for k, s in _DIST_KINDS.items()],
}


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def layer_from_dict(obj: dict):
    variant = obj.get("variant")
    if variant == "planar":
        return Planar(obj["u"], obj["w"], obj.get("b", 0.0), obj.get("h", "relu"))
    if variant == "sylvester":
        return Sylvester(obj["A"], obj["B"], obj["b"], obj.get("h", "relu"))
    if variant == "radial":
        return Radial(obj["a"], obj["b"], obj["z0"])
    if variant == "householder":
        return Householder(obj["v"])
    raise ContractViolation(f"unknown flow variant {variant!r}")


def stack_from_dict(obj: dict) -> FlowStack:
    _check_version(obj, FLOW_SCHEMA)
    return FlowStack(tuple(layer_from_dict(layer) for layer in obj["layers"]))


def dist_from_dict(obj: dict) -> dens.Density:
    _check_version(obj, DIST_SCHEMA)
    kind = obj.get("kind")
    if kind == "gaussian1d":
        return dens.Gaussian1D(obj["mu"], obj["sigma"])
    if kind == "gaussian":
        return dens.GaussianD(obj["mean"], obj["cov"])
    if kind == "mixture":
        return dens.MixtureGaussianD(obj["weights"], tuple(dist_from_dict(c) for c in obj["components"]))
    if kind == "piecewise_gaussian":
        bp = np.array([float(x) for x in obj["breakpoints"]])
        return dens.PiecewiseGaussian1D(bp, obj["mus"], obj["sigmas"])
    if kind == "piecewise_constant":
        return dens.PiecewiseConstant1D(obj["breakpoints"], obj["values"])
    if kind == "twin_bump":
        return dens.twin_bump_target()
    if kind == "relaxed":
        return dens.full_support_relaxation(dist_from_dict(obj["base"]), obj["eps"])
    if kind == "truncated":
        return dens.Truncated1D(dist_from_dict(obj["base"]), obj["lo"], obj["hi"])
    if kind == "radial":
        return dens.RadialDensity(obj["d"], obj["tau"], obj.get("variant", "pure"))
    if kind == "student_t":
        return dens.StudentT(obj["loc"], obj["scale"], obj["df"])
    if kind == "product_pow":
        return dens.ProductDensity1DPow(dist_from_dict(obj["g"]), obj["r"], obj["d"])
    raise ContractViolation(f"unknown distribution kind {kind!r}")


def _check_version(obj, expected):
    found = obj.get("schema", expected)
    if found != expected:
        raise ContractViolation(f"schema version {found!r} does not match {expected!r}")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def load_stack(path) -> FlowStack:
    return stack_from_dict(_read_json(path))


def load_dist(path) -> dens.Density:
    return dist_from_dict(_read_json(path))


def load_matrix(path) -> np.ndarray:
    obj = _read_json(path)
    if isinstance(obj, dict):
        obj = obj.get("matrix", obj.get("A"))
    return np.atleast_2d(np.asarray(obj, dtype=float))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class Issue:
    path: str
    message: str
    category: str  # "schema", "version_mismatch", "invariant" or "io"


@dataclass
class FileReport:
    file: str
    kind: str
    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


@dataclass
class ValidationReport:
    files: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(f.ok for f in self.files)

    def to_dict(self):
        return {
            "ok": self.ok,
            "files": [
                {"file": f.file, "kind": f.kind, "ok": f.ok, "issues": [i.__dict__ for i in f.issues]}
                for f in self.files
            ],
        }


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "$"


def _schema_issues(obj, schema) -> list:
    validator = jsonschema.Draft202012Validator(schema)
    return [
        Issue(_json_path(err.absolute_path), err.message, "schema")
        for err in sorted(validator.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))
    ]


def _layer_invariants(i, layer) -> list:
    where = f"layers[{i}]"
    issues = []
    variant = layer["variant"]
    if variant == "householder":
        norm = float(np.linalg.norm(layer["v"]))
        if abs(norm - 1.0) > 1e-12:
            issues.append(Issue(f"{where}.v", f"reflection vector has norm {norm:.12g}, expected 1", "invariant"))
    elif variant == "planar" and len(layer["u"]) != len(layer["w"]):
        issues.append(Issue(f"{where}.w", "u and w lengths differ", "invariant"))
    elif variant == "radial" and not 1.0 + layer["b"] / layer["a"] > 0:
        issues.append(Issue(f"{where}.b", "radial flow needs 1 + b/a > 0", "invariant"))
    if not issues:
        try:
            layer_from_dict(layer)
        except FlowcapError as exc:
            issues.append(Issue(where, str(exc), "invariant"))
    return issues


def validate_object(obj, kind: str | None = None) -> FileReport:
    if kind is None:
        tag = obj.get("schema", "") if isinstance(obj, dict) else ""
        kind = "flow" if (tag.startswith("flowcap-flow") or (isinstance(obj, dict) and "layers" in obj)) else "dist"
    report = FileReport("<object>", kind)
    expected = FLOW_SCHEMA if kind == "flow" else DIST_SCHEMA
    if isinstance(obj, dict) and "schema" in obj and obj["schema"] != expected:
        report.issues.append(
            Issue("schema", f"schema version {obj['schema']!r} does not match {expected!r}", "version_mismatch")
        )
        return report
    report.issues.extend(_schema_issues(obj, FLOW_JSON_SCHEMA if kind == "flow" else DIST_JSON_SCHEMA))
    if report.issues:
        return report
    if kind == "flow":
        dims = set()
        for i, layer in enumerate(obj["layers"]):
            report.issues.extend(_layer_invariants(i, layer))
            key = {"planar": "u", "sylvester": "A", "radial": "z0", "householder": "v"}[layer["variant"]]
            dims.add(len(layer[key]))
        if len(dims) > 1 and not report.issues:
            report.issues.append(Issue("layers", f"layers disagree on dimension: {sorted(dims)}", "invariant"))
    else:
        try:
            dist_from_dict(obj)
        except (FlowcapError, KeyError, TypeError, ValueError) as exc:
            report.issues.append(Issue("$", str(exc), "invariant"))
    return report


def validate_files(paths) -> ValidationReport:
    """Check every file against the flow or distribution schema plus semantic invariants."""
    out = ValidationReport()
    for path in paths:
        try:
            obj = _read_json(path)
        except (OSError, json.JSONDecodeError) as exc:
            rep = FileReport(str(path), "unknown", [Issue("$", str(exc), "io")])
        else:
            rep = validate_object(obj)
            rep.file = str(path)
        out.files.append(rep)
    return out


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


__all__ = [
    "stack_from_dict",
    "dist_from_dict",
    "layer_from_dict",
    "load_stack",
    "load_dist",
    "load_matrix",
    "dump_json",
    "validate_object",
    "validate_files",
    "ValidationReport",
    "FLOW_JSON_SCHEMA",
    "DIST_JSON_SCHEMA",
]
