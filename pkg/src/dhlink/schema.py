"""A small record-schema language, its validator and the canonical encoding.

Schemas are JSON documents::

    {"name": "QuestionnaireResponse", "version": 1,
     "fields": [{"name": "userToken", "kind": "string", "required": true},
                {"name": "answers", "kind": "array",
                 "items": {"kind": "record", "fields": [...]}}]}

Kinds: string, integer, float, boolean, timestamp (integer ms since the Unix
epoch, UTC), geo-point (``{"lat": .., "lon": ..}``), array (``items`` gives
the element kind) and record (``fields`` gives the nested fields).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterator

from dhlink.errors import EncodingError, InvalidSchema, SchemaViolation

KINDS = frozenset(
    {"string", "integer", "float", "boolean", "timestamp", "geo-point", "array", "record"}
)
IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]{0,127}$")

MISSING_REQUIRED = "missing-required"
WRONG_KIND = "wrong-kind"
OUT_OF_RANGE = "out-of-range"
UNKNOWN_FIELD = "unknown-field"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    required: bool = True
    items: "FieldSpec | None" = None
    fields: tuple["FieldSpec", ...] = ()

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind, "required": self.required}
        if self.items is not None:
            item = self.items.to_dict()
            item.pop("name", None)
            item.pop("required", None)
            out["items"] = item
        if self.kind == "record":
            out["fields"] = [f.to_dict() for f in self.fields]
        return out

    @classmethod
    def from_dict(cls, doc: dict, *, element: bool = False) -> "FieldSpec":
        if not isinstance(doc, dict):
            raise InvalidSchema(f"field spec must be an object, got {type(doc).__name__}")
        kind = doc.get("kind")
        name = doc.get("name", "" if element else None)
        if name is None:
            raise InvalidSchema("field spec without name")
        items = doc.get("items")
        nested = doc.get("fields", ())
        return cls(
            name=name,
            kind=kind,
            required=bool(doc.get("required", True)),
            items=cls.from_dict(items, element=True) if items is not None else None,
            fields=tuple(cls.from_dict(f) for f in nested) if nested else (),
        )


@dataclass(frozen=True)
class DataSchema:
    name: str
    version: int
    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        check_schema(self)

    @property
    def ref(self) -> tuple[str, int]:
        return (self.name, self.version)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "fields": [f.to_dict() for f in self.fields],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DataSchema":
        if not isinstance(doc, dict):
            raise InvalidSchema("schema document must be an object")
        try:
            return cls(
                name=doc["name"],
                version=doc["version"],
                fields=tuple(FieldSpec.from_dict(f) for f in doc["fields"]),
            )
        except KeyError as exc:
            raise InvalidSchema(f"schema document missing {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "DataSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _check_fields(fields, where: str) -> None:
    seen = set()
    for f in fields:
        if not isinstance(f.name, str) or not IDENTIFIER.match(f.name):
            raise InvalidSchema(f"{where}: bad field name {f.name!r}")
        if f.name in seen:
            raise InvalidSchema(f"{where}: duplicate field {f.name!r}")
        seen.add(f.name)
        _check_field(f, f"{where}.{f.name}")


def _check_field(f: FieldSpec, where: str) -> None:
    if f.kind not in KINDS:
        raise InvalidSchema(f"{where}: unknown kind {f.kind!r}")
    if f.kind == "array":
        if f.items is None:
            raise InvalidSchema(f"{where}: array without items")
        _check_field(f.items, f"{where}[]")
    elif f.items is not None:
        raise InvalidSchema(f"{where}: items only allowed on arrays")
    if f.kind == "record":
        _check_fields(f.fields, where)
    elif f.fields:
        raise InvalidSchema(f"{where}: fields only allowed on records")


def check_schema(schema: DataSchema) -> None:
    if not isinstance(schema.name, str) or not IDENTIFIER.match(schema.name):
        raise InvalidSchema(f"bad schema name {schema.name!r}")
    if isinstance(schema.version, bool) or not isinstance(schema.version, int) or schema.version < 1:
        raise InvalidSchema(f"schema version must be a positive integer, got {schema.version!r}")
    _check_fields(schema.fields, schema.name)


# -- validation --------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    path: str
    reason: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_for_violations(self) -> None:
        if self.violations:
            desc = ", ".join(f"{v.path}: {v.reason}" for v in self.violations)
            raise SchemaViolation(desc, self.violations)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _validate_record(fields, value, path: str) -> Iterator[Violation]:
    if not isinstance(value, dict):
        yield Violation(path or "$", WRONG_KIND)
        return
    known = {f.name for f in fields}
    for f in fields:
        sub = _join(path, f.name)
        if f.name not in value:
            if f.required:
                yield Violation(sub, MISSING_REQUIRED)
            continue
        yield from _validate_value(f, value[f.name], sub)
    for key in value:
        if key not in known:
            yield Violation(_join(path, str(key)), UNKNOWN_FIELD)


def _validate_value(f: FieldSpec, v, path: str) -> Iterator[Violation]:
    kind = f.kind
    if kind == "string":
        if not isinstance(v, str):
            yield Violation(path, WRONG_KIND)
    elif kind == "integer":
        if not _is_int(v):
            yield Violation(path, WRONG_KIND)
    elif kind == "float":
        if not (_is_int(v) or isinstance(v, float)):
            yield Violation(path, WRONG_KIND)
        elif not math.isfinite(v):
            yield Violation(path, OUT_OF_RANGE)
    elif kind == "boolean":
        if not isinstance(v, bool):
            yield Violation(path, WRONG_KIND)
    elif kind == "timestamp":
        if not _is_int(v):
            yield Violation(path, WRONG_KIND)
        elif v < 0:
            yield Violation(path, OUT_OF_RANGE)
    elif kind == "geo-point":
        yield from _validate_geo(v, path)
    elif kind == "array":
        if not isinstance(v, list):
            yield Violation(path, WRONG_KIND)
            return
        for i, item in enumerate(v):
            yield from _validate_value(f.items, item, f"{path}[{i}]")
    elif kind == "record":
        yield from _validate_record(f.fields, v, path)


def _validate_geo(v, path: str) -> Iterator[Violation]:
    if not isinstance(v, dict):
        yield Violation(path, WRONG_KIND)
        return
    for axis, bound in (("lat", 90.0), ("lon", 180.0)):
        sub = f"{path}.{axis}"
        if axis not in v:
            yield Violation(sub, MISSING_REQUIRED)
        elif not (_is_int(v[axis]) or isinstance(v[axis], float)):
            yield Violation(sub, WRONG_KIND)
        elif not math.isfinite(v[axis]) or not -bound <= v[axis] <= bound:
            yield Violation(sub, OUT_OF_RANGE)
    for key in v:
        if key not in ("lat", "lon"):
            yield Violation(f"{path}.{key}", UNKNOWN_FIELD)


def validate_instance(schema: DataSchema, value: Any) -> ValidationReport:
    """Check ``value`` against ``schema`` and report every violation found."""
    return ValidationReport(list(_validate_record(schema.fields, value, "")))


# -- canonical encoding ------------------------------------------------------

def _check_encodable(v, path: str = "$") -> None:
    if isinstance(v, dict):
        for k, item in v.items():
            if not isinstance(k, str):
                raise EncodingError(f"{path}: record keys must be strings, got {type(k).__name__}")
            _check_encodable(item, f"{path}.{k}")
    elif isinstance(v, list):
        for i, item in enumerate(v):
            _check_encodable(item, f"{path}[{i}]")
    elif isinstance(v, float):
        if not math.isfinite(v):
            raise EncodingError(f"{path}: non-finite float")
    elif not isinstance(v, (str, int, bool)):
        raise EncodingError(f"{path}: cannot encode {type(v).__name__}")


def canonical_encode(value: Any) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no whitespace, shortest floats."""
    _check_encodable(value)
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def _reject_constant(name):
    raise ValueError(f"non-canonical constant {name}")


def canonical_decode(data: bytes) -> Any:
    """Inverse of :func:`canonical_encode`. Raises ``ValueError`` on bad input."""
    text = data.decode("utf-8")
    return json.loads(text, parse_constant=_reject_constant)
