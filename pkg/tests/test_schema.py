import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhlink.errors import EncodingError, InvalidSchema, SchemaViolation
from dhlink.schema import (
    MISSING_REQUIRED,
    OUT_OF_RANGE,
    UNKNOWN_FIELD,
    WRONG_KIND,
    DataSchema,
    canonical_decode,
    canonical_encode,
    validate_instance,
)

SCORE = DataSchema.from_dict({"name": "Score", "version": 1, "fields": [
    {"name": "userToken", "kind": "string", "required": True},
    {"name": "score", "kind": "integer", "required": True},
]})

PLACE = DataSchema.from_dict({"name": "Place", "version": 1, "fields": [
    {"name": "loc", "kind": "geo-point"},
]})

RICH = DataSchema.from_dict({"name": "Rich", "version": 2, "fields": [
    {"name": "s", "kind": "string"},
    {"name": "i", "kind": "integer"},
    {"name": "f", "kind": "float"},
    {"name": "b", "kind": "boolean"},
    {"name": "t", "kind": "timestamp"},
    {"name": "g", "kind": "geo-point"},
    {"name": "tags", "kind": "array", "items": {"kind": "string"}},
    {"name": "rec", "kind": "record", "required": False, "fields": [
        {"name": "x", "kind": "float"},
        {"name": "note", "kind": "string", "required": False},
    ]},
    {"name": "recs", "kind": "array", "required": False,
     "items": {"kind": "record", "fields": [{"name": "k", "kind": "integer"}]}},
]})


def pairs(report):
    return sorted((v.path, v.reason) for v in report.violations)


def test_exact_match_is_ok():
    assert validate_instance(SCORE, {"userToken": "a1", "score": 5}).ok


def test_missing_required():
    assert pairs(validate_instance(SCORE, {"userToken": "a1"})) == [("score", MISSING_REQUIRED)]


def test_wrong_kind_and_unknown_field_are_both_reported():
    report = validate_instance(SCORE, {"userToken": "a1", "score": "5", "extra": 1})
    assert pairs(report) == [("extra", UNKNOWN_FIELD), ("score", WRONG_KIND)]
    assert not report.ok


def test_latitude_out_of_range():
    report = validate_instance(PLACE, {"loc": {"lat": 91.0, "lon": 0.0}})
    assert [v.reason for v in report.violations] == [OUT_OF_RANGE]


@pytest.mark.parametrize("loc, ok", [
    ({"lat": 90.0, "lon": 180.0}, True),
    ({"lat": -90.0, "lon": -180.0}, True),
    ({"lat": 0, "lon": 0}, True),
    ({"lat": 0.0, "lon": 180.5}, False),
    ({"lat": "0", "lon": 0.0}, False),
    ({"lat": 0.0}, False),
    ([0.0, 0.0], False),
])
def test_geo_point_bounds(loc, ok):
    assert validate_instance(PLACE, {"loc": loc}).ok is ok


def test_bool_is_not_an_integer():
    assert pairs(validate_instance(SCORE, {"userToken": "a", "score": True})) == [("score", WRONG_KIND)]


def test_nested_paths():
    value = {"s": "x", "i": 1, "f": 1, "b": False, "t": 0, "g": {"lat": 1.0, "lon": 2.0},
             "tags": ["a", 3], "rec": {"x": "no", "zzz": 1}, "recs": [{"k": 1}, {}]}
    assert pairs(validate_instance(RICH, value)) == [
        ("rec.x", WRONG_KIND), ("rec.zzz", UNKNOWN_FIELD), ("recs[1].k", MISSING_REQUIRED),
        ("tags[1]", WRONG_KIND),
    ]


def test_non_record_top_level():
    report = validate_instance(SCORE, [1, 2])
    assert not report.ok


def test_raise_for_violations():
    with pytest.raises(SchemaViolation):
        validate_instance(SCORE, {}).raise_for_violations()


@pytest.mark.parametrize("doc", [
    {"name": "X", "version": 0, "fields": []},
    {"name": "X", "version": 1, "fields": [{"name": "a", "kind": "string"}, {"name": "a", "kind": "integer"}]},
    {"name": "X", "version": 1, "fields": [{"name": "a", "kind": "decimal"}]},
    {"name": "X", "version": 1, "fields": [{"name": "a", "kind": "array"}]},
    {"name": "bad name", "version": 1, "fields": []},
    {"name": "X", "fields": []},
])
def test_malformed_schemas_are_rejected(doc):
    with pytest.raises(InvalidSchema):
        DataSchema.from_dict(doc)


def test_schema_document_round_trip():
    assert DataSchema.from_dict(RICH.to_dict()) == RICH
    assert DataSchema.from_dict(json.loads(json.dumps(RICH.to_dict()))) == RICH


# -- canonical encoding ---------------------------------------------------

def test_key_order_independent():
    assert canonical_encode({"b": 2, "a": 1}) == canonical_encode({"a": 1, "b": 2}) == b'{"a":1,"b":2}'


def test_empty_record():
    assert canonical_encode({}) == b"{}"


def test_shortest_float_and_utf8():
    assert canonical_encode({"x": 0.1, "y": "é"}) == '{"x":0.1,"y":"é"}'.encode("utf-8")


@pytest.mark.parametrize("bad", [{"x": float("nan")}, {"x": float("inf")}, {"x": {1, 2}}, {1: "a"},
                                 {"x": b"raw"}])
def test_non_encodable(bad):
    with pytest.raises(EncodingError):
        canonical_encode(bad)


def random_rich(rng: random.Random) -> dict:
    """A random value that is valid under RICH."""
    def text():
        return "".join(rng.choice("abcxyz é中🙂\"\\\n") for _ in range(rng.randint(0, 12)))
    value = {
        "s": text(),
        "i": rng.randint(-2**53, 2**53),
        "f": rng.uniform(-1e6, 1e6) if rng.random() < 0.8 else float(rng.randint(-5, 5)),
        "b": rng.random() < 0.5,
        "t": rng.randint(0, 2**41),
        "g": {"lat": rng.uniform(-90, 90), "lon": rng.uniform(-180, 180)},
        "tags": [text() for _ in range(rng.randint(0, 4))],
    }
    if rng.random() < 0.5:
        rec = {"x": rng.uniform(-1, 1) * 10 ** rng.randint(-30, 30)}
        if rng.random() < 0.5:
            rec["note"] = text()
        value["rec"] = rec
    if rng.random() < 0.5:
        value["recs"] = [{"k": rng.randint(-9, 9)} for _ in range(rng.randint(0, 3))]
    return value


def test_round_trip_1000_random_values():
    rng = random.Random(7)
    for _ in range(1000):
        v = random_rich(rng)
        assert validate_instance(RICH, v).ok
        data = canonical_encode(v)
        back = canonical_decode(data)
        assert back == v
        # canonical form is a fixed point
        assert canonical_encode(back) == data


def test_injective_on_distinct_values():
    rng = random.Random(11)
    seen = {}
    for _ in range(2000):
        v = random_rich(rng)
        data = canonical_encode(v)
        if data in seen:
            assert seen[data] == v
        seen[data] = v


encodable_leaf = st.one_of(st.booleans(), st.integers(),
                           st.floats(allow_nan=False, allow_infinity=False), st.text())


def _nest(leaf):
    return st.recursive(leaf, lambda c: st.one_of(st.lists(c, max_size=4),
                                                  st.dictionaries(st.text(), c, max_size=4)),
                        max_leaves=20)


json_value = _nest(encodable_leaf)
any_value = _nest(st.one_of(st.none(), encodable_leaf))


@settings(max_examples=200, deadline=None)
@given(json_value)
def test_round_trip_property(v):
    back = canonical_decode(canonical_encode(v))
    assert canonical_encode(back) == canonical_encode(v)


def test_none_is_not_encodable():
    with pytest.raises(EncodingError):
        canonical_encode({"x": None})


@settings(max_examples=200, deadline=None)
@given(any_value)
def test_validation_is_total(v):
    report = validate_instance(RICH, v)
    assert report.ok == (not report.violations)


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(min_size=1), st.integers(), max_size=6))
def test_encoding_ignores_insertion_order(d):
    items = list(d.items())
    random.Random(len(items)).shuffle(items)
    assert canonical_encode(dict(items)) == canonical_encode(d)


def test_decode_rejects_nan_constant():
    with pytest.raises(ValueError):
        canonical_decode(b'{"x":NaN}')
    assert math.isclose(canonical_decode(b"1e-7"), 1e-7)
