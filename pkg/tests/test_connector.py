import random

import pytest

from conftest import SCORE, FakeClock, cache_with, make_envelope, wire_topic
from dhlink.connector import (
    KEY_UNAVAILABLE,
    PRIVATE,
    PUBLIC,
    ConnectorConfig,
    KeyCache,
    RestReader,
    StageTrace,
    payload_aad,
)
from dhlink import envelope
from dhlink.envelope import Envelope
from dhlink.errors import KeyUnavailable, SchemaViolation, Unauthorized, ValidationError
from dhlink.security.crypto import encrypt_payload, generate_keypair


def appended(platform, topic):
    t = platform.core.broker.get_topic(topic)
    return {sid: sec.next_offset for sid, sec in t.sections.items()}


def value(n):
    return {"userToken": f"tok-{n:05d}", "score": n}


# -- source ------------------------------------------------------------------

def test_encrypted_send_stage_order(platform):
    w = wire_topic(platform)
    trace = StageTrace()
    out = w.source("src", tracer=trace).send(value(1))
    assert [(o.section, o.offset, o.encrypted, o.status) for o in out] == [
        ("s0001", 0, True, "sent"), ("s0002", 0, True, "sent")]
    assert trace.pairs() == [
        ("validate", "ok"),
        ("key-cache", "miss"), ("key-lookup", "found"), ("encrypt", "encrypted"),
        ("key-cache", "miss"), ("key-lookup", "found"), ("encrypt", "encrypted"),
        ("authorize-send", "allow"),
        ("append", "ok"), ("append", "ok"),
    ]


def test_plaintext_fallback_when_no_key(platform):
    w = wire_topic(platform, keys=False)
    trace = StageTrace()
    out = w.source("src", tracer=trace, plaintext_fallback=True).send(value(1))
    assert [o.encrypted for o in out] == [False, False]
    assert ("encrypt", "plaintext-fallback") in trace.pairs()
    assert ("key-lookup", "not-found") in trace.pairs()
    assert w.sink("r1").poll()[0].value == value(1)


def test_no_key_and_no_fallback_appends_nothing(platform):
    w = wire_topic(platform, keys=False)
    trace = StageTrace()
    out = w.source("src", tracer=trace).send(value(1))
    assert [o.status for o in out] == [KEY_UNAVAILABLE, KEY_UNAVAILABLE]
    assert all(o.offset is None for o in out)
    assert "append" not in trace.stages()
    assert appended(platform, "scores") == {"s0001": 0, "s0002": 0}


def test_partial_keys(platform):
    w = wire_topic(platform, keys=False)
    platform.admin_security().generate_key("scores", "s0002")
    out = w.source("src").send(value(1))
    assert [(o.section, o.status) for o in out] == [("s0001", KEY_UNAVAILABLE), ("s0002", "sent")]


def test_unauthorized_sender_causes_zero_appends(platform):
    w = wire_topic(platform, senders=("src",), receivers=("r1", "r2"))
    trace = StageTrace()
    # r1 is a known service but holds no send entry
    with pytest.raises(Unauthorized):
        w.source("r1", tracer=trace).send(value(1))
    assert trace.pairs()[-2:] == [("authorize-send", "deny"), ("reject", "send-rejected")]
    assert appended(platform, "scores") == {"s0001": 0, "s0002": 0}


def test_invalid_value_is_rejected_before_anything_else(platform):
    w = wire_topic(platform)
    trace = StageTrace()
    with pytest.raises(SchemaViolation):
        w.source("src", tracer=trace).send({"userToken": "x"})
    assert trace.pairs() == [("validate", "violation")]
    assert platform.security.stats()["key_lookups"] == 0


def test_one_message_id_per_send(platform):
    w = wire_topic(platform)
    src = w.source("src")
    src.send(value(1))
    src.send(value(2))
    ids = {rec.envelope.message_id for sid in ("s0001", "s0002")
           for rec in platform.core.broker.fetch("scores", sid)}
    assert len(ids) == 2 and src.last_message_id in ids and src.send_count == 2
    assert all(i.startswith("src-") for i in ids)


def test_restarted_sender_is_not_deduplicated(platform, monkeypatch):
    w = wire_topic(platform, receivers=("r1",))
    t = [1_000_000]
    monkeypatch.setattr(envelope, "_shared", {})
    w.source("src", clock=lambda: t[0]).send(value(1))
    monkeypatch.setattr(envelope, "_shared", {})  # a fresh process one ms later
    t[0] += 1
    w.source("src", clock=lambda: t[0]).send(value(2))
    sink = w.sink("r1")
    assert [d.value for d in sink.poll()] == [value(1), value(2)]
    assert sink.report.duplicates == 0


def test_connectors_of_one_sender_never_share_ids(platform, monkeypatch):
    monkeypatch.setattr(envelope, "_shared", {})
    a = wire_topic(platform, topic="a", receivers=("r1",))
    b = wire_topic(platform, topic="b", receivers=("r1",), api_keys=a.api_keys)
    ids = set()
    for w in (a, b):
        src = w.source("src", clock=lambda: 5_000)
        for n in range(3):
            src.send(value(n))
            ids.add(src.last_message_id)
    assert len(ids) == 6


def test_stored_payload_is_ciphertext(platform):
    w = wire_topic(platform)
    w.source("src").send({"userToken": "very-identifying-token", "score": 7})
    for sid in ("s0001", "s0002"):
        rec = platform.core.broker.fetch("scores", sid)[0]
        assert rec.envelope.encrypted
        assert b"very-identifying" not in rec.envelope.payload
    for path in (platform.data_dir / "core").rglob("*.log"):
        assert "very-identifying" not in path.read_text()


# -- sink --------------------------------------------------------------------

def test_sink_stage_order(platform):
    w = wire_topic(platform)
    w.source("src").send(value(1))
    trace = StageTrace()
    got = w.sink("r1", tracer=trace).poll()
    assert [d.value for d in got] == [value(1)]
    assert trace.pairs() == [
        ("authorize-receive", "allow"), ("fetch", "ok"),
        ("key-cache", "miss"), ("key-lookup", "found"),
        ("decrypt", "ok"), ("validate", "ok"),
    ]


def test_sink_on_foreign_section_is_rejected(platform):
    w = wire_topic(platform)
    core, sec = w.clients("r2")
    from dhlink.connector import SinkConnector
    trace = StageTrace()
    with pytest.raises(Unauthorized):
        SinkConnector(core, sec, "scores", w.sections["r1"], SCORE, tracer=trace).poll()
    assert trace.pairs() == [("authorize-receive", "deny"), ("reject", "receive-rejected")]


def test_missing_private_key_leaves_cursor(platform):
    w = wire_topic(platform)
    w.source("src").send(value(1))
    admin = platform.admin_security()
    key_id = next(k["keyId"] for k in admin.list_keys("scores") if k["section"] == "s0001")
    admin.revoke_key(key_id)
    trace = StageTrace()
    sink = w.sink("r1", tracer=trace)
    with pytest.raises(KeyUnavailable):
        sink.poll()
    assert sink.cursor == 0
    assert ("key-lookup", "not-found") in trace.pairs()
    assert trace.pairs()[-1] == ("key-unavailable", "error")
    # still blocked on the next poll, never skipped
    with pytest.raises(KeyUnavailable):
        sink.poll()
    assert sink.cursor == 0 and sink.report.delivered == 0


def test_key_unavailable_after_some_deliveries(platform):
    w = wire_topic(platform, keys=False)
    src = w.source("src", plaintext_fallback=True)
    src.send(value(1))
    platform.admin_security().generate_key("scores", "s0001")
    src.key_cache.invalidate("scores")
    src.send(value(2))
    sink = w.sink("r1")
    platform.admin_security().revoke_key(platform.admin_security().list_keys("scores")[0]["keyId"])
    assert [d.value for d in sink.poll()] == [value(1)]
    assert sink.cursor == 1
    with pytest.raises(KeyUnavailable):
        sink.poll()
    assert sink.cursor == 1


def test_rotation_reads_old_records_with_cached_key(platform):
    w = wire_topic(platform)
    src = w.source("src")
    sink = w.sink("r1")
    src.send(value(1))
    assert [d.value for d in sink.poll()] == [value(1)]
    platform.admin_security().generate_key("scores", "s0001", rotate=True)
    src.key_cache.invalidate("scores")
    src.send(value(2))
    trace = StageTrace()
    sink.trace = sink._opener.trace = trace
    assert [d.value for d in sink.poll()] == [value(2)]
    assert ("key-cache", "stale") in trace.pairs()


def test_duplicate_message_ids_delivered_once(platform):
    w = wire_topic(platform, receivers=("r1",))
    src_core, _ = w.clients("src")
    env = make_envelope("scores", "s0001", 1, payload=b'{"score":1,"userToken":"a"}')
    src_core.append("scores", "s0001", env)
    src_core.append("scores", "s0001", env)
    sink = w.sink("r1")
    assert len(sink.poll()) == 1
    assert sink.report.duplicates == 1 and sink.cursor == 2


def test_dedup_window_is_bounded(platform):
    w = wire_topic(platform, receivers=("r1",))
    src_core, _ = w.clients("src")
    sink = w.sink("r1", dedup_window=2)
    envs = [make_envelope("scores", "s0001", n, payload=b'{"score":1,"userToken":"a"}') for n in range(3)]
    for e in envs:
        src_core.append("scores", "s0001", e)
    assert len(sink.poll()) == 3
    src_core.append("scores", "s0001", envs[0])  # fell out of the window
    src_core.append("scores", "s0001", envs[2])
    assert [d.message_id for d in sink.poll()] == ["src-0"]


def test_decrypt_failure_is_counted_and_skipped(platform):
    w = wire_topic(platform, receivers=("r1",))
    key_id = platform.admin_security().list_keys("scores")[0]["keyId"]
    wrong = generate_keypair().public_key
    src_core, _ = w.clients("src")
    bad = Envelope(topic="scores", section="s0001", schema="Score", schema_version=1, sender="src",
                   message_id="forged-0", sent_at=1, encrypted=True, key_id=key_id,
                   payload=encrypt_payload(wrong, b'{"score":1,"userToken":"a"}',
                                           payload_aad("scores", "s0001", key_id)))
    src_core.append("scores", "s0001", bad)
    w.source("src").send(value(2))
    sink = w.sink("r1")
    assert [d.value for d in sink.poll()] == [value(2)]
    assert sink.report.decrypt_failures == 1
    assert sink.report.errors[0]["kind"] == "decrypt-failure"
    assert sink.cursor == 2


def test_ciphertext_moved_between_sections_fails(platform):
    w = wire_topic(platform)
    w.source("src").send(value(1))
    rec = platform.core.broker.fetch("scores", "s0001")[0]
    key2 = next(k["keyId"] for k in platform.admin_security().list_keys("scores") if k["section"] == "s0002")
    moved = Envelope(**{**rec.envelope.__dict__, "section": "s0002", "key_id": key2, "message_id": "m"})
    w.clients("src")[0].append("scores", "s0002", moved)
    sink = w.sink("r2")
    assert [d.value for d in sink.poll()] == [value(1)]
    assert sink.report.decrypt_failures == 1


def test_invalid_payload_counted(platform):
    w = wire_topic(platform, receivers=("r1",), keys=False)
    src_core, _ = w.clients("src")
    src_core.append("scores", "s0001", make_envelope("scores", "s0001", 0, payload=b'{"score":"x"}'))
    src_core.append("scores", "s0001", make_envelope("scores", "s0001", 1, payload=b"not json"))
    sink = w.sink("r1")
    assert sink.poll() == []
    assert sink.report.invalid == 2 and sink.cursor == 2


def test_cursor_survives_restart(platform, tmp_path):
    w = wire_topic(platform, receivers=("r1",))
    src = w.source("src")
    for n in range(5):
        src.send(value(n))
    state = tmp_path / "sink.json"
    first = w.sink("r1", state_path=state)
    assert len(first.poll(3)) == 3
    second = w.sink("r1", state_path=state)
    assert second.cursor == 3
    assert [d.value["score"] for d in second.poll()] == [3, 4]


def test_thousand_values_end_to_end(platform):
    w = wire_topic(platform)
    src = w.source("src")
    rng = random.Random(5)
    sent = [{"userToken": f"t{rng.getrandbits(32):08x}", "score": rng.randint(-100, 100)} for _ in range(1000)]
    for v in sent:
        src.send(v)
    for r in ("r1", "r2"):
        sink = w.sink(r)
        got = []
        while batch := sink.poll(300):
            got += batch
        assert [d.value for d in got] == sent
        assert all(d.encrypted for d in got)
        assert [d.offset for d in got] == list(range(1000))


def test_rest_reader(platform):
    w = wire_topic(platform, receivers=("r1",))
    src = w.source("src")
    for n in range(4):
        src.send(value(n))
    core, sec = w.clients("r1")
    reader = RestReader(core, sec, "scores", "s0001", SCORE)
    assert [d.value["score"] for d in reader.read(1, 2)] == [1, 2]
    assert [d.value["score"] for d in reader.read(0)] == [0, 1, 2, 3]


# -- key cache ---------------------------------------------------------------

def test_cache_ttl_boundary(key_clock):
    cache = cache_with(key_clock, ttl=60)
    cache.put("t", "s0001", PUBLIC, "k1", b"x")
    key_clock.t += 59.999
    assert cache.get("t", "s0001", PUBLIC).key_id == "k1"
    key_clock.t = 1060.0
    assert cache.get("t", "s0001", PUBLIC) is None
    assert cache.hits == 1 and cache.misses == 1


def test_cache_lru_capacity_two(key_clock):
    cache = KeyCache(capacity=2, clock=key_clock)
    cache.put("t", "a", PUBLIC, "ka", b"a")
    cache.put("t", "b", PUBLIC, "kb", b"b")
    cache.get("t", "a", PUBLIC)
    cache.put("t", "c", PUBLIC, "kc", b"c")
    assert cache.keys() == [("t", "a", PUBLIC), ("t", "c", PUBLIC)]
    assert cache.get("t", "b", PUBLIC) is None


def test_cache_kinds_are_separate(key_clock):
    cache = cache_with(key_clock)
    cache.put("t", "a", PUBLIC, "k", b"p")
    assert cache.get("t", "a", PRIVATE) is None
    assert cache.invalidate("t") == 1 and len(cache) == 0
    with pytest.raises(ValueError):
        KeyCache(capacity=0)


def test_warm_cache_sends_without_lookups(platform, key_clock):
    w = wire_topic(platform)
    src = w.source("src", key_cache=cache_with(key_clock, ttl=60))
    src.send(value(0))
    before = platform.security.stats()["key_lookups"]
    for n in range(100):
        src.send(value(n))
    assert platform.security.stats()["key_lookups"] == before
    key_clock.t += 60
    src.send(value(101))
    assert platform.security.stats()["key_lookups"] == before + 2


# -- configuration -----------------------------------------------------------

def test_config_round_trip():
    doc = {"serviceId": "s", "apiKey": "k", "topic": "t", "role": "sink", "sectionId": "s0001",
           "brokerUrl": "http://b", "securityUrl": "http://s", "statePath": "/tmp/x"}
    cfg = ConnectorConfig.from_dict(doc)
    assert ConnectorConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.cache_ttl_seconds == 300.0


@pytest.mark.parametrize("doc", [
    {"serviceId": "s", "apiKey": "k", "topic": "t", "role": "sink", "brokerUrl": "b", "securityUrl": "s"},
    {"serviceId": "s", "apiKey": "k", "topic": "t", "role": "relay", "brokerUrl": "b", "securityUrl": "s"},
    {"serviceId": "s", "topic": "t", "role": "source", "brokerUrl": "b", "securityUrl": "s"},
])
def test_bad_configs(doc):
    with pytest.raises(ValidationError):
        ConnectorConfig.from_dict(doc)
