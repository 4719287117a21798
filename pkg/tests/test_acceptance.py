"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are written past the
output capture so they show up in the normal log.
"""

import json
import random
import threading
import time
from contextlib import contextmanager

import pytest

from conftest import SCORE, FakeClock, cache_with, make_envelope, wire_topic
from dhlink.broker import MAX_FETCH, Broker
from dhlink.connector import SinkConnector, SourceConnector, StageTrace, payload_aad
from dhlink.envelope import Envelope
from dhlink.errors import AccessDenied, DecryptFailure, KeyNotFound, KeyUnavailable
from dhlink.platform import DeskPlatform
from dhlink.scenarios import ScenarioConfig, run_ai2_mindtick, run_proximity
from dhlink.schema import canonical_decode
from dhlink.security.acl import ALLOW, DENY, RECEIVE, SEND, AccessControlEntry, Authorizer, MicroserviceProfile, fingerprint
from dhlink.security.crypto import decrypt_payload
from dhlink.services.geo import GpsPoint, dbscan_labels
from dhlink.services.proximity import DAY_MS, detect_proximity_backtrace, detect_proximity_incremental, purge_expired
from test_admin import _cred, proposal, state, working_app
from test_broker import replay_schedule
from test_geo import four_plus_one, random_instance, reference_dbscan
from test_proximity import cl, keys, oracle, random_clusters
from test_security import random_table, scan


@contextmanager
def criterion(capsys, label):
    """Yields a dict whose ``detail`` ends up on the PASS line; failures print FAIL."""
    out = {"detail": ""}
    try:
        yield out
    except BaseException as exc:
        first = (str(exc).splitlines() or [""])[0][:200]
        with capsys.disabled():
            print(f"\nFAIL {label}: {type(exc).__name__}: {first}")
        raise
    with capsys.disabled():
        print(f"\nPASS {label}: {out['detail']}")


def value(n):
    return {"userToken": f"tok-{n:05d}", "score": n}


def drain(sink, batch=500):
    got = []
    while True:
        more = sink.poll(batch)
        if not more:
            return got
        got.extend(more)


def section_records(broker, topic, sid):
    owner = broker.section_owner(topic, sid)
    out, offset = [], 0
    while True:
        batch = broker.fetch(topic, sid, offset, MAX_FETCH, receiver_id=owner)
        if not batch:
            return out
        out.extend(batch)
        offset = batch[-1].offset + 1


# 1 ---------------------------------------------------------------------------

def leaks(envelope: Envelope) -> bool:
    """True when the stored payload is readable as a canonical value."""
    if not envelope.encrypted:
        return True
    try:
        canonical_decode(envelope.payload)
    except (ValueError, UnicodeDecodeError):
        return False
    return True


def test_1_confidentiality_sweep(tmp_path, capsys):
    with criterion(capsys, "1 confidentiality sweep") as out:
        with DeskPlatform(tmp_path / "platform") as p:
            tapped = []
            real_append = p.core.broker.append

            def tap(topic, section, envelope):
                tapped.append(envelope)
                return real_append(topic, section, envelope)

            p.core.broker.append = tap
            runs = [run_ai2_mindtick(ScenarioConfig(seed=11), platform=p),
                    run_proximity(ScenarioConfig(seed=11), platform=p)]
            p.core.broker.append = real_append

            on_disk = []
            tokens = {e.data["userToken"] for t in runs for e in t.of("enrol")}
            token_hits = 0
            for log in sorted((tmp_path / "platform" / "core" / "topics").rglob("*.log")):
                text = log.read_text(encoding="utf-8")
                token_hits += sum(tok in text for tok in tokens)
                for line in text.splitlines()[1:]:
                    on_disk.append(Envelope.from_wire(json.loads(line)["e"]))

        readable = sum(leaks(e) for e in tapped) + sum(leaks(e) for e in on_disk)
        sent, matched, total = {}, 0, 0
        for t in runs:
            sent.update({e.data["messageId"]: e.digest for e in t.of("send")})
        received = {}
        for t in runs:
            for e in t.of("receive"):
                received.setdefault(e.data["messageId"], []).append(e.digest)
        for mid, digest in sent.items():
            total += 1
            got = received.get(mid, [])
            matched += bool(got) and all(d == digest for d in got)
        assert readable == 0 and token_hits == 0
        assert total >= 2000 and matched == total
        out["detail"] = (f"{len(tapped)} appended + {len(on_disk)} stored records, 0 readable; "
                         f"{matched}/{total} messages match sender and receiver")


# 2 ---------------------------------------------------------------------------

def test_2_section_isolation(platform, capsys):
    with criterion(capsys, "2 section isolation") as out:
        receivers = ("r1", "r2", "r3", "r4")
        w = wire_topic(platform, topic="iso", receivers=receivers)
        src = w.source("src")
        for n in range(120):
            src.send(value(n))
        keys_by_section = {}
        for r in receivers:
            _, sec = w.clients(r)
            keys_by_section[w.sections[r]] = sec.get_private_key("iso", w.sections[r])[1]
        attacker_section = w.sections["r1"]
        attacker_key = keys_by_section[attacker_section]

        broker = platform.core.broker
        stolen, tried, own_ok, own_total = 0, 0, 0, 0
        per_section = {}
        for sid, key in keys_by_section.items():
            records = section_records(broker, "iso", sid)
            per_section[sid] = len(records)
            for rec in records:
                env = rec.envelope
                aad = payload_aad("iso", sid, env.key_id)
                own_total += 1
                decrypt_payload(key, env.payload, aad)
                own_ok += 1
                if sid == attacker_section:
                    continue
                for guess in (aad, payload_aad("iso", attacker_section, env.key_id), b""):
                    tried += 1
                    try:
                        decrypt_payload(attacker_key, env.payload, guess)
                        stolen += 1
                    except DecryptFailure:
                        pass
        assert min(per_section.values()) >= 100
        assert stolen == 0 and own_ok == own_total
        out["detail"] = (f"attacker decrypted 0/{tried} attempts over {len(per_section) - 1} other sections; "
                         f"{own_ok}/{own_total} decrypt with the right key")


# 3 ---------------------------------------------------------------------------

def broker_state(p, root):
    b = p.core.broker
    snap = []
    for topic in b.topics():
        for sid, sec in sorted(topic.sections.items()):
            snap.append((topic.name, sid, sec.next_offset,
                         tuple((r.offset, r.delivered) for r in sec.records)))
    files = tuple((str(f), f.read_bytes()) for f in sorted(root.rglob("*.log")))
    return tuple(snap), files


def test_3_authorization(platform, tmp_path, capsys):
    with criterion(capsys, "3 authorization") as out:
        rng = random.Random(31)
        probes = mismatches = 0
        for _ in range(500):
            services, topics, sections, table = random_table(rng)
            a = Authorizer()
            for s in services:
                a.register_profile(MicroserviceProfile(s, fingerprint(s)))
            for e in table:
                a.add_entry(e)
            for _ in range(20):
                s = rng.choice(services + ["stranger"])
                t = rng.choice(topics)
                op = rng.choice([SEND, RECEIVE])
                sec = rng.choice(sections) if op == RECEIVE else None
                got = ALLOW if a.is_allowed(s, t, op, sec) else DENY
                mismatches += got != scan(table, s, t, op, sec)
                probes += 1
        assert mismatches == 0

        kept = wire_topic(platform, topic="kept", receivers=("r1", "r2"))
        gone = wire_topic(platform, topic="gone", receivers=("r1", "r2"), policy="transient",
                          config={"maxAgeSeconds": 3600}, api_keys=kept.api_keys)
        platform.admin_security().register_profile("intruder", api_key="intruder-key-0000")
        for w in (kept, gone):
            src = w.source("src")
            for n in range(5):
                src.send(value(n))
        root = tmp_path / "platform" / "core" / "topics"
        before = broker_state(platform, root)
        attempts = denied = 0
        intruder = platform.service_clients("intruder", "intruder-key-0000")
        for i in range(200):
            w = rng.choice((kept, gone))
            kind = rng.randrange(5)
            attempts += 1
            try:
                if kind == 0:  # receiver posing as sender through a connector
                    w.source(rng.choice(("r1", "r2"))).send(value(i))
                elif kind == 1:  # connector reading a foreign section
                    core, sec = w.clients("r2")
                    SinkConnector(core, sec, w.topic, w.sections["r1"], SCORE).poll()
                elif kind == 2:  # raw append that skips the connector check
                    core, _ = intruder
                    core.append(w.topic, "s0001", make_envelope(w.topic, "s0001", i, sender="intruder"))
                elif kind == 3:  # raw fetch of someone else's section
                    core, _ = w.clients("r1")
                    core.fetch(w.topic, w.sections["r2"])
                else:  # sender trying to read
                    core, _ = w.clients("src")
                    core.fetch(w.topic, w.sections["r1"])
            except AccessDenied:
                denied += 1
        assert denied == attempts
        assert broker_state(platform, root) == before
        out["detail"] = (f"{probes} probes over 500 tables, 0 mismatches; "
                         f"{denied}/{attempts} denied attempts left broker state unchanged")


# 4 ---------------------------------------------------------------------------

def test_4_working_phase_fidelity(tmp_path, capsys):
    with criterion(capsys, "4 working-phase fidelity") as out:
        with DeskPlatform(tmp_path / "a") as p:
            w = wire_topic(p)
            trace = StageTrace()
            w.source("src", tracer=trace).send(value(1))
            assert trace.pairs() == [
                ("validate", "ok"),
                ("key-cache", "miss"), ("key-lookup", "found"), ("encrypt", "encrypted"),
                ("key-cache", "miss"), ("key-lookup", "found"), ("encrypt", "encrypted"),
                ("authorize-send", "allow"),
                ("append", "ok"), ("append", "ok"),
            ]
            trace = StageTrace()
            assert [d.value for d in w.sink("r1", tracer=trace).poll()] == [value(1)]
            assert trace.pairs() == [
                ("authorize-receive", "allow"), ("fetch", "ok"),
                ("key-cache", "miss"), ("key-lookup", "found"),
                ("decrypt", "ok"), ("validate", "ok"),
            ]
            # missing private key: the sink stops with an error and keeps its cursor
            admin = p.admin_security()
            admin.revoke_key(next(k["keyId"] for k in admin.list_keys("scores") if k["section"] == "s0002"))
            trace = StageTrace()
            sink = w.sink("r2", tracer=trace)
            with pytest.raises(KeyUnavailable):
                sink.poll()
            assert trace.pairs() == [
                ("authorize-receive", "allow"), ("fetch", "ok"),
                ("key-cache", "miss"), ("key-lookup", "not-found"),
                ("key-unavailable", "error"),
            ]
            assert sink.cursor == 0

        with DeskPlatform(tmp_path / "b") as p:
            w = wire_topic(p, keys=False)
            trace = StageTrace()
            outcomes = w.source("src", tracer=trace, plaintext_fallback=True).send(value(2))
            assert [o.encrypted for o in outcomes] == [False, False]
            assert trace.pairs() == [
                ("validate", "ok"),
                ("key-cache", "miss"), ("key-lookup", "not-found"), ("encrypt", "plaintext-fallback"),
                ("key-cache", "miss"), ("key-lookup", "not-found"), ("encrypt", "plaintext-fallback"),
                ("authorize-send", "allow"),
                ("append", "ok"), ("append", "ok"),
            ]
            trace = StageTrace()
            assert [d.value for d in w.sink("r1", tracer=trace).poll()] == [value(2)]
            assert trace.pairs() == [("authorize-receive", "allow"), ("fetch", "ok"),
                                     ("decrypt", "plaintext"), ("validate", "ok")]
            trace = StageTrace()
            w.source("src", tracer=trace).send(value(3))
            assert ("encrypt", "key-unavailable") in trace.pairs() and "append" not in trace.stages()
        out["detail"] = "encrypted, plaintext-fallback, key-unavailable and missing-private-key branches in order"


# 5 ---------------------------------------------------------------------------

def test_5_ordering_and_retention(tmp_path, capsys):
    with criterion(capsys, "5 ordering and retention") as out:
        b = Broker(tmp_path / "topics")
        b.create_topic("fifo", "retained", ("Score", 1))
        sids = [b.allocate_section("fifo", f"r{i}") for i in range(8)]
        b.set_topic_status("fifo", "ready")
        per_section = 1250

        def appender(sid):
            for n in range(per_section):
                b.append("fifo", sid, make_envelope("fifo", sid, n, payload=f'{{"n":{n}}}'.encode()))

        threads = [threading.Thread(target=appender, args=(sid,)) for sid in sids]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        inversions = total = 0
        for sid in sids:
            recs = section_records(b, "fifo", sid)
            total += len(recs)
            seq = [json.loads(r.envelope.payload)["n"] for r in recs]
            inversions += sum(x >= y for x, y in zip(seq, seq[1:]))
            inversions += [r.offset for r in recs] != list(range(per_section))
        b.close()
        assert total >= 10_000 and inversions == 0
        failures = [m for m in (replay_schedule(s) for s in range(500)) if m]
        assert failures == [], failures[:3]
        out["detail"] = f"{total} records over 8 concurrent sections, 0 inversions; 500/500 schedules match"


# 6 ---------------------------------------------------------------------------

def test_6_clustering_oracle(capsys):
    with criterion(capsys, "6 clustering oracle") as out:
        rng = random.Random(61)
        start = time.perf_counter()
        mismatches = 0
        for _ in range(1000):
            pts, eps, min_pts = random_instance(rng)
            mismatches += dbscan_labels(pts, eps, min_pts) != reference_dbscan(pts, eps, min_pts)
        fixed = four_plus_one()
        fixed_ok = dbscan_labels(fixed, 100, 3) == reference_dbscan(fixed, 100, 3) == [0, 0, 0, 0, -1]
        elapsed = time.perf_counter() - start
        assert mismatches == 0 and fixed_ok and elapsed < 5.0
        out["detail"] = f"1000/1000 random instances and the 4+1 example match in {elapsed:.2f} s"


# 7 ---------------------------------------------------------------------------

def test_7_proximity_oracle(capsys):
    with criterion(capsys, "7 proximity oracle") as out:
        now = 30 * DAY_MS
        rng = random.Random(71)
        instances = bad = 0
        for _ in range(300):
            clusters, users = random_clusters(rng, rng.randint(1, 150))
            confirmed = users[0]
            known = set(users)
            truth = oracle(confirmed, clusters, now)
            back = keys(detect_proximity_backtrace(confirmed, clusters, now, known_tokens=known))
            theirs = [c for c in clusters if c.user_token == confirmed]
            inc = set()
            for c in clusters:
                if c.user_token != confirmed:
                    inc |= keys(detect_proximity_incremental(c, theirs, now))
            instances += 1
            bad += back != truth or inc != truth
        assert bad == 0

        cutoff = now - 7 * DAY_MS
        old = cl("old", "u", t0=cutoff - 5000, t1=cutoff - 1000)
        new = cl("new", "u", t0=cutoff - 5000, t1=cutoff + 1000)
        pts = [GpsPoint("u", 0, 0, cutoff - 1000), GpsPoint("u", 0, 0, cutoff + 1000)]
        kept_c, kept_p, purged = purge_expired([old, new], pts, now)
        assert [c.cluster_id for c in kept_c] == ["new"] and [p.ts for p in kept_p] == [cutoff + 1000]
        assert purged == 2
        out["detail"] = (f"backtrace and incremental equal the all-pairs oracle on {instances} instances; "
                         "now-7d-1s purged, now-7d+1s kept")


# 8 ---------------------------------------------------------------------------

def test_8_lifecycle(platform, capsys):
    with criterion(capsys, "8 lifecycle") as out:
        adm = platform.administrator()
        doc, _ = proposal(topic="other", sender="osrc", receivers=("orecv",))
        adm.propose("idem", doc)
        adm.approve_and_initialise("idem", "admin")
        before = state(platform)
        assert adm.approve_and_initialise("idem", "admin").total_created() == 0
        assert state(platform) == before

        adm, api_keys = working_app(platform, "app1", receivers=("r1", "r2"))
        sections = {r: s for r, s in (("r1", "s0001"), ("r2", "s0002"))}
        SourceConnector(*platform.service_clients("src", api_keys["src"]), "scores", SCORE).send(value(1))
        adm.decommission("app1", "admin", confirm=True)

        attempts = denied = 0
        for name in ("src", "r1", "r2"):
            core, sec = platform.service_clients(name, api_keys[name])
            for n in range(10):
                attempts += 2
                try:
                    SourceConnector(core, sec, "scores", SCORE).send(value(n))
                except AccessDenied:
                    denied += 1
                try:
                    SinkConnector(core, sec, "scores", sections.get(name, "s0001"), SCORE).poll()
                except AccessDenied:
                    denied += 1
        assert denied == attempts
        core = platform.admin_core()
        app_names = set(api_keys)
        assert not [s for s in core.query_services() if s.name in app_names]
        assert not [t for t in core.query_topics() if t.name == "scores"]
        not_found = 0
        for r, sid in sections.items():
            with pytest.raises(KeyNotFound):
                platform.security_client(_cred(r, api_keys)).get_private_key("scores", sid)
            not_found += 1
        out["detail"] = (f"{denied}/{attempts} sends and receives denied, discovery empty for the app, "
                         f"{not_found}/2 private keys not found; re-approval created nothing")


# 9 ---------------------------------------------------------------------------

def test_9_key_cache(platform, capsys):
    with criterion(capsys, "9 key cache") as out:
        clock = FakeClock(1000.0)
        w = wire_topic(platform)
        src = w.source("src", key_cache=cache_with(clock, ttl=60))
        src.send(value(0))
        before = platform.security.stats()["key_lookups"]
        for n in range(100):
            src.send(value(n))
        warm = platform.security.stats()["key_lookups"] - before
        clock.t += 60
        src.send(value(101))
        after_ttl = platform.security.stats()["key_lookups"] - before - warm
        assert warm == 0 and after_ttl == len(w.sections)
        out["detail"] = f"0 lookups over 100 warm sends; {after_ttl} lookups for {len(w.sections)} sections after TTL"


# 10 --------------------------------------------------------------------------

def test_10_desk_scale_budget(tmp_path, capsys):
    with criterion(capsys, "10 desk-scale budget") as out:
        receivers = tuple(f"r{i}" for i in range(8))
        with DeskPlatform(tmp_path / "http", transport="http") as p:
            w = wire_topic(p, topic="bench", receivers=receivers)
            src = w.source("src")
            sinks = [w.sink(r) for r in receivers]
            src.send(value(0))
            for s in sinks:
                drain(s)
            sends = 250
            t0 = time.perf_counter()
            for n in range(sends):
                src.send(value(n))
            appended = sends * len(receivers)
            fetched = sum(len(drain(s)) for s in sinks)
            elapsed = time.perf_counter() - t0
        rate = appended / elapsed
        assert fetched == appended and rate >= 1000

        timings, digests = {}, {}
        for name, runner in (("ai2-mindtick", run_ai2_mindtick), ("proximity", run_proximity)):
            runs = []
            for _ in range(2):
                t0 = time.perf_counter()
                runs.append(runner(ScenarioConfig(seed=7)))
                timings.setdefault(name, []).append(time.perf_counter() - t0)
            digests[name] = {t.digest() for t in runs}
        assert all(max(ts) < 60 for ts in timings.values())
        assert all(len(d) == 1 for d in digests.values())
        out["detail"] = (f"{rate:.0f} encrypted records/s appended and fetched over HTTP; "
                         + ", ".join(f"{n} {max(ts):.1f} s" for n, ts in timings.items())
                         + "; digests equal across two runs")
