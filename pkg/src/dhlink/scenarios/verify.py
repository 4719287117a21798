"""Oracles replayed against a saved transcript.

Nothing here talks to a platform: every check is recomputed from the events
and the configuration stored in the transcript.
"""

from __future__ import annotations

from dataclasses import dataclass

from dhlink.scenarios import ai2_mindtick, proximity
from dhlink.scenarios.common import questionnaire_dir
from dhlink.scenarios.config import DAY_MS, HOUR_MS, ScenarioConfig
from dhlink.scenarios.traces import Plant
from dhlink.scenarios.transcript import Transcript
from dhlink.services.geo import GpsCluster, haversine_m
from dhlink.services.proximity import in_proximity
from dhlink.services.questionnaire import QuestionnaireService
from dhlink.services.store import RealtimeStore


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


def check_integrity(t: Transcript, recorded_digest: str | None = None) -> list[Check]:
    out = []
    times = [e.sim_time for e in t.events]
    out.append(Check("sim-time-monotonic", times == sorted(times)))
    if recorded_digest is not None:
        out.append(Check("digest-matches", recorded_digest == t.digest(), recorded_digest[:16]))
    return out


def check_messages(t: Transcript) -> list[Check]:
    """Every send is received exactly once with the same plaintext digest."""
    sent = {(e.data["topic"], e.data["messageId"]): e for e in t.of("send")}
    received: dict = {}
    dup = 0
    for e in t.of("receive"):
        key = (e.data["topic"], e.data["messageId"])
        dup += key in received
        received[key] = e
    missing = [k for k in sent if k not in received]
    stray = [k for k in received if k not in sent]
    mismatched = [k for k, e in sent.items() if k in received and received[k].digest != e.digest]
    plain = [k for k, e in received.items() if not e.data.get("encrypted", False)]
    ids = [(e.actor, e.data["messageId"]) for e in t.of("send")]
    reused = len(ids) - len(set(ids))
    return [
        Check("message-ids-unique", not reused, f"{reused} ids reused by the same sender"),
        Check("messages-delivered", not missing and not stray and not dup,
              f"{len(sent)} sent, {len(missing)} missing, {len(stray)} stray, {dup} duplicate"),
        Check("plaintext-roundtrip", not mismatched, f"{len(sent) - len(mismatched)}/{len(sent)} match"),
        Check("payloads-encrypted", not plain or bool(t.config.get("plaintextFallback")),
              f"{len(plain)} unencrypted deliveries"),
    ]


# -- AI2 + MINDtick ----------------------------------------------------------

def check_ai2(t: Transcript) -> list[Check]:
    cfg = ScenarioConfig.from_dict(t.config)
    history = t.of("refill-history")[0].data
    threshold = history["thresholdMs"]
    ticks = list(cfg.ticks())
    expected = {}
    for token, last in history["lastRefill"].items():
        first = next((tick for tick in ticks if tick - last > threshold), None)
        if first is not None:
            expected[token] = first
    got: dict[str, list[int]] = {}
    for e in t.of("anomaly"):
        got.setdefault(e.data["userToken"], []).append(e.sim_time)
    rule_ok = set(got) == set(expected) and all(got[k] == [expected[k]] for k in expected)

    nudges = {}
    for e in t.of("nudge"):
        nudges.setdefault(e.data["userToken"], []).append(e)
    late = [k for k, when in expected.items()
            if not any(0 <= n.sim_time - when <= cfg.tick_ms for n in nudges.get(k, []))]

    defs = QuestionnaireService(RealtimeStore())
    defs.load_dir(questionnaire_dir())
    submits = {}
    for e in t.of("submit"):
        submits.setdefault(e.data["userToken"], []).append(e)
    misquoted = []
    for token, ns in nudges.items():
        alert_time = got.get(token, [None])[0]
        for n in ns:
            authored = n.data.get("responseAuthored")
            if authored is None:
                if any(s.sim_time <= alert_time for s in submits.get(token, [])):
                    misquoted.append(token)
                continue
            match = [s for s in submits.get(token, [])
                     if s.data["submittedAt"] == authored
                     and s.data["questionnaireId"] == n.data["responseQuestionnaireId"]]
            latest = max((s.data["submittedAt"] for s in submits.get(token, []) if s.sim_time <= alert_time),
                         default=None)
            if not match or latest != authored:
                misquoted.append(token)
                continue
            wire = ai2_mindtick.to_wire(match[0].data, defs.get(match[0].data["questionnaireId"]))
            if f"\"{ai2_mindtick.summarise(wire)}\"" not in n.data["text"]:
                misquoted.append(token)
    return [
        Check("refill-rule-replay", rule_ok, f"{len(expected)} expected, {sum(map(len, got.values()))} raised"),
        Check("nudge-liveness", not late, f"{len(late)} alerts without a nudge within one tick"),
        Check("nudge-quotes-response", not misquoted, f"{len(misquoted)} nudges misquote the stored response"),
    ]


# -- proximity --------------------------------------------------------------

def _oracle_pairs(clusters: dict, confirmed: set, now: int, window_ms: int, dist_m: float,
                  slack_s: float) -> set:
    cutoff = now - window_ms
    live = [c for c in clusters.values() if c.t_end >= cutoff]
    return {(s.cluster_id, c.cluster_id) for c in live if c.user_token in confirmed
            for s in live if s.user_token != c.user_token and in_proximity(s, c, dist_m, slack_s)}


def _plant_guaranteed(p: Plant, cfg: ScenarioConfig) -> bool:
    """Whether the construction forces an alert for this plant."""
    step = cfg.point_interval_s * 1000
    batch = cfg.batch_hours * HOUR_MS
    window = int(cfg.window_days * DAY_MS)
    samples = [ts for ts in range(cfg.start_ms, cfg.end_ms, step) if p.start_ms <= ts <= p.end_ms]
    groups: dict[int, list[int]] = {}
    for ts in samples:
        groups.setdefault((ts - cfg.start_ms) // batch, []).append(ts)
    for k, members in groups.items():
        formed = cfg.start_ms + (k + 1) * batch
        if len(members) >= cfg.min_pts and formed <= cfg.end_ms \
                and max(members) >= max(cfg.confirm_at_ms, formed) - window:
            return True
    return False


def check_proximity(t: Transcript) -> list[Check]:
    cfg = ScenarioConfig.from_dict(t.config)
    window_ms = int(cfg.window_days * DAY_MS)
    clusters: dict[str, GpsCluster] = {}
    confirmed: set[str] = set()
    expected: set = set()
    for e in t.events:
        if e.action == "cluster":
            c = GpsCluster.from_dict(e.data)
            clusters[c.cluster_id] = c
        elif e.action == "purge":
            clusters = {k: c for k, c in clusters.items() if c.t_end >= e.data["cutoff"]}
        elif e.action == "confirm":
            confirmed.add(e.data["userToken"])
        if e.action in ("confirm", "batch") and confirmed:
            expected |= _oracle_pairs(clusters, confirmed, e.sim_time, window_ms, cfg.dist_m, cfg.slack_s)
    alerts = [e.data for e in t.of("alert")]
    got = {(a["subjectClusterId"], a["confirmedClusterId"]) for a in alerts}
    t_end = {e.data["clusterId"]: e.data["tEnd"] for e in t.of("cluster")}
    stale = [a["alertId"] for a in alerts
             if min(t_end[a["subjectClusterId"]], t_end[a["confirmedClusterId"]]) < a["createdAt"] - window_ms]
    too_far = [a["alertId"] for a in alerts if a["distanceMeters"] > cfg.dist_m]

    tokens = {e.data["index"]: e.data["userToken"] for e in t.of("enrol")}
    plants = [Plant(p["a"], p["b"], p["lat"], p["lon"], p["startMs"], p["endMs"])
              for p in t.of("plants")[0].data["plants"]]
    ctoken = tokens[cfg.confirm_user]
    pairs = {(a["subjectToken"], a["confirmedToken"]) for a in alerts}
    missing_plants = []
    for p in plants:
        if cfg.confirm_user in (p.a, p.b) and _plant_guaranteed(p, cfg):
            other = tokens[p.b if p.a == cfg.confirm_user else p.a]
            if (other, ctoken) not in pairs:
                missing_plants.append(p.to_dict())
    index = {v: k for k, v in tokens.items()}
    unplanted = []
    for s, c in pairs:
        i, j = index[s], index[c]
        linked = any({i, j} == {p.a, p.b} for p in plants) or any(
            i in (p.a, p.b) and j in (q.a, q.b) and haversine_m(p.lat, p.lon, q.lat, q.lon) <= cfg.dist_m
            for p in plants for q in plants)
        if not linked:
            unplanted.append((s, c))
    return [
        Check("proximity-oracle", got == expected,
              f"{len(got)} raised, {len(expected)} expected, {len(got - expected)} extra, "
              f"{len(expected - got)} missed"),
        Check("retention-safety", not stale, f"{len(stale)} alerts reference expired clusters"),
        Check("distance-bound", not too_far),
        Check("planted-alerts", not missing_plants, f"{len(missing_plants)} guaranteed plant alerts missing"),
        Check("no-unplanted-alerts", not unplanted, f"{len(unplanted)} alerts between users who never met"),
    ]


def verify_transcript(t: Transcript, recorded_digest: str | None = None) -> list[Check]:
    checks = check_integrity(t, recorded_digest) + check_messages(t)
    if t.scenario == ai2_mindtick.SCENARIO:
        checks += check_ai2(t)
    elif t.scenario == proximity.SCENARIO:
        checks += check_proximity(t)
    else:
        checks.append(Check("known-scenario", False, t.scenario))
    return checks
