"""AI2 + MINDtick collaboration.

MINDtick patients answer daily questionnaires; every stored response is
forwarded on ``responses`` to AI2. AI2 watches prescription refills and, when
a patient's refill is overdue, sends an alert carrying the patient's latest
response summary on ``anomaly-alerts``. MINDtick turns each alert into a
nudge and adds an adherence questionnaire to that patient's routine.

The refill rule and the nudge wording are minimal stand-ins, not clinical logic.
"""

from __future__ import annotations

import hashlib
import random

from dhlink.scenarios.common import (
    PlatformHandle,
    SimClock,
    WallTimer,
    provision_app,
    questionnaire_dir,
    receive_logged,
    send_logged,
)
from dhlink.scenarios.config import DAY_MS, HOUR_MS, ScenarioConfig
from dhlink.scenarios.transcript import Transcript
from dhlink.services.questionnaire import (
    MULTI_CHOICE,
    NUMERIC_SCALE,
    SINGLE_CHOICE,
    QuestionnaireDef,
    QuestionnaireResponse,
    QuestionnaireService,
)
from dhlink.services.store import RealtimeStore
from dhlink.services.users import UserService

SCENARIO = "ai2-mindtick"
APP_ID = "ai2-mindtick"
MINDTICK = "mindtick-app"
AI2 = "ai2-analytics"
RESPONSES = "responses"
ALERTS = "anomaly-alerts"
DAILY = "mindtick-daily"
ADHERENCE = "mindtick-adherence"
MISSED_REFILL = "missed-refill"

NOTES = ("slept late", "busy week", "feeling ok", "long shift", "visited family", "")

SERVICES = {
    MINDTICK: "MINDtick patient app backend: questionnaires and nudges",
    AI2: "AI2 analytics: prescription refill anomalies",
}
TOPICS = [
    {"name": RESPONSES, "description": "questionnaire responses", "policy": "retained",
     "schema": {"name": "QuestionnaireResponse", "version": 1}, "senders": [MINDTICK], "receivers": [AI2]},
    {"name": ALERTS, "description": "refill anomalies with response context", "policy": "retained",
     "schema": {"name": "DetectedIssue", "version": 1}, "senders": [AI2], "receivers": [MINDTICK]},
]
SCHEMA_FILES = ["questionnaire-response.json", "detected-issue.json"]


def to_wire(resp: dict, definition: QuestionnaireDef) -> dict:
    """Store form of a response to the topic's record shape."""
    items = []
    for a in resp["answers"]:
        kind = definition.question(a["qid"]).kind
        if kind == NUMERIC_SCALE:
            items.append({"linkId": a["qid"], "valueDecimal": a["value"]})
        elif kind == MULTI_CHOICE:
            items.append({"linkId": a["qid"], "valueCoding": list(a["value"])})
        else:
            items.append({"linkId": a["qid"], "valueString": a["value"]})
    return {"userToken": resp["userToken"], "questionnaireId": resp["questionnaireId"],
            "authored": resp["submittedAt"], "item": items}


def summarise(wire: dict) -> str:
    """AI2's reading of one response: ``qid=value`` pairs in question order."""
    parts = []
    for item in wire["item"]:
        if "valueDecimal" in item:
            value = f"{item['valueDecimal']:g}"
        elif "valueCoding" in item:
            value = "+".join(item["valueCoding"]) or "none"
        else:
            value = item.get("valueString") or "-"
        parts.append(f"{item['linkId']}={value}")
    return "; ".join(parts)


def nudge_text(alert: dict, refill_interval_days: float) -> str:
    overdue = alert["refillGapDays"] - refill_interval_days
    return (f"Your prescription refill is {overdue:.0f} days overdue. "
            f"Last check-in: \"{alert['responseSummary']}\"")


def answer(rng: random.Random, definition: QuestionnaireDef) -> list[dict]:
    out = []
    for q in definition.questions:
        if q.kind == NUMERIC_SCALE:
            value = rng.randint(int(q.min), int(q.max))
        elif q.kind == SINGLE_CHOICE:
            value = rng.choice(q.options)
        elif q.kind == MULTI_CHOICE:
            chosen = set(rng.sample(q.options, rng.randint(0, 2)))
            value = [o for o in q.options if o in chosen]
        else:
            value = rng.choice(NOTES)
        out.append({"qid": q.qid, "value": value})
    return out


class Ai2MindtickRun:
    """One run; keeps the stores and platform handles around for inspection."""

    def __init__(self, cfg: ScenarioConfig, platform=None, app_id: str = APP_ID):
        self.cfg = cfg
        self.app_id = app_id
        self.handle = PlatformHandle(cfg, platform)
        self.platform = self.handle.platform
        self.transcript = Transcript(SCENARIO, cfg.semantic_dict())
        self.clock = SimClock(cfg.start_ms)
        services_dir = getattr(self.platform, "data_dir", None)
        store_path = services_dir / "services" / f"{app_id}-store.jsonl" if services_dir else None
        self.store = RealtimeStore(store_path)
        self.questionnaires = QuestionnaireService(self.store)
        self.questionnaires.load_dir(questionnaire_dir())
        secret = hashlib.sha256(f"mindtick-deid/{cfg.seed}".encode()).digest()
        self.users = UserService(secret, iterations=1000)

    def close(self) -> None:
        self.store.close()
        self.handle.close()

    # -- setup ----------------------------------------------------------------

    def _setup(self) -> None:
        cfg = self.cfg
        t = self.transcript
        self.app = provision_app(self.platform, self.app_id, SERVICES, TOPICS, SCHEMA_FILES)
        self.tokens = []
        self.due = {}
        self.last_refill = {}
        for i in range(cfg.user_count):
            uid = self.users.register_user(f"Patient {i:02d}", f"pw-{cfg.seed}-{i}", ("patient",),
                                           user_id=f"patient-{i:02d}")
            token = self.users.deidentify(uid)
            self.tokens.append(token)
            rng = random.Random(f"{cfg.seed}/patient/{i}")
            self.due[token] = cfg.start_ms + rng.randint(7, 21) * HOUR_MS
            if i in cfg.refill_gap_at_end_days:
                self.last_refill[token] = cfg.end_ms - int(cfg.refill_gap_at_end_days[i] * DAY_MS)
            else:
                self.last_refill[token] = cfg.start_ms - rng.randint(0, int(cfg.max_refill_age_days * 24)) * HOUR_MS
            t.record(cfg.start_ms, "mindtick-app", "enrol", userToken=token)
        t.record(cfg.start_ms, AI2, "refill-history", lastRefill=dict(self.last_refill),
                 thresholdMs=int((cfg.refill_interval_days + cfg.grace_days) * DAY_MS))

        clock = self.clock
        self.resp_out = self.app.source(self.platform, MINDTICK, RESPONSES, clock,
                                        plaintext_fallback=cfg.plaintext_fallback)
        self.resp_in = self.app.sink(self.platform, AI2, RESPONSES)
        self.alert_out = self.app.source(self.platform, AI2, ALERTS, clock,
                                         plaintext_fallback=cfg.plaintext_fallback)
        self.alert_in = self.app.sink(self.platform, MINDTICK, ALERTS)
        self.watch = self.store.watch("responses/")
        self.latest: dict[str, dict] = {}
        self.alerted: set[str] = set()

    # -- actors, in the order they act on each tick ----------------------------

    def _patients(self, now: int) -> None:
        for i, token in enumerate(self.tokens):
            if now < self.due[token]:
                continue
            day = (self.due[token] - self.cfg.start_ms) // DAY_MS
            self.due[token] += DAY_MS
            rng = random.Random(f"{self.cfg.seed}/answers/{i}/{day}")
            qids = [DAILY]
            if self.store.get(f"customisations/{token}") is not None:
                qids.append(ADHERENCE)
            for qid in qids:
                resp = QuestionnaireResponse.from_dict({
                    "userToken": token, "questionnaireId": qid, "submittedAt": now,
                    "answers": answer(rng, self.questionnaires.get(qid)),
                })
                record = self.questionnaires.submit(resp)
                self.transcript.record(now, f"patient/{token}", "submit", record, **record)
                self.transcript.bump("responsesSubmitted")

    def _forwarder(self, now: int) -> None:
        # update-triggered forwarding: every committed response goes out on the topic
        for change in self.watch.drain():
            if change.op != "put":
                continue
            definition = self.questionnaires.get(change.value["questionnaireId"])
            send_logged(self.transcript, self.resp_out, MINDTICK, now, to_wire(change.value, definition))

    def _ai2(self, now: int) -> None:
        cfg = self.cfg
        for d in receive_logged(self.transcript, self.resp_in, AI2, now):
            resp = d.value
            prev = self.latest.get(resp["userToken"])
            if prev is None or resp["authored"] >= prev["authored"]:
                self.latest[resp["userToken"]] = {"authored": resp["authored"],
                                                  "questionnaireId": resp["questionnaireId"],
                                                  "summary": summarise(resp)}
        threshold = (cfg.refill_interval_days + cfg.grace_days) * DAY_MS
        for token in sorted(self.tokens):
            gap = now - self.last_refill[token]
            if token in self.alerted or gap <= threshold:
                continue
            self.alerted.add(token)
            alert = {"userToken": token, "code": MISSED_REFILL, "identified": now,
                     "refillGapDays": gap / DAY_MS, "lastRefill": self.last_refill[token]}
            latest = self.latest.get(token)
            if latest is None:
                alert["responseSummary"] = "no check-in on record"
            else:
                alert.update(responseSummary=latest["summary"], responseAuthored=latest["authored"],
                             responseQuestionnaireId=latest["questionnaireId"])
            self.transcript.record(now, AI2, "anomaly", alert, userToken=token, gapDays=alert["refillGapDays"])
            self.transcript.bump("anomalyAlerts")
            send_logged(self.transcript, self.alert_out, AI2, now, alert)

    def _mindtick_alerts(self, now: int) -> None:
        for d in receive_logged(self.transcript, self.alert_in, MINDTICK, now):
            alert = d.value
            token = alert["userToken"]
            nudge = {"userToken": token, "createdAt": now, "alertMessageId": d.message_id,
                     "text": nudge_text(alert, self.cfg.refill_interval_days)}
            if "responseAuthored" in alert:
                nudge["responseAuthored"] = alert["responseAuthored"]
                nudge["responseQuestionnaireId"] = alert["responseQuestionnaireId"]
            self.store.put(f"nudges/{token}/{now:015d}", nudge)
            self.transcript.record(now, MINDTICK, "nudge", nudge, **nudge)
            self.transcript.bump("nudges")
            custom = {"userToken": token, "add": ADHERENCE, "since": now, "reason": alert["code"]}
            if self.store.get(f"customisations/{token}") is None:
                self.store.put(f"customisations/{token}", custom)
                self.transcript.record(now, MINDTICK, "customise", custom, **custom)
                self.transcript.bump("customisations")

    # -- driver ---------------------------------------------------------------

    def run(self) -> Transcript:
        timer = WallTimer()
        try:
            self._setup()
            for now in self.cfg.ticks():
                self.clock.now = now
                self._patients(now)
                self._forwarder(now)
                self._ai2(now)
                self._mindtick_alerts(now)
            self.transcript.record(self.cfg.end_ms, "harness", "end", endMs=self.cfg.end_ms)
        finally:
            self.transcript.finish(timer.elapsed())
        return self.transcript


def run_ai2_mindtick(cfg: ScenarioConfig, platform=None) -> Transcript:
    run = Ai2MindtickRun(cfg, platform)
    try:
        return run.run()
    finally:
        run.close()
