"""Questionnaire definitions for multiple studies and validated responses."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from dhlink.errors import InvalidAnswer, UnknownQuestionnaire, ValidationError
from dhlink.services.store import RealtimeStore

SINGLE_CHOICE = "single-choice"
MULTI_CHOICE = "multi-choice"
NUMERIC_SCALE = "numeric-scale"
FREE_TEXT = "free-text"
QUESTION_KINDS = (SINGLE_CHOICE, MULTI_CHOICE, NUMERIC_SCALE, FREE_TEXT)


@dataclass(frozen=True)
class Question:
    qid: str
    text: str
    kind: str
    options: tuple[str, ...] = ()
    min: float | None = None
    max: float | None = None

    def __post_init__(self):
        if self.kind not in QUESTION_KINDS:
            raise ValidationError(f"question {self.qid}: unknown kind {self.kind!r}")
        if self.kind in (SINGLE_CHOICE, MULTI_CHOICE) and not self.options:
            raise ValidationError(f"question {self.qid}: choice questions need options")
        if self.kind == NUMERIC_SCALE and (self.min is None or self.max is None or self.min > self.max):
            raise ValidationError(f"question {self.qid}: numeric scale needs min <= max")

    def check(self, value: Any) -> None:
        def bad(constraint: str):
            raise InvalidAnswer(f"{self.qid}: {constraint}")

        if self.kind == SINGLE_CHOICE:
            if not isinstance(value, str) or value not in self.options:
                bad(f"answer must be one of {list(self.options)}")
        elif self.kind == MULTI_CHOICE:
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                bad("answer must be a list of options")
            if len(set(value)) != len(value):
                bad("options may be chosen once")
            unknown = [v for v in value if v not in self.options]
            if unknown:
                bad(f"not options: {unknown}")
        elif self.kind == NUMERIC_SCALE:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                bad("answer must be a number")
            if not self.min <= value <= self.max:
                bad(f"answer must be within [{self.min:g}, {self.max:g}]")
        elif not isinstance(value, str):
            bad("answer must be text")

    def to_dict(self) -> dict:
        doc = {"qid": self.qid, "text": self.text, "kind": self.kind}
        if self.options:
            doc["options"] = list(self.options)
        if self.kind == NUMERIC_SCALE:
            doc["min"] = self.min
            doc["max"] = self.max
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Question":
        return cls(doc["qid"], doc.get("text", ""), doc["kind"], tuple(doc.get("options", ())),
                   doc.get("min"), doc.get("max"))


@dataclass(frozen=True)
class QuestionnaireDef:
    study_id: str
    questionnaire_id: str
    questions: tuple[Question, ...]

    def __post_init__(self):
        qids = [q.qid for q in self.questions]
        if len(set(qids)) != len(qids):
            raise ValidationError(f"questionnaire {self.questionnaire_id}: duplicate qids")

    def question(self, qid: str) -> Question:
        for q in self.questions:
            if q.qid == qid:
                return q
        raise InvalidAnswer(f"{qid}: not a question of {self.questionnaire_id}")

    def to_dict(self) -> dict:
        return {"studyId": self.study_id, "questionnaireId": self.questionnaire_id,
                "questions": [q.to_dict() for q in self.questions]}

    @classmethod
    def from_dict(cls, doc: dict) -> "QuestionnaireDef":
        try:
            return cls(doc["studyId"], doc["questionnaireId"],
                       tuple(Question.from_dict(q) for q in doc["questions"]))
        except KeyError as exc:
            raise ValidationError(f"questionnaire definition missing {exc.args[0]!r}") from None


@dataclass(frozen=True)
class QuestionnaireResponse:
    user_token: str
    questionnaire_id: str
    answers: tuple[tuple[str, Any], ...]
    submitted_at: int

    def to_dict(self) -> dict:
        return {
            "userToken": self.user_token,
            "questionnaireId": self.questionnaire_id,
            "answers": [{"qid": q, "value": v} for q, v in self.answers],
            "submittedAt": self.submitted_at,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QuestionnaireResponse":
        return cls(doc["userToken"], doc["questionnaireId"],
                   tuple((a["qid"], a["value"]) for a in doc["answers"]), doc["submittedAt"])


class QuestionnaireService:
    """Holds definitions and writes accepted responses to the real-time store."""

    def __init__(self, store: RealtimeStore, definitions=()):
        self.store = store
        self._defs: dict[str, QuestionnaireDef] = {}
        for d in definitions:
            self.register(d)

    def register(self, definition: QuestionnaireDef) -> None:
        self._defs[definition.questionnaire_id] = definition

    def load_dir(self, path) -> int:
        n = 0
        for f in sorted(Path(path).glob("*.json")):
            self.register(QuestionnaireDef.from_dict(json.loads(f.read_text(encoding="utf-8"))))
            n += 1
        return n

    def get(self, questionnaire_id: str) -> QuestionnaireDef:
        try:
            return self._defs[questionnaire_id]
        except KeyError:
            raise UnknownQuestionnaire(f"unknown questionnaire {questionnaire_id!r}") from None

    def definitions(self) -> list[QuestionnaireDef]:
        return [self._defs[k] for k in sorted(self._defs)]

    def validate(self, resp: QuestionnaireResponse) -> None:
        definition = self.get(resp.questionnaire_id)
        seen = set()
        for qid, value in resp.answers:
            if qid in seen:
                raise InvalidAnswer(f"{qid}: answered twice")
            seen.add(qid)
            definition.question(qid).check(value)

    @staticmethod
    def key_for(resp: QuestionnaireResponse) -> str:
        return f"responses/{resp.user_token}/{resp.questionnaire_id}/{resp.submitted_at:015d}"

    def submit(self, resp: QuestionnaireResponse) -> dict:
        """Validate and store; watchers of ``responses/`` see the record."""
        self.validate(resp)
        record = resp.to_dict()
        self.store.put(self.key_for(resp), record)
        return record

    def responses(self, user_token: str | None = None) -> list[QuestionnaireResponse]:
        prefix = f"responses/{user_token}/" if user_token else "responses/"
        return [QuestionnaireResponse.from_dict(doc) for _, doc in self.store.items(prefix)]

    def latest(self, user_token: str) -> QuestionnaireResponse | None:
        found = self.responses(user_token)
        return max(found, key=lambda r: r.submitted_at) if found else None
