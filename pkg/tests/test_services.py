import json
import secrets
import threading

import pytest

from dhlink.errors import (
    AccessDenied,
    BadCredential,
    DuplicateUser,
    InvalidAnswer,
    UnknownQuestionnaire,
    ValidationError,
)
from dhlink.services import (
    GpsPoint,
    ProximityService,
    Question,
    QuestionnaireDef,
    QuestionnaireResponse,
    QuestionnaireService,
    RealtimeStore,
    UserService,
    WatcherOverflow,
    deid_token,
)

SECRET = b"0123456789abcdef-test-secret"


# -- real-time store -------------------------------------------------------------

def test_put_get_delete(tmp_path):
    store = RealtimeStore(tmp_path / "s.jsonl")
    store.put("a/b", {"x": 1})
    assert store.get("a/b") == {"x": 1}
    assert store.delete("a/b") and not store.delete("a/b")
    assert store.get("a/b") is None
    with pytest.raises(ValidationError):
        store.put("", 1)
    with pytest.raises(TypeError):
        store.put("k", {1, 2})


def test_put_is_durable_and_replayed(tmp_path):
    path = tmp_path / "s.jsonl"
    store = RealtimeStore(path)
    for i in range(5):
        store.put(f"k/{i}", i)
    store.delete("k/0")
    # no close: the log is flushed on every commit
    again = RealtimeStore(path)
    assert again.keys("k/") == ["k/1", "k/2", "k/3", "k/4"]
    assert again.seq == 6
    again.compact()
    assert len(path.read_text().splitlines()) == 4
    assert RealtimeStore(path).get("k/4") == 4


def test_watcher_gets_changes_in_order():
    store = RealtimeStore()
    w = store.watch("resp/")
    store.put("resp/1", "a")
    store.put("other", "x")
    store.put("resp/2", "b")
    store.delete("resp/1")
    got = w.drain()
    assert [(c.op, c.key, c.value) for c in got] == [("put", "resp/1", "a"), ("put", "resp/2", "b"),
                                                     ("delete", "resp/1", None)]
    assert [c.seq for c in got] == sorted(c.seq for c in got)
    assert w.drain() == [] and w.get(timeout=0.01) is None


def test_two_watchers_identical_under_concurrent_writers():
    store = RealtimeStore()
    a, b = store.watch("x/"), store.watch("x/")

    def writer(n):
        for i in range(500):
            store.put(f"x/{n}/{i}", i)

    threads = [threading.Thread(target=writer, args=(n,)) for n in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    fa, fb = a.drain(), b.drain()
    assert len(fa) == 2000 and fa == fb
    assert [c.seq for c in fa] == list(range(1, 2001))


def test_overflow_detaches_only_the_slow_watcher():
    store = RealtimeStore()
    slow = store.watch("", capacity=2)
    fine = store.watch("")
    for i in range(5):
        store.put(f"k{i}", i)
    assert len(fine.drain()) == 5
    assert len(slow.drain()) == 2
    with pytest.raises(WatcherOverflow):
        slow.drain()
    store.put("after", 1)
    assert [c.key for c in fine.drain()] == ["after"]


def test_closed_watcher_stops_receiving():
    store = RealtimeStore()
    w = store.watch("")
    w.close()
    store.put("k", 1)
    assert w.drain() == []


# -- questionnaires --------------------------------------------------------------

MOOD = QuestionnaireDef("study-1", "mood", (
    Question("q1", "How do you feel?", "numeric-scale", min=0, max=10),
    Question("q2", "Sleep", "single-choice", options=("good", "bad")),
    Question("q3", "Symptoms", "multi-choice", options=("cough", "fever")),
    Question("q4", "Notes", "free-text"),
))


def resp(*answers, qid="mood", user="tok-1", at=1000):
    return QuestionnaireResponse(user, qid, tuple(answers), at)


def test_valid_response_is_stored_and_watched():
    store = RealtimeStore()
    w = store.watch("responses/")
    svc = QuestionnaireService(store, [MOOD])
    record = svc.submit(resp(("q1", 5), ("q2", "good"), ("q3", ["cough"]), ("q4", "ok")))
    assert record["userToken"] == "tok-1"
    (change,) = w.drain()
    assert change.key == "responses/tok-1/mood/000000000001000"
    assert svc.responses("tok-1")[0] == resp(("q1", 5), ("q2", "good"), ("q3", ["cough"]), ("q4", "ok"))


@pytest.mark.parametrize("answer, needle", [
    (("q1", 11), "q1"),
    (("q1", -0.5), "q1"),
    (("q1", True), "number"),
    (("q2", "meh"), "one of"),
    (("q3", ["cough", "cough"]), "once"),
    (("q3", ["rash"]), "rash"),
    (("q4", 3), "text"),
    (("q9", 1), "q9"),
])
def test_invalid_answers(answer, needle):
    svc = QuestionnaireService(RealtimeStore(), [MOOD])
    with pytest.raises(InvalidAnswer) as err:
        svc.submit(resp(answer))
    assert needle in str(err.value)
    assert svc.responses() == []


def test_scale_bounds_inclusive():
    svc = QuestionnaireService(RealtimeStore(), [MOOD])
    svc.submit(resp(("q1", 0), at=1))
    svc.submit(resp(("q1", 10), at=2))
    assert svc.latest("tok-1").submitted_at == 2


def test_unknown_questionnaire_and_duplicate_answer():
    svc = QuestionnaireService(RealtimeStore(), [MOOD])
    with pytest.raises(UnknownQuestionnaire):
        svc.submit(resp(("q1", 1), qid="nope"))
    with pytest.raises(InvalidAnswer):
        svc.submit(resp(("q1", 1), ("q1", 2)))


def test_definitions_load_from_directory(tmp_path):
    (tmp_path / "mood.json").write_text(json.dumps(MOOD.to_dict()))
    other = QuestionnaireDef("study-2", "sleep", (Question("s", "", "free-text"),))
    (tmp_path / "sleep.json").write_text(json.dumps(other.to_dict()))
    svc = QuestionnaireService(RealtimeStore())
    assert svc.load_dir(tmp_path) == 2
    assert svc.definitions() == [MOOD, other]


@pytest.mark.parametrize("kw", [
    dict(qid="a", text="", kind="slider"),
    dict(qid="a", text="", kind="single-choice"),
    dict(qid="a", text="", kind="numeric-scale", min=5, max=1),
])
def test_bad_questions(kw):
    with pytest.raises(ValidationError):
        Question(**kw)


# -- users and deidentification ----------------------------------------------------

def test_token_is_stable_and_keyed():
    assert deid_token(SECRET, "u-1") == deid_token(SECRET, "u-1")
    assert deid_token(SECRET, "u-1") != deid_token(b"another-secret-16b", "u-1")
    assert len(deid_token(SECRET, "u-1")) == 32


def test_no_collisions_over_ten_thousand_users():
    ids = {secrets.token_hex(8) for _ in range(10_000)}
    tokens = {deid_token(SECRET, i) for i in ids}
    assert len(tokens) == len(ids)


def test_register_authenticate(tmp_path):
    users = UserService(SECRET, tmp_path / "users.json", iterations=1000)
    uid = users.register_user("Alice Example", "pw", roles=("patient",))
    with pytest.raises(DuplicateUser):
        users.register_user("Alice Example", "other")
    with pytest.raises(ValidationError):
        users.register_user("", "pw")
    session = users.authenticate_user("Alice Example", "pw")
    assert session.user_id == uid and session.deid_token == users.deidentify(uid)
    session.require_role("patient")
    with pytest.raises(AccessDenied):
        session.require_role("clinician")
    with pytest.raises(BadCredential):
        users.authenticate_user("Alice Example", "wrong")
    with pytest.raises(BadCredential):
        users.authenticate_user("Nobody", "pw")
    text = (tmp_path / "users.json").read_text()
    assert '"pw"' not in text
    assert UserService(SECRET, tmp_path / "users.json").get(uid).display_name == "Alice Example"


def test_shared_stores_carry_no_profile_fields(tmp_path):
    users = UserService(SECRET, iterations=1000)
    names = [f"Person Number{i}" for i in range(20)]
    uids = [users.register_user(n, "pw") for n in names]
    store = RealtimeStore(tmp_path / "shared.jsonl")
    qs = QuestionnaireService(store, [MOOD])
    prox = ProximityService(store)
    for i, uid in enumerate(uids):
        token = users.deidentify(uid)
        qs.submit(resp(("q1", i % 10), user=token, at=i))
        prox.add_points([GpsPoint(token, 1.0, 2.0, i)])
    store.close()
    dump = (tmp_path / "shared.jsonl").read_text()
    assert not any(n in dump for n in names)
    assert not any(uid in dump for uid in uids)


def test_short_secret_rejected():
    with pytest.raises(ValidationError):
        UserService(b"short")
