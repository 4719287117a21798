"""Error types shared by every DHLink component.

Each error carries a stable ``code`` string (used on the wire) and an HTTP
status. Clients rebuild the matching exception from ``{"error": code}``.
"""

from __future__ import annotations


class DHLinkError(Exception):
    code = "error"
    status = 400

    def __init__(self, detail: str = "", code: str | None = None):
        super().__init__(detail or (code or self.code))
        if code is not None:
            self.code = code
        self.detail = detail

    def to_dict(self) -> dict:
        return {"error": self.code, "detail": self.detail}


class ValidationError(DHLinkError):
    code = "validation-error"
    status = 422


class NotFound(DHLinkError):
    code = "not-found"
    status = 404


class Conflict(DHLinkError):
    code = "conflict"
    status = 409


class StateError(DHLinkError):
    code = "state-error"
    status = 409


class AccessDenied(DHLinkError):
    code = "deny"
    status = 403


class AuthenticationFailed(AccessDenied):
    code = "bad-credential"
    status = 401


class ConnectivityError(DHLinkError):
    code = "endpoint-unreachable"
    status = 503


# -- specific errors -------------------------------------------------------

class SchemaViolation(ValidationError):
    code = "schema-violation"

    def __init__(self, detail: str = "", violations=None):
        super().__init__(detail)
        self.violations = list(violations or [])


class InvalidSchema(ValidationError):
    code = "invalid-schema"


class EncodingError(ValidationError):
    code = "non-encodable"


class MalformedEnvelope(ValidationError):
    code = "malformed-envelope"


class EnvelopeMismatch(ValidationError):
    code = "envelope-mismatch"


class UnknownTopic(NotFound):
    code = "unknown-topic"


class UnknownSection(NotFound):
    code = "unknown-section"


class UnknownSchema(NotFound):
    code = "unknown-schema"


class UnknownName(NotFound):
    code = "unknown-name"


class UnknownService(AuthenticationFailed):
    code = "unknown-service"


class BadCredential(AuthenticationFailed):
    code = "bad-credential"


class DuplicateName(Conflict):
    code = "duplicate-name"


class DuplicateEntry(Conflict):
    code = "duplicate-entry"


class UnknownEntry(NotFound):
    code = "unknown-entry"


class ActiveKeyExists(Conflict):
    code = "active-key-exists"


class KeyNotFound(NotFound):
    code = "not-found"


class TopicRetired(StateError):
    code = "topic-retired"


class TopicNotReady(StateError):
    code = "topic-not-ready"


class IllegalTransition(StateError):
    code = "illegal-transition"


class WrongState(StateError):
    code = "wrong-state"


class NotConfirmed(StateError):
    code = "not-confirmed"


class NotAdmin(AccessDenied):
    code = "not-admin"


class NotSectionOwner(AccessDenied):
    code = "not-section-owner"


class Unauthorized(AccessDenied):
    code = "unauthorized"


class KeyUnavailable(DHLinkError):
    code = "key-unavailable"
    status = 404


class DecryptFailure(DHLinkError):
    code = "decrypt-failure"
    status = 400


class DuplicateApp(Conflict):
    code = "duplicate-app"


class MalformedProposal(ValidationError):
    code = "malformed-proposal"


class PartialFailure(DHLinkError):
    code = "partial-failure"
    status = 500

    def __init__(self, detail: str = "", report=None):
        super().__init__(detail)
        self.report = report


class ConnectivityCheckFailed(ConnectivityError):
    code = "connectivity-check-failed"


class BrokerUnreachable(ConnectivityError):
    code = "broker-unreachable"


class SetupIncomplete(StateError):
    code = "setup-incomplete"


class MixedUserInput(ValidationError):
    code = "mixed-user-input"


class UnknownConfirmedToken(NotFound):
    code = "unknown-confirmed-token"


class UnknownQuestionnaire(NotFound):
    code = "unknown-questionnaire"


class InvalidAnswer(ValidationError):
    code = "invalid-answer"


class DuplicateUser(Conflict):
    code = "duplicate-user"


class InfeasiblePlant(ValidationError):
    code = "infeasible-plant"


def _collect(cls, out):
    for sub in cls.__subclasses__():
        out[sub.code] = sub
        _collect(sub, out)
    return out


_BY_CODE: dict[str, type[DHLinkError]] = {}


def error_for(code: str, detail: str = "", status: int | None = None) -> DHLinkError:
    """Rebuild an exception from its wire code."""
    if not _BY_CODE:
        _collect(DHLinkError, _BY_CODE)
    cls = _BY_CODE.get(code)
    if cls is None:
        err = DHLinkError(detail, code=code)
        if status:
            err.status = status
        return err
    return cls(detail)
