"""FastAPI applications exposing the core (broker + discovery) and security services."""

from __future__ import annotations

import base64
import json
import logging

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, Response

from dhlink.auth import Credentials, require_admin
from dhlink.core import CoreService, RemoteAccess
from dhlink.discovery import SERVICE, TOPIC, MicroserviceInfo, TopicInfo
from dhlink.envelope import parse_envelope
from dhlink.errors import DHLinkError, ValidationError
from dhlink.schema import DataSchema
from dhlink.security.acl import AccessControlEntry
from dhlink.security.service import SecurityService

log = logging.getLogger(__name__)

_KINDS = {"topics": TOPIC, "services": SERVICE}


def _error_response(request: Request, exc: DHLinkError) -> JSONResponse:
    return JSONResponse(exc.to_dict(), status_code=exc.status)


async def _json(request: Request) -> dict:
    body = await request.body()
    if not body:
        return {}
    try:
        doc = json.loads(body)
    except ValueError:
        raise ValidationError("request body is not JSON") from None
    if not isinstance(doc, dict):
        raise ValidationError("request body must be a JSON object")
    return doc


def _field(doc: dict, name: str):
    try:
        return doc[name]
    except KeyError:
        raise ValidationError(f"missing field {name!r}") from None


def _int_param(request: Request, name: str, default: int) -> int:
    raw = request.query_params.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"query parameter {name} must be an integer") from None


def _kind(kind: str) -> str:
    try:
        return _KINDS[kind]
    except KeyError:
        raise ValidationError(f"unknown discovery kind {kind!r}") from None


def _no_content() -> Response:
    return Response(status_code=204)


def create_core_app(core: CoreService) -> FastAPI:
    app = FastAPI(title="DHLink core", docs_url=None, redoc_url=None)
    app.add_exception_handler(DHLinkError, _error_response)
    blocking = isinstance(core.access, RemoteAccess)

    async def call(fn, *args):
        # remote access makes blocking HTTP calls; keep them off the event loop
        if blocking:
            return await run_in_threadpool(fn, *args)
        return fn(*args)

    def cred(request: Request) -> Credentials:
        return Credentials.from_headers(request.headers)

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "component": "core"}

    @app.post("/v1/topics", status_code=201)
    async def create_topic(request: Request):
        doc = await _json(request)
        schema = _field(doc, "schema")
        if not isinstance(schema, dict):
            raise ValidationError("schema must be an object with name and version")
        return await call(core.create_topic, cred(request), _field(doc, "name"), _field(doc, "policy"),
                          (schema.get("name"), schema.get("version")), doc.get("config"))

    @app.get("/v1/topics")
    async def list_topics(request: Request):
        return {"topics": await call(core.list_topics, cred(request))}

    @app.get("/v1/topics/{name}")
    async def describe_topic(name: str, request: Request):
        return await call(core.describe_topic, cred(request), name)

    @app.delete("/v1/topics/{name}")
    async def delete_topic(name: str, request: Request):
        await call(core.delete_topic, cred(request), name)
        return _no_content()

    @app.put("/v1/topics/{name}/status")
    async def topic_status(name: str, request: Request):
        doc = await _json(request)
        await call(core.set_topic_status, cred(request), name, _field(doc, "status"))
        return {"name": name, "status": doc["status"]}

    @app.post("/v1/topics/{name}/retention")
    async def retention(name: str, request: Request):
        doc = await _json(request)
        return {"purged": await call(core.enforce_retention, cred(request), name, doc.get("now"))}

    @app.post("/v1/topics/{name}/sections", status_code=201)
    async def allocate(name: str, request: Request):
        doc = await _json(request)
        return {"sectionId": await call(core.allocate_section, cred(request), name, _field(doc, "receiverId"))}

    @app.delete("/v1/topics/{name}/sections/{sid}")
    async def remove_section(name: str, sid: str, request: Request):
        await call(core.remove_section, cred(request), name, sid)
        return _no_content()

    @app.post("/v1/topics/{name}/sections/{sid}/records", status_code=201)
    async def append(name: str, sid: str, request: Request):
        envelope = parse_envelope(await request.body())
        return {"offset": await call(core.append, cred(request), name, sid, envelope)}

    @app.get("/v1/topics/{name}/sections/{sid}/records")
    async def fetch(name: str, sid: str, request: Request):
        records = await call(core.fetch, cred(request), name, sid,
                             _int_param(request, "offset", 0), _int_param(request, "max", 100))
        return {"records": [r.to_dict() for r in records]}

    @app.post("/v1/discovery/schemas", status_code=201)
    async def register_schema(request: Request):
        schema = DataSchema.from_dict(await _json(request))
        await call(core.register_schema, cred(request), schema)
        return schema.to_dict()

    @app.get("/v1/discovery/schemas/{name}/{version}")
    async def get_schema(name: str, version: int, request: Request):
        return (await call(core.get_schema, cred(request), name, version)).to_dict()

    @app.get("/v1/discovery/topics")
    async def query_topics(request: Request):
        found = await call(core.query_topics, cred(request), request.query_params.get("query", ""))
        return {"topics": [t.to_dict() for t in found]}

    @app.get("/v1/discovery/services")
    async def query_services(request: Request):
        found = await call(core.query_services, cred(request), request.query_params.get("query", ""))
        return {"services": [s.to_dict() for s in found]}

    @app.get("/v1/discovery/{kind}/{name}")
    async def get_info(kind: str, name: str, request: Request):
        return (await call(core.get_info, cred(request), _kind(kind), name)).to_dict()

    @app.post("/v1/discovery/{kind}/{name}", status_code=201)
    async def register_info(kind: str, name: str, request: Request):
        doc = await _json(request)
        doc["name"] = name
        is_topic = _kind(kind) == TOPIC
        try:
            info = TopicInfo.from_dict(doc) if is_topic else MicroserviceInfo.from_dict(doc)
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed {kind} entry: {exc}") from None
        if is_topic:
            await call(core.register_topic_info, cred(request), info)
        else:
            await call(core.register_service_info, cred(request), info)
        return info.to_dict()

    @app.put("/v1/discovery/{kind}/{name}")
    async def set_status(kind: str, name: str, request: Request):
        doc = await _json(request)
        await call(core.set_status, cred(request), _kind(kind), name, _field(doc, "status"))
        return {"name": name, "status": doc["status"]}

    @app.delete("/v1/discovery/{kind}/{name}")
    async def remove_info(kind: str, name: str, request: Request):
        await call(core.remove_info, cred(request), _kind(kind), name)
        return _no_content()

    return app


def create_security_app(security: SecurityService) -> FastAPI:
    app = FastAPI(title="DHLink security", docs_url=None, redoc_url=None)
    app.add_exception_handler(DHLinkError, _error_response)

    def cred(request: Request) -> Credentials:
        return Credentials.from_headers(request.headers)

    def topic_section(request: Request) -> tuple[str, str]:
        topic = request.query_params.get("topic")
        section = request.query_params.get("section")
        if not topic or not section:
            raise ValidationError("topic and section query parameters are required")
        return topic, section

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "component": "security"}

    @app.post("/v1/authn")
    async def authn(request: Request):
        c = cred(request)
        doc = await _json(request)
        if "serviceId" in doc:
            c = Credentials(doc["serviceId"], doc.get("apiKey", ""))
        profile = security.authenticate(c)
        return {"serviceId": profile.service_id, "ownerAppId": profile.owner_app_id}

    @app.post("/v1/authz/check")
    async def check(request: Request):
        doc = await _json(request)
        decision = security.check(cred(request), _field(doc, "topic"), _field(doc, "operation"), doc.get("section"))
        return {"decision": decision}

    @app.post("/v1/profiles", status_code=201)
    async def register_profile(request: Request):
        doc = await _json(request)
        profile = security.register_profile(
            cred(request), _field(doc, "serviceId"), api_key=doc.get("apiKey"),
            fingerprint_hex=doc.get("fingerprint"), owner_app_id=doc.get("ownerAppId", ""),
        )
        return profile.to_dict()

    @app.get("/v1/profiles")
    async def list_profiles(request: Request):
        return {"profiles": [p.to_dict() for p in security.list_profiles(cred(request))]}

    @app.delete("/v1/profiles/{service_id}")
    async def remove_profile(service_id: str, request: Request):
        security.remove_profile(cred(request), service_id)
        return _no_content()

    @app.post("/v1/acl", status_code=201)
    async def add_acl(request: Request):
        entry = AccessControlEntry.from_dict(await _json(request))
        security.add_acl(cred(request), entry)
        return entry.to_dict()

    @app.delete("/v1/acl")
    async def remove_acl(request: Request):
        security.remove_acl(cred(request), AccessControlEntry.from_dict(await _json(request)))
        return _no_content()

    @app.get("/v1/acl")
    async def list_acl(request: Request):
        entries = security.list_acl(cred(request), request.query_params.get("serviceId"),
                                    request.query_params.get("topic"))
        return {"entries": [e.to_dict() for e in entries]}

    @app.post("/v1/keys", status_code=201)
    async def generate_key(request: Request):
        doc = await _json(request)
        rotate = request.query_params.get("rotate", "false").lower() in ("1", "true", "yes")
        return security.generate_key(cred(request), _field(doc, "topic"), _field(doc, "section"), rotate=rotate)

    @app.get("/v1/keys")
    async def list_keys(request: Request):
        return {"keys": security.list_keys(cred(request), request.query_params.get("topic"))}

    @app.get("/v1/keys/public")
    async def public_key(request: Request):
        key_id, key = security.get_public_key(cred(request), *topic_section(request))
        return {"keyId": key_id, "publicKey": base64.b64encode(key).decode()}

    @app.get("/v1/keys/private")
    async def private_key(request: Request):
        key_id, key = security.get_private_key(cred(request), *topic_section(request))
        return {"keyId": key_id, "privateKey": base64.b64encode(key).decode()}

    @app.post("/v1/keys/{key_id}/revoke")
    async def revoke_key(key_id: str, request: Request):
        return security.revoke_key(cred(request), key_id)

    @app.delete("/v1/keys/{key_id}")
    async def delete_key(key_id: str, request: Request):
        security.delete_key(cred(request), key_id)
        return _no_content()

    @app.get("/v1/stats")
    async def stats(request: Request):
        require_admin(cred(request), security.admin_token)
        return security.stats()

    return app
