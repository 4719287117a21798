"""dhlink-admin: administrator command line.

Exit codes: 0 success, 2 validation error, 3 state error, 4 connectivity error.
"""

from __future__ import annotations

import fcntl
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import click

from dhlink.admin.lifecycle import Administrator
from dhlink.auth import Credentials
from dhlink.clients import HttpCoreClient, HttpSecurityClient
from dhlink.discovery import SERVICE, MicroserviceInfo
from dhlink.errors import ConnectivityError, DHLinkError, StateError, ValidationError
from dhlink.security.acl import AccessControlEntry

EXIT_VALIDATION = 2
EXIT_STATE = 3
EXIT_CONNECTIVITY = 4

_DISCOVERY_METHODS = frozenset({
    "register_schema", "get_schema", "register_topic_info", "register_service_info",
    "set_status", "remove_info", "get_info", "query_topics", "query_services",
})


class _RoutedCore:
    """Sends discovery calls to the discovery URL and the rest to the broker."""

    def __init__(self, broker, discovery):
        self._broker = broker
        self._discovery = discovery

    def __getattr__(self, name):
        target = self._discovery if name in _DISCOVERY_METHODS else self._broker
        return getattr(target, name)


def exit_code_for(exc: DHLinkError) -> int:
    if isinstance(exc, ConnectivityError):
        return EXIT_CONNECTIVITY
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    return EXIT_STATE


@contextmanager
def admin_lock(data_dir: Path):
    data_dir.mkdir(parents=True, exist_ok=True)
    fd = os.open(data_dir / "admin.lock", os.O_RDWR | os.O_CREAT, 0o600)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise StateError(f"another dhlink-admin holds {data_dir / 'admin.lock'}") from None
        yield
    finally:
        os.close(fd)


class Ctx:
    def __init__(self, broker_url, security_url, discovery_url, admin_token, security_admin_token,
                 data_dir, admin_id, ca_file):
        verify = ca_file or True
        core_cred = Credentials(admin_token=admin_token)
        broker = HttpCoreClient(broker_url, core_cred, verify=verify)
        if discovery_url and discovery_url.rstrip("/") != broker_url.rstrip("/"):
            self.core = _RoutedCore(broker, HttpCoreClient(discovery_url, core_cred, verify=verify))
        else:
            self.core = broker
        self.security = HttpSecurityClient(
            security_url, Credentials(admin_token=security_admin_token or admin_token), verify=verify)
        self.data_dir = Path(data_dir)
        self.admin_id = admin_id

    def administrator(self) -> Administrator:
        return Administrator(self.core, self.security, self.data_dir / "applications.json")


def _emit(doc) -> None:
    click.echo(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _run(fn):
    """Run an admin action under the lock and map errors to exit codes."""
    ctx = click.get_current_context().obj
    try:
        with admin_lock(ctx.data_dir):
            result = fn(ctx)
    except DHLinkError as exc:
        doc = exc.to_dict()
        report = getattr(exc, "report", None)
        if report is not None:
            doc["report"] = report
        click.echo(json.dumps(doc, sort_keys=True, default=str), err=True)
        sys.exit(exit_code_for(exc))
    if result is not None:
        _emit(result)


@click.group()
@click.option("--broker-url", envvar="DHLINK_BROKER_URL", default="http://127.0.0.1:8700", show_default=True)
@click.option("--security-url", envvar="DHLINK_SECURITY_URL", default="http://127.0.0.1:8701", show_default=True)
@click.option("--discovery-url", envvar="DHLINK_DISCOVERY_URL", default=None,
              help="Defaults to --broker-url (discovery is served by the core).")
@click.option("--admin-token", envvar="DHLINK_ADMIN_TOKEN", required=True)
@click.option("--security-admin-token", envvar="DHLINK_SECURITY_ADMIN_TOKEN", default=None,
              help="Admin token of the security service; defaults to --admin-token.")
@click.option("--data-dir", envvar="DHLINK_ADMIN_DIR", default=".dhlink-admin", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--admin-id", envvar="DHLINK_ADMIN_ID", default="admin", show_default=True)
@click.option("--ca-file", default=None, type=click.Path(dir_okay=False))
@click.pass_context
def main(ctx, broker_url, security_url, discovery_url, admin_token, security_admin_token,
         data_dir, admin_id, ca_file):
    """Administer a DHLink platform."""
    ctx.obj = Ctx(broker_url, security_url, discovery_url, admin_token, security_admin_token,
                  data_dir, admin_id, ca_file)


# -- applications -------------------------------------------------------------

@main.group()
def app():
    """Application lifecycle."""


@app.command("propose")
@click.argument("app_id")
@click.option("--file", "path", required=True, type=click.Path(exists=True, dir_okay=False))
def app_propose(app_id, path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise click.BadParameter(f"{path} is not JSON: {exc}")
    _run(lambda c: c.administrator().propose(app_id, doc, c.admin_id).to_dict())


@app.command("approve")
@click.argument("app_id")
def app_approve(app_id):
    _run(lambda c: c.administrator().approve_and_initialise(app_id, c.admin_id).to_dict())


@app.command("ready")
@click.argument("app_id")
@click.option("--credentials", "cred_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON object mapping service id to api key, used for the connectivity self-test.")
def app_ready(app_id, cred_path):
    creds = json.loads(Path(cred_path).read_text(encoding="utf-8"))
    _run(lambda c: c.administrator().mark_ready(app_id, creds, c.admin_id).to_dict())


@app.command("decommission")
@click.argument("app_id")
@click.option("--confirm", is_flag=True, help="Developer and administrator agree to end the application.")
def app_decommission(app_id, confirm):
    _run(lambda c: c.administrator().decommission(app_id, c.admin_id, confirm=confirm).to_dict())


@app.command("list")
def app_list():
    _run(lambda c: [{"appId": r.app_id, "state": r.state} for r in c.administrator().applications()])


@app.command("show")
@click.argument("app_id")
def app_show(app_id):
    _run(lambda c: c.administrator().get(app_id).to_dict())


# -- topics -------------------------------------------------------------------

@main.group()
def topic():
    """Broker topics."""


@topic.command("create")
@click.argument("name")
@click.option("--policy", type=click.Choice(["realtime", "retained", "transient"]), required=True)
@click.option("--schema", "schema_ref", required=True, help="NAME:VERSION of a registered schema.")
@click.option("--config", "config_json", default="{}", help="Policy parameters as JSON.")
def topic_create(name, policy, schema_ref, config_json):
    sname, _, version = schema_ref.rpartition(":")
    if not sname or not version.isdigit():
        raise click.BadParameter("expected NAME:VERSION", param_hint="--schema")
    _run(lambda c: c.core.create_topic(name, policy, (sname, int(version)), json.loads(config_json)))


@topic.command("delete")
@click.argument("name")
def topic_delete(name):
    _run(lambda c: c.core.delete_topic(name))


@topic.command("list")
def topic_list():
    _run(lambda c: c.core.list_topics())


# -- ACL ----------------------------------------------------------------------

def _entry(service_id, topic_name, operation, section) -> AccessControlEntry:
    return AccessControlEntry(service_id, topic_name, operation, section)


@main.group()
def acl():
    """Access control list."""


@acl.command("grant")
@click.argument("service_id")
@click.argument("topic_name")
@click.argument("operation", type=click.Choice(["send", "receive"]))
@click.option("--section", default=None)
def acl_grant(service_id, topic_name, operation, section):
    _run(lambda c: c.security.add_acl(_entry(service_id, topic_name, operation, section)))


@acl.command("revoke")
@click.argument("service_id")
@click.argument("topic_name")
@click.argument("operation", type=click.Choice(["send", "receive"]))
@click.option("--section", default=None)
def acl_revoke(service_id, topic_name, operation, section):
    _run(lambda c: c.security.remove_acl(_entry(service_id, topic_name, operation, section)))


@acl.command("list")
@click.option("--service", "service_id", default=None)
@click.option("--topic", "topic_name", default=None)
def acl_list(service_id, topic_name):
    _run(lambda c: [e.to_dict() for e in c.security.list_acl(service_id, topic_name)])


# -- keys ---------------------------------------------------------------------

@main.group()
def keys():
    """Section keypairs."""


@keys.command("generate")
@click.argument("topic_name")
@click.argument("section")
def keys_generate(topic_name, section):
    _run(lambda c: c.security.generate_key(topic_name, section))


@keys.command("rotate")
@click.argument("topic_name")
@click.argument("section")
def keys_rotate(topic_name, section):
    _run(lambda c: c.security.generate_key(topic_name, section, rotate=True))


@keys.command("list")
@click.option("--topic", "topic_name", default=None)
def keys_list(topic_name):
    _run(lambda c: c.security.list_keys(topic_name))


# -- discovery services ---------------------------------------------------------

@main.group()
def service():
    """Microservice entries in discovery."""


@service.command("register")
@click.argument("name")
@click.option("--url", default="")
@click.option("--description", default="")
@click.option("--owner", "owner_app_id", default="")
def service_register(name, url, description, owner_app_id):
    def action(c):
        info = MicroserviceInfo(name, description, url, "initialising", owner_app_id)
        c.core.register_service_info(info)
        return info.to_dict()
    _run(action)


@service.command("deregister")
@click.argument("name")
def service_deregister(name):
    _run(lambda c: c.core.remove_info(SERVICE, name))


@service.command("status")
@click.argument("name")
@click.argument("status", required=False, type=click.Choice(["initialising", "ready", "retired"]))
def service_status(name, status):
    def action(c):
        if status is not None:
            c.core.set_status(SERVICE, name, status)
        return c.core.get_info(SERVICE, name).to_dict()
    _run(action)


if __name__ == "__main__":
    main()
