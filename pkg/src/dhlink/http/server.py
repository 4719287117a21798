"""Run the FastAPI apps under uvicorn, either in a background thread or as a CLI."""

from __future__ import annotations

import logging
import threading
import time
from pathlib import Path

import click
import uvicorn

from dhlink.clients import HttpSecurityClient
from dhlink.core import CoreService, LocalAccess, RemoteAccess
from dhlink.http.apps import create_core_app, create_security_app
from dhlink.security.service import SecurityService

log = logging.getLogger(__name__)


class ServerThread:
    """A uvicorn server on its own thread. ``port=0`` binds an ephemeral port."""

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0,
                 tls_cert: str | None = None, tls_key: str | None = None):
        config = uvicorn.Config(
            app, host=host, port=port, log_level="warning", access_log=False,
            ssl_certfile=tls_cert, ssl_keyfile=tls_key, lifespan="off", timeout_graceful_shutdown=2,
        )
        self.server = uvicorn.Server(config)
        self.host = host
        self.scheme = "https" if tls_cert else "http"
        self._thread = threading.Thread(target=self.server.run, daemon=True)

    def start(self, timeout: float = 10.0) -> "ServerThread":
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if not self._thread.is_alive():
                raise RuntimeError("server thread exited during startup")
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start in time")
            time.sleep(0.01)
        return self

    @property
    def port(self) -> int:
        return self.server.servers[0].sockets[0].getsockname()[1]

    @property
    def url(self) -> str:
        return f"{self.scheme}://{self.host}:{self.port}"

    def stop(self) -> None:
        self.server.should_exit = True
        self._thread.join(timeout=10)


def _serve(app, host: str, port: int, tls_cert, tls_key) -> None:
    uvicorn.run(app, host=host, port=port, log_level="info",
                ssl_certfile=tls_cert, ssl_keyfile=tls_key)


@click.command()
@click.argument("component", type=click.Choice(["all", "core", "security"]))
@click.option("--data-dir", type=click.Path(file_okay=False), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8700, show_default=True, help="Core port (security uses --security-port).")
@click.option("--security-port", type=int, default=8701, show_default=True)
@click.option("--security-url", default=None, help="Remote security service for a core-only process.")
@click.option("--admin-token", envvar="DHLINK_ADMIN_TOKEN", required=True)
@click.option("--security-admin-token", envvar="DHLINK_SECURITY_ADMIN_TOKEN", default=None,
              help="Defaults to --admin-token.")
@click.option("--tls-cert", type=click.Path(dir_okay=False), default=None)
@click.option("--tls-key", type=click.Path(dir_okay=False), default=None)
@click.option("--ca-file", type=click.Path(dir_okay=False), default=None,
              help="CA bundle used by core to verify the security service.")
def main(component, data_dir, host, port, security_port, security_url, admin_token,
         security_admin_token, tls_cert, tls_key, ca_file):
    """Start DHLink services: core (broker + discovery), security, or both."""
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    root = Path(data_dir)
    sec_token = security_admin_token or admin_token

    if component == "security":
        security = SecurityService(root / "security", sec_token)
        _serve(create_security_app(security), host, security_port, tls_cert, tls_key)
        return

    if component == "core":
        if not security_url:
            raise click.UsageError("core needs --security-url")
        verify = ca_file or True
        shared = HttpSecurityClient(security_url, verify=verify)
        core = CoreService(root / "core", admin_token, RemoteAccess(shared.with_credentials))
        _serve(create_core_app(core), host, port, tls_cert, tls_key)
        return

    # both listeners in one process; the core still talks to security in-process
    security = SecurityService(root / "security", sec_token)
    core = CoreService(root / "core", admin_token, LocalAccess(security))
    security.authorizer.section_owner = core.broker.section_owner
    sec_server = ServerThread(create_security_app(security), host, security_port, tls_cert, tls_key).start()
    log.info("security listening on %s", sec_server.url)
    try:
        _serve(create_core_app(core), host, port, tls_cert, tls_key)
    finally:
        sec_server.stop()
        core.close()
        security.close()


if __name__ == "__main__":
    main()
