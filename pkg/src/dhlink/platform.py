"""A whole platform on one host: security service plus core (broker + discovery).

``transport="local"`` wires everything in-process; ``transport="http"`` starts
both listeners on ephemeral loopback ports and talks to them over HTTP. As with
``dhlink-server all`` the core consults the security service in-process;
``remote_security=True`` makes it forward caller credentials over HTTP instead,
the way a core-only deployment does.
"""

from __future__ import annotations

from pathlib import Path

from dhlink.admin.lifecycle import Administrator
from dhlink.auth import Credentials
from dhlink.clients import HttpCoreClient, HttpSecurityClient, LocalCoreClient, LocalSecurityClient
from dhlink.core import CoreService, LocalAccess, RemoteAccess
from dhlink.http.apps import create_core_app, create_security_app
from dhlink.http.server import ServerThread
from dhlink.security.keys import now_ms
from dhlink.security.service import SecurityService

LOCAL = "local"
HTTP = "http"


class DeskPlatform:
    def __init__(self, data_dir, transport: str = LOCAL, admin_token: str = "core-admin",
                 security_admin_token: str = "security-admin", clock=now_ms, fsync: bool = False,
                 tls_cert: str | None = None, tls_key: str | None = None, remote_security: bool = False):
        if transport not in (LOCAL, HTTP):
            raise ValueError(f"transport must be local or http, got {transport!r}")
        self.data_dir = Path(data_dir)
        self.transport = transport
        self.admin_token = admin_token
        self.security_admin_token = security_admin_token
        self.security = SecurityService(self.data_dir / "security", security_admin_token, clock=clock)
        self._servers = []
        self._http_clients = []
        self._verify = tls_cert or True

        if remote_security and transport == LOCAL:
            raise ValueError("remote_security needs the http transport")
        access = LocalAccess(self.security)
        if transport == HTTP:
            sec_server = ServerThread(create_security_app(self.security), tls_cert=tls_cert,
                                      tls_key=tls_key).start()
            self._servers.append(sec_server)
            self.security_url = sec_server.url
            if remote_security:
                forward = HttpSecurityClient(self.security_url, verify=self._verify)
                self._http_clients.append(forward)
                access = RemoteAccess(forward.with_credentials)

        self.core = CoreService(self.data_dir / "core", admin_token, access, clock=clock, fsync=fsync)
        # receive entries must name the receiver's own section
        self.security.authorizer.section_owner = self.core.broker.section_owner

        if transport == HTTP:
            core_server = ServerThread(create_core_app(self.core), tls_cert=tls_cert, tls_key=tls_key).start()
            self._servers.append(core_server)
            self.core_url = core_server.url
            self._core_http = HttpCoreClient(self.core_url, verify=self._verify)
            self._sec_http = HttpSecurityClient(self.security_url, verify=self._verify)
            self._http_clients += [self._core_http, self._sec_http]

    # -- clients --------------------------------------------------------------

    def core_client(self, cred: Credentials):
        if self.transport == LOCAL:
            return LocalCoreClient(self.core, cred)
        return self._core_http.with_credentials(cred)

    def security_client(self, cred: Credentials):
        if self.transport == LOCAL:
            return LocalSecurityClient(self.security, cred)
        return self._sec_http.with_credentials(cred)

    def service_clients(self, service_id: str, api_key: str):
        cred = Credentials(service_id, api_key)
        return self.core_client(cred), self.security_client(cred)

    def admin_core(self):
        return self.core_client(Credentials(admin_token=self.admin_token))

    def admin_security(self):
        return self.security_client(Credentials(admin_token=self.security_admin_token))

    def administrator(self, path=None) -> Administrator:
        path = path if path is not None else self.data_dir / "admin" / "applications.json"
        return Administrator(self.admin_core(), self.admin_security(), path)

    # -- teardown -------------------------------------------------------------

    def close(self) -> None:
        # close client connections first so servers are not kept alive by them
        for client in self._http_clients:
            client.close()
        self._http_clients.clear()
        for server in reversed(self._servers):
            server.stop()
        self._servers.clear()
        self.core.close()
        self.security.close()

    def __enter__(self) -> "DeskPlatform":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
