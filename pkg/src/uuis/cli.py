"""Command line entry points.

``uuis serve`` runs the service; every other subcommand is a thin HTTP
client against a running instance, authenticating like any other client
(CAPTCHA included) with credentials from flags or environment variables
``UUIS_URL`` / ``UUIS_USERNAME`` / ``UUIS_PASSWORD``.
"""

from __future__ import annotations

import argparse
import getpass
import os
import sys

import httpx

from .config import ServiceConfig

KIND_ALIASES = {
    "asset": "physical_asset",
    "assets": "physical_asset",
    "physical_asset": "physical_asset",
    "software": "software",
    "location": "location",
    "locations": "location",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uuis", description="Unified University Inventory System")
    parser.add_argument("--url", default=os.environ.get("UUIS_URL", "http://127.0.0.1:8080"),
                        help="service base URL (client subcommands)")
    parser.add_argument("--username", default=os.environ.get("UUIS_USERNAME"))
    parser.add_argument("--password", default=os.environ.get("UUIS_PASSWORD"))
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the service")
    serve.add_argument("--config", help="key=value configuration file")

    backup = sub.add_parser("backup", help="trigger a backup")
    backup.add_argument("--now", action="store_true", required=True,
                        help="run a manual backup immediately")
    backup.add_argument("--local", help="override local target directory")
    backup.add_argument("--remote", help="override remote target")

    imp = sub.add_parser("import", help="bulk import a CSV file")
    imp.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
    imp.add_argument("--file", required=True)

    audit = sub.add_parser("audit", help="browse the audit log")
    audit.add_argument("--actor")
    audit.add_argument("--from", dest="date_from")
    audit.add_argument("--to", dest="date_to")
    audit.add_argument("--text")
    return parser


class Client:
    """Minimal authenticated client; the CAPTCHA challenge is transcribed
    straight from the prompt, which is exactly what a human at the login
    page would type."""

    def __init__(self, url: str, username: str, password: str, transport=None):
        self._http = httpx.Client(base_url=url, transport=transport, timeout=30.0)
        self._login(username, password)

    def _login(self, username: str, password: str):
        challenge = self._http.get("/api/v1/captcha").raise_for_status().json()
        answer = challenge["prompt"].rsplit(" ", 1)[-1]
        response = self._http.post("/api/v1/sessions", json={
            "username": username,
            "password": password,
            "captcha_challenge_id": challenge["challenge_id"],
            "captcha_text": answer,
        })
        if response.status_code != 200:
            raise SystemExit(f"login failed: {response.json().get('message', response.text)}")

    def close(self):
        try:
            self._http.delete("/api/v1/sessions/current")
        finally:
            self._http.close()

    def request(self, method: str, path: str, **kw) -> httpx.Response:
        return self._http.request(method, path, **kw)


def main(argv=None, transport=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return _serve(args)
    username = args.username or input("username: ")
    password = args.password or getpass.getpass("password: ")
    client = Client(args.url, username, password, transport=transport)
    try:
        if args.command == "backup":
            return _backup(client, args)
        if args.command == "import":
            return _import(client, args)
        if args.command == "audit":
            return _audit(client, args)
    finally:
        client.close()
    return 2


def _serve(args) -> int:
    import uvicorn

    from .api.app import create_app
    from .core.service import InventoryService

    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    service = InventoryService(config)
    app = create_app(service, with_schedulers=True)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="info")
    return 0


def _backup(client: Client, args) -> int:
    body = {}
    if args.local:
        body["local_target"] = args.local
    if args.remote:
        body["remote_target"] = args.remote
    response = client.request("POST", "/api/v1/backup", json=body)
    if response.status_code != 200:
        print(f"backup failed: {response.json().get('message', response.text)}",
              file=sys.stderr)
        return 1
    print(response.json()["manifest"], end="")
    return 0


def _import(client: Client, args) -> int:
    with open(args.file, "rb") as f:
        data = f.read()
    response = client.request(
        "POST", "/api/v1/imports",
        data={"kind": KIND_ALIASES[args.kind]},
        files={"file": (os.path.basename(args.file), data)},
    )
    if response.status_code != 200:
        print(f"import rejected: {response.json().get('message', response.text)}",
              file=sys.stderr)
        return 1
    outcome = response.json()["outcome"]
    if outcome["result"] == "success":
        print(f"imported {outcome['row_count']} rows")
        return 0
    print(f"import failed at row {outcome['row']}, column {outcome['column']}: "
          f"{outcome['message']}", file=sys.stderr)
    return 1


def _audit(client: Client, args) -> int:
    params = {k: v for k, v in (("actor", args.actor), ("date_from", args.date_from),
                                ("date_to", args.date_to), ("text", args.text))
              if v is not None}
    response = client.request("GET", "/api/v1/audit", params=params)
    if response.status_code != 200:
        print(f"audit query failed: {response.json().get('message', response.text)}",
              file=sys.stderr)
        return 1
    rows = response.json()["rows"]
    for row in rows:
        print(f"{row['at']}  txn={row['txn_id']}  {row['actor']:>12}  "
              f"{row['op']:<7} {row['entity_kind']}/{row['entity_id']}")
    print(f"{len(rows)} records")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
