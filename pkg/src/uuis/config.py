"""Service configuration: a documented key=value text file.

Example::

    # network
    listen_host = 127.0.0.1
    listen_port = 8080
    capacity = 100

    # people
    supervisor_username = vkim
    supervisor_email = vkim@iufa.example
    it_email = it-oncall@iufa.example
    it_sms = +1-555-0100

    # storage
    store_path = /var/lib/uuis/store.jsonl
    spool_dir = /var/spool/uuis
    backup_local = /var/backups/uuis
    backup_remote = file:///mnt/offsite/uuis
    backup_frequency_hours = 24
    backup_scope = asset,software,license,location,building

    # policy
    expiry_scan_utc_time = 06:00
    hash_iterations = 100000
    bootstrap_admin_username = admin
    bootstrap_admin_password = ChangeMe123
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .core.errors import ValidationError
from .core.store import ENTITY_KINDS


@dataclass
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    capacity: int = 100
    login_wait_limit_seconds: float = 120.0
    supervisor_username: str | None = None
    supervisor_email: str | None = None
    it_email: str | None = None
    it_sms: str | None = None
    coordinator_email: str | None = None
    software_manager_email: str | None = None
    spool_dir: str = "./outbox"
    store_path: str | None = None
    backup_local: str | None = None
    backup_remote: str | None = None
    backup_frequency_hours: float = 24.0
    backup_scope: tuple = tuple(ENTITY_KINDS)
    expiry_scan_utc_time: str = "06:00"
    hash_iterations: int = 100_000
    bootstrap_admin_username: str | None = None
    bootstrap_admin_password: str | None = None
    bootstrap_admin_email: str = "admin@iufa.example"
    bootstrap_admin_faculty: str = "UNIV"
    bootstrap_admin_department: str = "IT"
    static_dir: str | None = None

    @classmethod
    def load(cls, path: str) -> "ServiceConfig":
        values: dict = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError("config-error", f"line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ValidationError("config-error", f"line {lineno}: unknown key '{key}'")
            values[key] = _coerce(known[key].type, key, value)
        return cls(**values)


def _coerce(type_name: str, key: str, value: str):
    if key == "backup_scope":
        return tuple(part.strip() for part in value.split(",") if part.strip())
    if "int" in str(type_name):
        return int(value)
    if "float" in str(type_name):
        return float(value)
    return value or None
