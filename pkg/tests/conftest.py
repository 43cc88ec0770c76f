"""Shared fixtures: an in-memory service with a deterministic ticking clock."""

from __future__ import annotations

import threading
import time
from datetime import datetime, timedelta, timezone

import pytest
import uvicorn

from uuis.config import ServiceConfig
from uuis.core.auth import hash_password
from uuis.core.outbox import MemorySender
from uuis.core.service import InventoryService

TEST_PASSWORD = "Passw0rd1"
TEST_HASH_ITERATIONS = 1_000  # keep PBKDF2 cheap in tests; cost is configurable


class TickingClock:
    """Monotone fake clock; each reading advances 1 ms so timestamps order."""

    def __init__(self, start: datetime | None = None):
        self.now = start or datetime(2026, 8, 9, 12, 0, 0, tzinfo=timezone.utc)

    def __call__(self) -> datetime:
        self.now += timedelta(milliseconds=1)
        return self.now

    def advance(self, seconds: float):
        self.now += timedelta(seconds=seconds)


class World:
    """Service plus shortcuts for seeding users and logging in."""

    def __init__(self, config: ServiceConfig | None = None):
        self.clock = TickingClock()
        self.sender = MemorySender()
        self.config = config or ServiceConfig(
            hash_iterations=TEST_HASH_ITERATIONS,
            supervisor_username="root",
            supervisor_email="root@iufa.example",
            coordinator_email="coordinator@iufa.example",
            software_manager_email="software-manager@iufa.example",
            it_email="it@iufa.example",
            it_sms="+1-555-0100",
            spool_dir=None,
        )
        self.svc = InventoryService(self.config, outbox_sender=self.sender, clock=self.clock)
        self.store = self.svc.store

    # -- seeding ---------------------------------------------------------------

    def create_user(self, username: str, role: int = 0, faculty: str | None = None,
                    department: str | None = None, grants: tuple = (), revokes: tuple = (),
                    password: str = TEST_PASSWORD, active: bool = True) -> dict:
        if role >= 1 and department is None:
            department = "D1"
        if role >= 2 and faculty is None:
            faculty = "F"
        record = {
            "user_id": None,
            "username": username,
            "password_hash": hash_password(password, TEST_HASH_ITERATIONS),
            "first_name": username.title(),
            "last_name": "Test",
            "email": f"{username}@iufa.example",
            "home_address": None,
            "phone": None,
            "role": role,
            "role_id": None,
            "faculty": faculty,
            "department": department,
            "active": active,
        }
        with self.store.transaction("system") as txn:
            record["user_id"] = txn.next_id()
            txn.insert("user", record["user_id"], record)
            for permission in grants:
                txn.insert(
                    "permission",
                    f"ovr:{record['user_id']}:{permission}",
                    {"user_id": record["user_id"], "permission": permission,
                     "state": "granted", "set_by": "system", "at": "2026-01-01T00:00:00.000+00:00"},
                )
            for permission in revokes:
                txn.insert(
                    "permission",
                    f"ovr:{record['user_id']}:{permission}",
                    {"user_id": record["user_id"], "permission": permission,
                     "state": "revoked", "set_by": "system", "at": "2026-01-01T00:00:00.000+00:00"},
                )
        return record

    def login(self, username: str, password: str = TEST_PASSWORD) -> str:
        challenge = self.svc.captcha.issue()
        answer = challenge["prompt"].rsplit(" ", 1)[-1]
        session = self.svc.accounts.login(username, password, challenge["challenge_id"], answer)
        return session["session_id"]

    def solve_captcha(self) -> tuple[str, str]:
        challenge = self.svc.captcha.issue()
        return challenge["challenge_id"], challenge["prompt"].rsplit(" ", 1)[-1]

    def emails(self, to: str | None = None) -> list:
        return [m for m in self.sender.messages
                if m.channel == "email" and (to is None or m.to == to)]

    # -- inventory shortcuts ----------------------------------------------------

    def make_manager(self, username: str = "mgr3", role: int = 3, faculty: str = "F") -> str:
        self.create_user(username, role=role, faculty=faculty,
                         grants=("manage_physical_assets",))
        return self.login(username)

    def make_committed_location(self, faculty: str | None = None,
                                department: str | None = None,
                                location_type: str | None = None,
                                available: bool = True) -> dict:
        """Drive the full building workflow to a committed, placeable location."""
        svc = self.svc
        if self.svc.permissions.find_user_by_username("root") is None:
            self.create_user("root", role=3, faculty="F", department="D1",
                             grants=("create_remove_location", "edit_location"))
        sid = self.login("root")
        suffix = self.store._id_counter + 1
        building = svc.locations.create_building(sid, TEST_PASSWORD,
                                                 f"Building {suffix}", f"{suffix} College St")
        floor = svc.locations.add_floor(sid, building["building_id"], "G", 400.0)
        location = svc.locations.add_location(sid, floor["floor_id"], "101", 25.0,
                                              location_type=location_type,
                                              faculty=faculty, department=department)
        svc.locations.mark_building_complete(sid, building["building_id"])
        svc.locations.commit_building(sid, building["building_id"])
        if available:
            svc.locations.edit_location(sid, location["location_id"], {"available": True})
        return svc.locations.get_location(location["location_id"])


class LiveServer:
    """uvicorn on an ephemeral localhost port, for clients that need real HTTP."""

    def __init__(self, app):
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error",
                                access_log=False)
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.url = f"http://127.0.0.1:{port}"

    def stop(self):
        self.server.should_exit = True
        self.thread.join(timeout=10)


@pytest.fixture
def world() -> World:
    return World()


@pytest.fixture
def svc(world):
    return world.svc
