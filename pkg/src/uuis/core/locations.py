"""Location hierarchy: buildings with floors, locations, lab-head custody.

Buildings move Draft -> Complete -> Committed and never back; assets may
only be placed in locations of Committed buildings.  Completing a building
notifies the configured supervisor, who is the only identity allowed to
commit it.
"""

from __future__ import annotations

from datetime import datetime
from typing import Callable

from .auth import AccountService, verify_password
from .errors import (
    ConflictError,
    MissingFieldError,
    NotAuthorizedError,
    NotFoundError,
    UnauthenticatedError,
    ValidationError,
)
from .outbox import Outbox
from .store import Store, utc_now

LOCATION_TYPES = ("Research Lab", "Office", "Room")
BUILDING_STATES = ("Draft", "Complete", "Committed")


class LocationService:
    def __init__(
        self,
        store: Store,
        outbox: Outbox,
        accounts: AccountService,
        permissions,
        clock: Callable[[], datetime] = utc_now,
        supervisor_username: str | None = None,
        supervisor_email: str | None = None,
    ):
        self._store = store
        self._outbox = outbox
        self._accounts = accounts
        self._permissions = permissions
        self._clock = clock
        self.supervisor_username = supervisor_username
        self.supervisor_email = supervisor_email

    # -- building workflow -----------------------------------------------------

    def create_building(self, session_id: str, reauth_password: str, name: str,
                        address: str) -> dict:
        _, user = self._gate_builder(session_id)
        if not verify_password(user["password_hash"], reauth_password):
            raise UnauthenticatedError("reauth-failed")
        if not name:
            raise MissingFieldError("name")
        if not address:
            raise MissingFieldError("address")
        existing = self._find_building(name, address)
        if existing is not None:
            if existing["state"] == "Draft":
                return existing  # resume the unfinished draft
            raise ConflictError("duplicate-building", f"{name} / {address}")
        with self._store.transaction(user["user_id"]) as txn:
            building = {
                "building_id": txn.next_id(),
                "name": name,
                "address": address,
                "state": "Draft",
                "floors": [],
            }
            txn.insert("building", building["building_id"], building)
        return building

    def add_floor(self, session_id: str, building_id: str, number_or_name: str,
                  area: float) -> dict:
        _, user = self._gate_builder(session_id)
        building = self._get_building(building_id)
        if building["state"] != "Draft":
            raise ConflictError("state-violation", building["state"])
        if not number_or_name:
            raise MissingFieldError("number_or_name")
        if not isinstance(area, (int, float)) or area <= 0:
            raise ValidationError("invalid-area", str(area))
        if any(f["number_or_name"] == number_or_name for f in building["floors"]):
            raise ConflictError("duplicate-floor", number_or_name)
        with self._store.transaction(user["user_id"]) as txn:
            floor = {"floor_id": txn.next_id(), "number_or_name": number_or_name, "area": area}
            building["floors"].append(floor)
            txn.update("building", building_id, building)
        return floor

    def add_location(self, session_id: str, floor_id: str, number: str, area: float,
                     location_type: str | None = None, faculty: str | None = None,
                     department: str | None = None) -> dict:
        _, user = self._gate_builder(session_id)
        building = self._building_of_floor(floor_id)
        if building is None:
            raise NotFoundError("unknown-floor", floor_id)
        if building["state"] != "Draft":
            raise ConflictError("state-violation", building["state"])
        if not number:
            raise MissingFieldError("number")
        if not isinstance(area, (int, float)) or area <= 0:
            raise ValidationError("invalid-area", str(area))
        if location_type is not None and location_type not in LOCATION_TYPES:
            raise ValidationError("invalid-location-type", location_type)
        for _, loc in self._store.iter_records("location"):
            if loc["floor_id"] == floor_id and loc["number"] == number:
                raise ConflictError("duplicate-location", number)
        with self._store.transaction(user["user_id"]) as txn:
            location = {
                "location_id": txn.next_id(),
                "floor_id": floor_id,
                "building_id": building["building_id"],
                "number": number,
                "area": area,
                "location_type": location_type,
                "faculty": faculty,
                "department": department,
                "available": False,
                "lab_head": None,
            }
            txn.insert("location", location["location_id"], location)
        return location

    def mark_building_complete(self, session_id: str, building_id: str) -> dict:
        _, user = self._gate_builder(session_id)
        building = self._get_building(building_id)
        if building["state"] != "Draft":
            raise ConflictError("state-violation", building["state"])
        if not building["floors"]:
            raise ValidationError("empty-building", building_id)
        occupied = {loc["floor_id"] for _, loc in self._store.iter_records("location")}
        for floor in building["floors"]:
            if floor["floor_id"] not in occupied:
                raise ValidationError("empty-floor", floor["number_or_name"])
        building["state"] = "Complete"
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("building", building_id, building)
            if self.supervisor_email:
                txn.after_commit(
                    lambda: self._outbox.email(
                        self.supervisor_email,
                        "Building ready for review",
                        f"Building '{building['name']}' ({building['address']}) is complete "
                        f"and awaits your commit review.",
                    )
                )
        return building

    def commit_building(self, session_id: str, building_id: str) -> dict:
        _, user = self._accounts.authenticate(session_id)
        self._permissions.require(user, "create_remove_location")
        building = self._get_building(building_id)
        if building["state"] != "Complete":
            raise ConflictError("not-complete", building["state"])
        if user["username"] != self.supervisor_username:
            raise NotAuthorizedError("not-supervisor")
        building["state"] = "Committed"
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("building", building_id, building)
        return building

    # -- location editing -------------------------------------------------------

    def edit_location(self, session_id: str, location_id: str, edits: dict) -> dict:
        _, user = self._accounts.authenticate(session_id)
        if user["role"] < 2:
            raise NotAuthorizedError("not-authorized", "requires role 2 or above")
        self._permissions.require(user, "edit_location")
        location = self._store.get("location", location_id)
        if location is None:
            raise NotFoundError("not-found", location_id)
        if user["role"] == 2 and location["faculty"] != user["faculty"]:
            raise NotAuthorizedError("scope-violation", "location outside caller faculty")
        allowed = ("location_type", "department", "faculty", "available")
        for key in edits:
            if key not in allowed:
                raise ValidationError("unknown-field", key)
        if "faculty" in edits and user["role"] != 3:
            raise NotAuthorizedError("faculty-edit-forbidden")
        if "location_type" in edits and edits["location_type"] is not None \
                and edits["location_type"] not in LOCATION_TYPES:
            raise ValidationError("invalid-location-type", str(edits["location_type"]))
        if "available" in edits and not isinstance(edits["available"], bool):
            raise ValidationError("invalid-availability", str(edits["available"]))
        warnings = []
        location.update(edits)
        if location["location_type"] != "Research Lab" and location["lab_head"]:
            location["lab_head"] = None
            warnings.append("lab head cleared: location is no longer a research lab")
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("location", location_id, location)
        return {"location": location, "warnings": warnings}

    def assign_lab_head(self, session_id: str, location_id: str, user_id: str) -> dict:
        _, admin = self._accounts.authenticate(session_id)
        if admin["role"] < 1:
            raise NotAuthorizedError("not-authorized", "requires role 1 or above")
        self._permissions.require(admin, "assign_lab_head")
        location = self._store.get("location", location_id)
        if location is None:
            raise NotFoundError("not-found", location_id)
        if admin["role"] == 1 and location["department"] != admin["department"]:
            raise NotAuthorizedError("scope-violation", "location outside caller department")
        if admin["role"] == 2 and location["faculty"] != admin["faculty"]:
            raise NotAuthorizedError("scope-violation", "location outside caller faculty")
        if location["location_type"] != "Research Lab":
            raise ConflictError("not-a-lab", str(location["location_type"]))
        if self._store.get_ref("user", user_id) is None:
            raise NotFoundError("unknown-user", user_id)
        previous = location["lab_head"]
        location["lab_head"] = user_id
        with self._store.transaction(admin["user_id"]) as txn:
            txn.update("location", location_id, location)
        return {"location": location, "previous_lab_head": previous}

    # -- lookups used by other modules -----------------------------------------

    def placement_check(self, location_id: str) -> str | None:
        """Validate a location reference for asset placement.

        Raises unknown-reference unless the location exists inside a
        Committed building; returns a warning string when the location is
        flagged unavailable.
        """
        location = self._store.get_ref("location", location_id)
        if location is None:
            raise NotFoundError("unknown-reference", f"location {location_id}")
        building = self._store.get_ref("building", location["building_id"])
        if building is None or building["state"] != "Committed":
            raise NotFoundError("unknown-reference", f"location {location_id}")
        if not location["available"]:
            return f"location {location_id} is marked unavailable"
        return None

    def get_location(self, location_id: str) -> dict | None:
        return self._store.get("location", location_id)

    def display_identifier(self, location: dict) -> str:
        building = self._store.get_ref("building", location["building_id"])
        floor = next((f for f in building["floors"] if f["floor_id"] == location["floor_id"]), None)
        floor_name = floor["number_or_name"] if floor else "?"
        return f"{building['name']}-{floor_name}-{location['number']}"

    def list_buildings(self) -> list:
        return sorted((dict(b) for _, b in self._store.iter_records("building")),
                      key=lambda b: b["building_id"])

    def list_locations(self, building_id: str | None = None) -> list:
        out = [dict(l) for _, l in self._store.iter_records("location")
               if building_id is None or l["building_id"] == building_id]
        return sorted(out, key=lambda l: l["location_id"])

    # -- internals ---------------------------------------------------------------

    def _gate_builder(self, session_id: str):
        session, user = self._accounts.authenticate(session_id)
        if user["role"] != 3:
            raise NotAuthorizedError("not-authorized", "requires role 3")
        self._permissions.require(user, "create_remove_location")
        return session, user

    def _get_building(self, building_id: str) -> dict:
        building = self._store.get("building", building_id)
        if building is None:
            raise NotFoundError("not-found", building_id)
        return building

    def _find_building(self, name: str, address: str) -> dict | None:
        for _, building in self._store.iter_records("building"):
            if building["name"] == name and building["address"] == address:
                return dict(building)
        return None

    def _building_of_floor(self, floor_id: str) -> dict | None:
        for _, building in self._store.iter_records("building"):
            if any(f["floor_id"] == floor_id for f in building["floors"]):
                return dict(building)
        return None
