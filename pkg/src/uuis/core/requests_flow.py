"""Request submission, scoped search and the approval state machine.

Two families: general requests (administrative/technical problem reports,
closed with a note by a designated permission holder) and specific requests
(five inventory transactions that need approval).

The approval rule is one pure predicate used from both call sites: a
specific request is approvable by faculty admins (role 2) of the single
faculty the transaction stays within, and by university admins (role 3)
always.  When the submitter already satisfies it, submission auto-approves
and executes the implied inventory mutation in the same transaction.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Callable

from .assets import AssetService
from .auth import AccountService
from .errors import (
    ConflictError,
    MissingFieldError,
    NotAuthorizedError,
    NotFoundError,
    ValidationError,
)
from .locations import LocationService
from .store import Store, TransactionToken, iso_ms, utc_now

GENERAL_CATEGORIES = ("general_administrative", "general_technical")

SPECIFIC_PAYLOAD_FIELDS = {
    "move_asset_to_location": ("barcode", "location"),
    "move_group_to_location": ("group_id", "location"),
    "assign_equipment_to_user": ("barcode", "target_username"),
    "assign_storage_compartment_to_user": ("barcode", "compartment_number", "target_username"),
    "assign_group_to_user": ("group_id", "target_username"),
}

REQUEST_STATUSES = ("Pending", "Approved", "Closed")

INTRA = "intra"
CROSS = "cross"


@dataclass(frozen=True)
class ApprovalDecision:
    approvable: bool
    reason: str  # intra_faculty_role2_match | role3 | not_authorized


def decide_approval(scope: tuple, approver_role: int, approver_faculty: str | None) -> ApprovalDecision:
    """Pure approval predicate over (request scope, approver role/faculty).

    ``scope`` is ``(INTRA, faculty)`` when source and destination faculties
    coincide, else ``(CROSS, None)``.
    """
    if approver_role == 3:
        return ApprovalDecision(True, "role3")
    kind, faculty = scope
    if kind == INTRA and approver_role == 2 and approver_faculty == faculty:
        return ApprovalDecision(True, "intra_faculty_role2_match")
    return ApprovalDecision(False, "not_authorized")


class RequestService:
    def __init__(
        self,
        store: Store,
        accounts: AccountService,
        permissions,
        assets: AssetService,
        locations: LocationService,
        clock: Callable[[], datetime] = utc_now,
    ):
        self._store = store
        self._accounts = accounts
        self._permissions = permissions
        self._assets = assets
        self._locations = locations
        self._clock = clock

    # -- submission -----------------------------------------------------------

    def submit_general(self, session_id: str, category: str, description: str) -> dict:
        _, user = self._accounts.authenticate(session_id)
        if category not in GENERAL_CATEGORIES:
            raise ValidationError("invalid-category", category)
        if not description or not description.strip():
            raise ValidationError("missing-description")
        with self._store.transaction(user["user_id"]) as txn:
            request = self._new_request(txn, user, category)
            request["description"] = description
            txn.insert("request", request["request_id"], request)
        return request

    def submit_specific(self, session_id: str, category: str, payload: dict) -> dict:
        _, user = self._accounts.authenticate(session_id)
        if category not in SPECIFIC_PAYLOAD_FIELDS:
            raise ValidationError("invalid-category", category)
        for field in SPECIFIC_PAYLOAD_FIELDS[category]:
            if payload.get(field) in (None, ""):
                raise MissingFieldError(field)
        with self._store.transaction(user["user_id"]) as txn:
            request = self._new_request(txn, user, category)
            request["description"] = payload.get("description") or None
            for field in SPECIFIC_PAYLOAD_FIELDS[category]:
                request[field] = payload[field]
            scope = self._derive_scope(txn, request)
            decision = decide_approval(scope, user["role"], user.get("faculty"))
            if decision.approvable:
                self._execute_implied(txn, request)
                request["status"] = "Approved"
                request["decided_at"] = iso_ms(self._clock())
            txn.insert("request", request["request_id"], request)
        return request

    def _new_request(self, txn: TransactionToken, user: dict, category: str) -> dict:
        return {
            "request_id": txn.next_id(),
            "category": category,
            "description": None,
            "status": "Pending",
            "barcode": None,
            "location": None,
            "group_id": None,
            "target_username": None,
            "compartment_number": None,
            "originator": {
                "username": user["username"],
                "faculty": user.get("faculty"),
                "department": user.get("department"),
                "level": user["role"],
            },
            "closure_note": None,
            "created_at": iso_ms(self._clock()),
            "decided_at": None,
        }

    # -- scope derivation -------------------------------------------------------

    def _derive_scope(self, txn, request: dict) -> tuple:  # txn or store
        category = request["category"]
        if category in ("move_asset_to_location", "assign_equipment_to_user",
                        "assign_storage_compartment_to_user"):
            asset = self._asset_by_barcode(txn, request["barcode"])
            source = asset["owner_faculty"]
        else:
            group = txn.get("group", request["group_id"])
            if group is None:
                raise NotFoundError("unknown-reference", f"group {request['group_id']}")
            faculties = set()
            for asset_id in group["member_asset_ids"]:
                member = txn.get("asset", asset_id)
                if member is None:
                    raise NotFoundError("unknown-reference", f"asset {asset_id}")
                faculties.add(member["owner_faculty"])
            source = faculties.pop() if len(faculties) == 1 else None
        if category in ("move_asset_to_location", "move_group_to_location"):
            location = txn.get("location", request["location"])
            if location is None:
                raise NotFoundError("unknown-reference", f"location {request['location']}")
            self._locations.placement_check(request["location"])
            dest = location.get("faculty")
        else:
            target = self._user_by_username(txn, request["target_username"])
            dest = target.get("faculty")
        if source is not None and source == dest:
            return (INTRA, source)
        return (CROSS, None)

    def derive_scope(self, request: dict) -> tuple:
        """Scope against current committed inventory state."""
        return self._derive_scope(self._store, request)

    # -- implied inventory mutations ---------------------------------------------

    def _execute_implied(self, txn: TransactionToken, request: dict):
        category = request["category"]
        if category == "move_asset_to_location":
            asset = self._asset_by_barcode(txn, request["barcode"])
            self._refuse_retired(asset)
            asset["location"] = request["location"]
            txn.update("asset", asset["asset_id"], asset)
        elif category == "move_group_to_location":
            group = txn.get("group", request["group_id"])
            group["location"] = request["location"]
            txn.update("group", request["group_id"], group)
            for asset_id in group["member_asset_ids"]:
                member = txn.get("asset", asset_id)
                member["location"] = request["location"]
                txn.update("asset", asset_id, member)
        elif category == "assign_equipment_to_user":
            asset = self._asset_by_barcode(txn, request["barcode"])
            self._refuse_retired(asset)
            if asset["category"] != "Equipment":
                raise ConflictError("not-equipment", request["barcode"])
            asset["detail"]["assigned_user"] = request["target_username"]
            txn.update("asset", asset["asset_id"], asset)
        elif category == "assign_storage_compartment_to_user":
            asset = self._asset_by_barcode(txn, request["barcode"])
            self._refuse_retired(asset)
            storage = (asset["detail"] or {}).get("storage")
            if asset["category"] != "Furniture" or not storage:
                raise ConflictError("not-a-storage-unit", request["barcode"])
            number = request["compartment_number"]
            if not isinstance(number, int) or not 1 <= number <= storage["compartment_count"]:
                raise ValidationError("invalid-compartment-index", str(number))
            storage["compartment_users"][str(number)] = request["target_username"]
            txn.update("asset", asset["asset_id"], asset)
        elif category == "assign_group_to_user":
            group = txn.get("group", request["group_id"])
            group["assigned_user"] = request["target_username"]
            txn.update("group", request["group_id"], group)
            for asset_id in group["member_asset_ids"]:
                member = txn.get("asset", asset_id)
                if member["category"] == "Equipment":
                    member["detail"]["assigned_user"] = request["target_username"]
                    txn.update("asset", asset_id, member)

    def _refuse_retired(self, asset: dict):
        if asset["status"] == "Retired":
            raise ConflictError("asset-retired", asset["barcode"])

    # -- search / view ------------------------------------------------------------

    def search_requests(self, session_id: str, criteria: dict | None = None) -> list:
        _, user = self._accounts.authenticate(session_id)
        criteria = criteria or {}
        rows = []
        for request_id, request in sorted(self._store.iter_records("request"),
                                          key=lambda kv: kv[0]):
            if not self.visible_to(user, request):
                continue
            if not _request_matches(request, criteria):
                continue
            rows.append({"request_id": request_id, "category": request["category"],
                         "status": request["status"]})
        return rows

    def view_request(self, session_id: str, request_id: str) -> dict:
        _, user = self._accounts.authenticate(session_id)
        request = self._store.get("request", request_id)
        if request is None or not self.visible_to(user, request):
            raise NotFoundError("not-found", request_id)
        return request

    def visible_to(self, user: dict, request: dict) -> bool:
        """Who may see a request: own requests for role 0; department-scoped
        level dominance for roles 1-2; everything for role 3."""
        origin = request["originator"]
        if user["role"] == 0:
            return origin["username"] == user["username"]
        if user["role"] == 3:
            return True
        return origin["level"] <= user["role"] and origin["department"] == user["department"]

    # -- decisions ------------------------------------------------------------

    def close_general(self, session_id: str, request_id: str, closure_note: str) -> dict:
        _, user = self._accounts.authenticate(session_id)
        request = self._store.get("request", request_id)
        if request is None or not self.visible_to(user, request):
            raise NotFoundError("not-found", request_id)
        if request["category"] not in GENERAL_CATEGORIES:
            raise ValidationError("not-a-general-request", request["category"])
        if not closure_note or not closure_note.strip():
            raise ValidationError("missing-note")
        if request["status"] != "Pending":
            raise ConflictError("already-terminal", request["status"])
        if request["category"] == "general_technical":
            needed = "close_general_technical"
        else:
            needed = f"close_general_admin_L{request['originator']['level']}"
        if not self._permissions.has_permission(user, needed):
            raise NotAuthorizedError("not-designated", needed)
        request["status"] = "Closed"
        request["closure_note"] = closure_note
        request["decided_at"] = iso_ms(self._clock())
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("request", request_id, request)
        return request

    def approve_specific(self, session_id: str, request_id: str) -> dict:
        _, user = self._accounts.authenticate(session_id)
        request = self._store.get("request", request_id)
        if request is None or not self.visible_to(user, request):
            raise NotFoundError("not-found", request_id)
        if request["category"] in GENERAL_CATEGORIES:
            raise ValidationError("not-a-specific-request", request["category"])
        if request["status"] != "Pending":
            raise ConflictError("already-terminal", request["status"])
        with self._store.transaction(user["user_id"]) as txn:
            scope = self._derive_scope(txn, request)
            decision = decide_approval(scope, user["role"], user.get("faculty"))
            if not decision.approvable:
                raise NotAuthorizedError("not-authorized", decision.reason)
            self._execute_implied(txn, request)
            request["status"] = "Approved"
            request["decided_at"] = iso_ms(self._clock())
            txn.update("request", request_id, request)
        return request

    # -- lookups ----------------------------------------------------------------

    def _asset_by_barcode(self, txn, barcode: str) -> dict:
        for _, asset in txn.iter_records("asset"):
            if asset["barcode"] == barcode:
                return dict(asset)
        raise NotFoundError("unknown-reference", f"barcode {barcode}")

    def _user_by_username(self, txn, username: str) -> dict:
        for _, user in txn.iter_records("user"):
            if user["username"] == username:
                return dict(user)
        raise NotFoundError("unknown-reference", f"user {username}")


def _request_matches(request: dict, criteria: dict) -> bool:
    for key, wanted in criteria.items():
        if wanted in (None, "", [], ()):
            continue
        if key == "request_id" and request["request_id"] != wanted:
            return False
        elif key == "categories" and request["category"] not in wanted:
            return False
        elif key == "statuses" and request["status"] not in wanted:
            return False
        elif key == "description":
            if not request["description"] or wanted not in request["description"]:
                return False
        elif key == "closure_note":
            if not request["closure_note"] or wanted not in request["closure_note"]:
                return False
        elif key in ("barcode", "location", "group_id", "target_username"):
            if request[key] != wanted:
                return False
        elif key == "compartment_number" and request["compartment_number"] != wanted:
            return False
        elif key == "originator_username" and request["originator"]["username"] != wanted:
            return False
        elif key == "originator_faculty" and request["originator"]["faculty"] != wanted:
            return False
        elif key == "originator_department" and request["originator"]["department"] != wanted:
            return False
        elif key == "originator_level" and request["originator"]["level"] != wanted:
            return False
    return True
