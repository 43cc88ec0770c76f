"""Physical asset lifecycle and asset groups.

Faculty-level managers (role 2) are confined to assets owned by their own
faculty for every operation: adds must match it, searches are forcibly
scoped to it, and foreign assets are indistinguishable from nonexistent
ones.  University managers (role 3) see everything and are the only ones
allowed to change ownership.

Group mutations propagate location/assignee to members inside the same
transaction; emptying a group deletes it and leaves the ex-members'
location and assignee exactly as they were.
"""

from __future__ import annotations

import re
from datetime import date, datetime
from typing import Callable

from .auth import AccountService
from .errors import (
    ConflictError,
    ImmutableFieldError,
    MissingFieldError,
    NotAuthorizedError,
    NotFoundError,
    ValidationError,
)
from .locations import LocationService
from .store import Store, TransactionToken, utc_now

FURNITURE_TYPES = (
    "Classroom front desk",
    "Classroom desk",
    "Classroom chair",
    "Classroom desk/chair unit",
    "Lab bench",
    "Lab stool",
    "Lab chair",
    "Office Desk",
    "Office chair",
    "Office bookshelf",
    "Table",
    "Storage unit",
)

# the source list names Screen twice; the catalog stores it once
EQUIPMENT_TYPES = (
    "Computer",
    "Screen",
    "Keyboard",
    "Mouse",
    "Printer",
    "Telephone",
    "Photocopier",
    "Projector",
    "Amplifier",
    "Microphone",
    "Speaker",
)

STORAGE_UNIT_TYPES = ("Locker", "Filing cabinet", "Shelving unit")
COMPUTER_TYPES = ("Tower", "Laptop", "Server")
ASSET_STATUSES = ("In-stock", "Assigned", "Damaged", "In-repair", "Lost", "Retired")

_MAC_RE = re.compile(r"^[0-9A-Fa-f]{2}(:[0-9A-Fa-f]{2}){5}$")

# update_asset may touch these and nothing else
EDITABLE_ASSET_FIELDS = frozenset(
    {
        "legacy_code", "owner_faculty", "date_purchased", "warranty_expiration",
        "location", "status", "dimension", "color", "finish", "compartment_users",
        "assigned_user", "processor", "mac_address", "hdd_capacity_gb",
        "nonvolatile_mb", "volatile_mb",
    }
)

IMMUTABLE_ASSET_FIELDS = frozenset(
    {
        "asset_id", "barcode", "purchase_req_no", "purchase_order_no", "manufacturer",
        "model", "category", "furniture_type", "equipment_type", "storage_unit_type",
        "computer_type", "serial_number", "compartment_count", "group_id",
    }
)

DEFAULT_PAGE_SIZE = 50

UNSET = object()


def _check_date(value, field):
    if value in (None, ""):
        return None
    try:
        date.fromisoformat(value)
    except (TypeError, ValueError):
        raise ValidationError("invalid-date", field) from None
    return value


def _check_positive_number(value, field):
    if value is None:
        return None
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
        raise ValidationError("invalid-number", field)
    return value


class AssetService:
    def __init__(
        self,
        store: Store,
        accounts: AccountService,
        permissions,
        locations: LocationService,
        clock: Callable[[], datetime] = utc_now,
    ):
        self._store = store
        self._accounts = accounts
        self._permissions = permissions
        self._locations = locations
        self._clock = clock

    # -- gates -------------------------------------------------------------

    def _gate_manager(self, session_id: str) -> dict:
        _, user = self._accounts.authenticate(session_id)
        if user["role"] not in (2, 3):
            raise NotAuthorizedError("not-authorized", "requires role 2 or 3")
        self._permissions.require(user, "manage_physical_assets")
        return user

    def _visible(self, user: dict, asset: dict) -> bool:
        return user["role"] == 3 or asset["owner_faculty"] == user["faculty"]

    # -- add ------------------------------------------------------------------

    def add_asset(self, session_id: str, fields: dict) -> dict:
        user = self._gate_manager(session_id)
        record, warnings = self.build_asset_record(fields)
        if user["role"] == 2 and record["owner_faculty"] != user["faculty"]:
            raise NotAuthorizedError("faculty-mismatch", str(record["owner_faculty"]))
        with self._store.transaction(user["user_id"]) as txn:
            if self._barcode_taken(txn, record["barcode"]):
                raise ConflictError("duplicate-barcode", record["barcode"])
            record["asset_id"] = txn.next_id()
            txn.insert("asset", record["asset_id"], record)
        return {"asset": record, "warnings": warnings}

    def build_asset_record(self, fields: dict) -> tuple[dict, list]:
        """Validate add-asset fields and shape the stored record.

        Raises with the offending field name in ``detail`` so the bulk
        importer can map failures onto CSV columns.
        """
        known = {
            "barcode", "owner_faculty", "purchase_req_no", "purchase_order_no",
            "legacy_code", "date_purchased", "warranty_expiration", "location",
            "manufacturer", "model", "category", "furniture", "equipment",
        }
        for key in fields:
            if key not in known:
                raise ValidationError("unknown-field", key)
        for field in ("barcode", "owner_faculty", "category"):
            if not fields.get(field):
                raise MissingFieldError(field)
        category = fields["category"]
        if category not in ("Furniture", "Equipment"):
            raise ValidationError("invalid-category", category)
        warnings = []
        record = {
            "asset_id": None,
            "barcode": fields["barcode"],
            "owner_faculty": fields["owner_faculty"],
            "purchase_req_no": fields.get("purchase_req_no"),
            "purchase_order_no": fields.get("purchase_order_no"),
            "legacy_code": fields.get("legacy_code"),
            "date_purchased": _check_date(fields.get("date_purchased"), "date_purchased"),
            "warranty_expiration": _check_date(fields.get("warranty_expiration"),
                                               "warranty_expiration"),
            "location": fields.get("location") or None,
            "group_id": None,
            "manufacturer": fields.get("manufacturer"),
            "model": fields.get("model"),
            "category": category,
            "status": "In-stock",
            "detail": None,
        }
        if record["location"]:
            warning = self._locations.placement_check(record["location"])
            if warning:
                warnings.append(warning)
        if category == "Furniture":
            record["detail"] = self._build_furniture(fields.get("furniture") or {})
        else:
            record["detail"] = self._build_equipment(fields.get("equipment") or {})
        return record, warnings

    def _build_furniture(self, fields: dict) -> dict:
        furniture_type = fields.get("furniture_type")
        if not furniture_type:
            raise MissingFieldError("furniture_type")
        if furniture_type not in FURNITURE_TYPES:
            raise ValidationError("invalid-furniture-type", furniture_type)
        detail = {
            "furniture_type": furniture_type,
            "dimension": fields.get("dimension"),
            "color": fields.get("color"),
            "finish": fields.get("finish"),
            "storage": None,
        }
        if furniture_type == "Storage unit":
            storage = fields.get("storage") or {}
            unit_type = storage.get("storage_unit_type")
            if not unit_type:
                raise MissingFieldError("storage_unit_type")
            if unit_type not in STORAGE_UNIT_TYPES:
                raise ValidationError("invalid-storage-unit-type", unit_type)
            count = storage.get("compartment_count")
            if count is None:
                raise MissingFieldError("compartment_count")
            if not isinstance(count, int) or isinstance(count, bool) or count < 1:
                raise ValidationError("invalid-number", "compartment_count")
            users = storage.get("compartment_users") or {}
            detail["storage"] = {
                "storage_unit_type": unit_type,
                "compartment_count": count,
                "compartment_users": self._check_compartment_users(users, count),
            }
        elif fields.get("storage"):
            raise ValidationError("not-applicable", "storage")
        return detail

    def _build_equipment(self, fields: dict) -> dict:
        equipment_type = fields.get("equipment_type")
        if not equipment_type:
            raise MissingFieldError("equipment_type")
        if equipment_type not in EQUIPMENT_TYPES:
            raise ValidationError("invalid-equipment-type", equipment_type)
        assigned = fields.get("assigned_user")
        if assigned:
            self._check_username(assigned)
        detail = {
            "equipment_type": equipment_type,
            "serial_number": fields.get("serial_number"),
            "assigned_user": assigned or None,
            "computer": None,
        }
        if equipment_type == "Computer":
            computer = fields.get("computer") or {}
            computer_type = computer.get("computer_type")
            if not computer_type:
                raise MissingFieldError("computer_type")
            if computer_type not in COMPUTER_TYPES:
                raise ValidationError("invalid-computer-type", computer_type)
            mac = computer.get("mac_address")
            if mac and not _MAC_RE.match(mac):
                raise ValidationError("invalid-mac-address", mac)
            detail["computer"] = {
                "computer_type": computer_type,
                "processor": computer.get("processor"),
                "mac_address": mac or None,
                "hdd_capacity_gb": _check_positive_number(computer.get("hdd_capacity_gb"),
                                                          "hdd_capacity_gb"),
                "nonvolatile_mb": _check_positive_number(computer.get("nonvolatile_mb"),
                                                         "nonvolatile_mb"),
                "volatile_mb": _check_positive_number(computer.get("volatile_mb"), "volatile_mb"),
            }
        elif fields.get("computer"):
            raise ValidationError("not-applicable", "computer")
        return detail

    def _check_compartment_users(self, users: dict, count: int) -> dict:
        checked = {}
        for index, username in users.items():
            try:
                n = int(index)
            except (TypeError, ValueError):
                raise ValidationError("invalid-compartment-index", str(index)) from None
            if not 1 <= n <= count:
                raise ValidationError("invalid-compartment-index", str(index))
            if username:
                self._check_username(username)
                checked[str(n)] = username
        return checked

    def _check_username(self, username: str):
        for _, user in self._store.iter_records("user"):
            if user["username"] == username:
                return
        raise NotFoundError("unknown-user", username)

    # -- search / view -----------------------------------------------------------

    def search_assets(self, session_id: str, criteria: dict | None = None,
                      page: int = 1, page_size: int = DEFAULT_PAGE_SIZE) -> dict:
        user = self._gate_manager(session_id)
        criteria = dict(criteria or {})
        # role-2 results are confined to the caller's faculty ON TOP of any
        # requested owner filter, so asking for a foreign owner yields nothing
        forced_faculty = user["faculty"] if user["role"] == 2 else None
        rows = [
            self._summary_row(asset)
            for _, asset in sorted(self._store.iter_records("asset"), key=lambda kv: kv[0])
            if (forced_faculty is None or asset["owner_faculty"] == forced_faculty)
            and _matches(asset, criteria)
        ]
        if page_size < 1:
            page_size = DEFAULT_PAGE_SIZE
        start = (max(page, 1) - 1) * page_size
        return {"rows": rows[start:start + page_size], "total": len(rows), "page": max(page, 1),
                "page_size": page_size}

    def view_asset(self, session_id: str, asset_id: str) -> dict:
        user = self._gate_manager(session_id)
        asset = self._store.get("asset", asset_id)
        if asset is None or not self._visible(user, asset):
            raise NotFoundError("not-found", asset_id)
        return asset

    def _summary_row(self, asset: dict) -> dict:
        detail = asset["detail"]
        return {
            "asset_id": asset["asset_id"],
            "barcode": asset["barcode"],
            "category": asset["category"],
            "location": asset["location"],
            "manufacturer": asset["manufacturer"],
            "model": asset["model"],
            "furniture_type": detail.get("furniture_type"),
            "equipment_type": detail.get("equipment_type"),
            "assigned_user": detail.get("assigned_user"),
            "status": asset["status"],
            "group_id": asset["group_id"],
        }

    # -- update --------------------------------------------------------------

    def update_asset(self, session_id: str, asset_id: str, edits: dict) -> dict:
        user = self._gate_manager(session_id)
        asset = self._store.get("asset", asset_id)
        if asset is None or not self._visible(user, asset):
            raise NotFoundError("not-found", asset_id)
        for key in edits:
            if key in IMMUTABLE_ASSET_FIELDS:
                raise ImmutableFieldError(key)
            if key not in EDITABLE_ASSET_FIELDS:
                raise ValidationError("unknown-field", key)
        if "owner_faculty" in edits and user["role"] != 3:
            raise NotAuthorizedError("owner-edit-forbidden")
        warnings = self._apply_asset_edits(asset, edits)
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("asset", asset_id, asset)
        return {"asset": asset, "warnings": warnings}

    def _apply_asset_edits(self, asset: dict, edits: dict) -> list:
        detail = asset["detail"]
        furniture = asset["category"] == "Furniture"
        storage = detail.get("storage") if furniture else None
        computer = detail.get("computer") if not furniture else None
        warnings = []
        for key, value in edits.items():
            if key == "status":
                if value not in ASSET_STATUSES:
                    raise ValidationError("invalid-status", str(value))
                asset["status"] = value
            elif key == "owner_faculty":
                if not value:
                    raise MissingFieldError("owner_faculty")
                asset["owner_faculty"] = value
            elif key == "legacy_code":
                asset["legacy_code"] = value or None
            elif key in ("date_purchased", "warranty_expiration"):
                asset[key] = _check_date(value, key)
            elif key == "location":
                if value:
                    warning = self._locations.placement_check(value)
                    if warning:
                        warnings.append(warning)
                asset["location"] = value or None
            elif key in ("dimension", "color", "finish"):
                if not furniture:
                    raise ValidationError("not-applicable", key)
                detail[key] = value or None
            elif key == "compartment_users":
                if storage is None:
                    raise ValidationError("not-applicable", key)
                storage["compartment_users"] = self._check_compartment_users(
                    value or {}, storage["compartment_count"]
                )
            elif key == "assigned_user":
                if furniture:
                    raise ValidationError("not-applicable", key)
                if value:
                    self._check_username(value)
                detail["assigned_user"] = value or None
            elif key in ("processor", "mac_address", "hdd_capacity_gb",
                         "nonvolatile_mb", "volatile_mb"):
                if computer is None:
                    raise ValidationError("not-applicable", key)
                if key == "mac_address":
                    if value and not _MAC_RE.match(value):
                        raise ValidationError("invalid-mac-address", value)
                    computer[key] = value or None
                elif key == "processor":
                    computer[key] = value or None
                else:
                    computer[key] = _check_positive_number(value, key)
        return warnings

    # -- groups ----------------------------------------------------------------

    def create_group(self, session_id: str, member_asset_ids: list,
                     location=UNSET, assigned_user=UNSET) -> dict:
        user = self._gate_manager(session_id)
        members = list(dict.fromkeys(member_asset_ids or []))
        if not members:
            raise ValidationError("empty-group")
        with self._store.transaction(user["user_id"]) as txn:
            records = self._load_members(txn, user, members, check_grouped=True)
            group = {
                "group_id": txn.next_id(),
                "member_asset_ids": sorted(members),
                "location": None if location is UNSET else location,
                "assigned_user": None if assigned_user is UNSET else assigned_user,
            }
            warnings = self._propagate(txn, group["group_id"], records, location, assigned_user)
            txn.insert("group", group["group_id"], group)
        return {"group": group, "warnings": warnings}

    def view_group(self, session_id: str, group_id: str) -> dict:
        user = self._gate_manager(session_id)
        group = self._store.get("group", group_id)
        if group is None:
            raise NotFoundError("not-found", group_id)
        if user["role"] == 2:
            for asset_id in group["member_asset_ids"]:
                asset = self._store.get_ref("asset", asset_id)
                if asset is None or asset["owner_faculty"] != user["faculty"]:
                    raise NotFoundError("not-found", group_id)
        return group

    def update_or_delete_group(self, session_id: str, group_id: str, new_members: list,
                               location=UNSET, assigned_user=UNSET) -> dict:
        user = self._gate_manager(session_id)
        group = self._store.get("group", group_id)
        if group is None:
            raise NotFoundError("not-found", group_id)
        new_members = list(dict.fromkeys(new_members or []))
        old_members = list(group["member_asset_ids"])
        with self._store.transaction(user["user_id"]) as txn:
            # role-2 callers must own every asset the change touches,
            # current members included (removal writes their records too)
            self._load_members(txn, user, old_members, check_grouped=False)
            records = self._load_members(txn, user, new_members, check_grouped=False,
                                         allow_in_group=group_id)
            if not new_members:
                for asset_id in old_members:
                    asset = txn.get("asset", asset_id)
                    asset["group_id"] = None  # location and assignee stay intact
                    txn.update("asset", asset_id, asset)
                txn.delete("group", group_id)
                return {"deleted": True, "group_id": group_id, "warnings": []}
            for asset_id in (m for m in old_members if m not in new_members):
                asset = txn.get("asset", asset_id)
                asset["group_id"] = None
                txn.update("asset", asset_id, asset)
            if location is not UNSET:
                group["location"] = location
            if assigned_user is not UNSET:
                group["assigned_user"] = assigned_user
            group["member_asset_ids"] = sorted(new_members)
            warnings = self._propagate(txn, group_id, records, location, assigned_user)
            txn.update("group", group_id, group)
        return {"deleted": False, "group": group, "warnings": warnings}

    def _load_members(self, txn: TransactionToken, user: dict, member_ids: list,
                      check_grouped: bool, allow_in_group: str | None = None) -> list:
        records = []
        for asset_id in member_ids:
            asset = txn.get("asset", asset_id)
            if asset is None:
                raise NotFoundError("unknown-asset", asset_id)
            if user["role"] == 2 and asset["owner_faculty"] != user["faculty"]:
                raise NotAuthorizedError("faculty-mismatch", asset_id)
            if check_grouped and asset["group_id"] is not None:
                raise ConflictError("already-grouped", asset_id)
            if allow_in_group is not None and asset["group_id"] not in (None, allow_in_group):
                raise ConflictError("already-grouped", asset_id)
            records.append(asset)
        return records

    def _propagate(self, txn: TransactionToken, group_id: str, members: list,
                   location, assigned_user) -> list:
        """Stamp group membership and overwrite provided fields on every member."""
        warnings = []
        if location is not UNSET and location:
            warning = self._locations.placement_check(location)
            if warning:
                warnings.append(warning)
        if assigned_user is not UNSET and assigned_user:
            self._check_username(assigned_user)
        for asset in members:
            asset["group_id"] = group_id
            if location is not UNSET:
                asset["location"] = location or None
            if assigned_user is not UNSET and asset["category"] == "Equipment":
                asset["detail"]["assigned_user"] = assigned_user or None
            txn.update("asset", asset["asset_id"], asset)
        return warnings

    # -- lookups used by the request workflow -----------------------------------

    def get_by_barcode(self, barcode: str) -> dict | None:
        for _, asset in self._store.iter_records("asset"):
            if asset["barcode"] == barcode:
                return dict(asset)
        return None

    def _barcode_taken(self, txn: TransactionToken, barcode: str) -> bool:
        return any(asset["barcode"] == barcode for _, asset in txn.iter_records("asset"))


def _matches(asset: dict, criteria: dict) -> bool:
    detail = asset["detail"]
    computer = detail.get("computer") or {}
    for key, wanted in criteria.items():
        if wanted in (None, "", [], ()):
            continue
        if key == "asset_id" and asset["asset_id"] != wanted:
            return False
        elif key == "barcode" and asset["barcode"] != wanted:
            return False
        elif key == "owner_faculty" and asset["owner_faculty"] != wanted:
            return False
        elif key == "purchase_req_no" and asset["purchase_req_no"] != wanted:
            return False
        elif key == "purchase_order_no" and asset["purchase_order_no"] != wanted:
            return False
        elif key == "legacy_code" and asset["legacy_code"] != wanted:
            return False
        elif key == "location" and asset["location"] != wanted:
            return False
        elif key == "group_id" and asset["group_id"] != wanted:
            return False
        elif key == "manufacturer" and asset["manufacturer"] != wanted:
            return False
        elif key == "model" and asset["model"] != wanted:
            return False
        elif key == "categories" and asset["category"] not in wanted:
            return False
        elif key == "statuses" and asset["status"] not in wanted:
            return False
        elif key == "furniture_types" and detail.get("furniture_type") not in wanted:
            return False
        elif key == "storage_unit_types":
            storage = detail.get("storage") or {}
            if storage.get("storage_unit_type") not in wanted:
                return False
        elif key == "equipment_types" and detail.get("equipment_type") not in wanted:
            return False
        elif key == "serial_number" and detail.get("serial_number") != wanted:
            return False
        elif key == "assigned_user" and detail.get("assigned_user") != wanted:
            return False
        elif key == "computer_types" and computer.get("computer_type") not in wanted:
            return False
        elif key == "mac_address" and computer.get("mac_address") != wanted:
            return False
        elif key in ("date_purchased_from", "date_purchased_to"):
            value = asset["date_purchased"]
            if value is None:
                return False
            if key.endswith("_from") and value < wanted:
                return False
            if key.endswith("_to") and value > wanted:
                return False
        elif key in ("warranty_from", "warranty_to"):
            value = asset["warranty_expiration"]
            if value is None:
                return False
            if key.endswith("_from") and value < wanted:
                return False
            if key.endswith("_to") and value > wanted:
                return False
        elif key in ("hdd_gb_min", "hdd_gb_max", "nonvolatile_mb_min", "nonvolatile_mb_max",
                     "volatile_mb_min", "volatile_mb_max"):
            field = {"hdd": "hdd_capacity_gb", "non": "nonvolatile_mb",
                     "vol": "volatile_mb"}[key[:3]]
            value = computer.get(field)
            if value is None:
                return False
            if key.endswith("_min") and value < wanted:
                return False
            if key.endswith("_max") and value > wanted:
                return False
    return True
