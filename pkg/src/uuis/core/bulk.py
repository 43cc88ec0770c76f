"""Atomic CSV mass entry for physical assets, software and locations.

Files must be plain ASCII under 2 MB with a ``.csv`` extension and a
bit-exact header for the declared kind.  Every row is validated before
anything is written; on success all entities land in one transaction, on
any failure nothing does and the outcome names the exact (row, column).
At most nine imports run at once; readers never wait on them.

Schemas (header row mandatory):

* assets:   barcode,owner_faculty,category,furniture_type,equipment_type,
            storage_unit_type,compartment_count,computer_type,manufacturer,
            model,serial_number,legacy_code,date_purchased,
            warranty_expiration,location
* software: name,vendor,category,version,serial_number,license_type,
            max_installations,active,expiry_date
            (one row per license; consecutive rows with equal name+vendor
            fold into one title)
* locations: building_name,building_address,floor,location_number,area,
            location_type,faculty,department
            (consecutive rows sharing building name+address fold into one
            building, which is imported already Committed)
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Callable

from . import csvio
from .assets import AssetService
from .auth import AccountService
from .errors import (
    ConflictError,
    NotAuthorizedError,
    UuisError,
    ValidationError,
)
from .locations import LOCATION_TYPES, LocationService
from .software import SoftwareService
from .store import Store, iso_ms, utc_now

MAX_BYTES = 2 * 1024 * 1024  # strict upper bound, 2 MB files are refused
MAX_CONCURRENT = 9

ASSET_HEADER = [
    "barcode", "owner_faculty", "category", "furniture_type", "equipment_type",
    "storage_unit_type", "compartment_count", "computer_type", "manufacturer",
    "model", "serial_number", "legacy_code", "date_purchased",
    "warranty_expiration", "location",
]
SOFTWARE_HEADER = [
    "name", "vendor", "category", "version", "serial_number", "license_type",
    "max_installations", "active", "expiry_date",
]
LOCATION_HEADER = [
    "building_name", "building_address", "floor", "location_number", "area",
    "location_type", "faculty", "department",
]

HEADERS = {
    "physical_asset": ASSET_HEADER,
    "software": SOFTWARE_HEADER,
    "location": LOCATION_HEADER,
}

_job_seq = itertools.count(1)


@dataclass
class ImportJob:
    job_id: str
    kind: str
    byte_size: int
    submitted_by: str
    at: str
    outcome: dict = field(default_factory=dict)


class ImportGate:
    """Admission counter: at most ``limit`` imports execute concurrently."""

    def __init__(self, limit: int = MAX_CONCURRENT):
        self.limit = limit
        self._running = 0
        self._lock = threading.Lock()

    def acquire(self) -> bool:
        with self._lock:
            if self._running >= self.limit:
                return False
            self._running += 1
            return True

    def release(self):
        with self._lock:
            self._running -= 1

    @property
    def running(self) -> int:
        with self._lock:
            return self._running


class BulkImportService:
    def __init__(
        self,
        store: Store,
        accounts: AccountService,
        permissions,
        assets: AssetService,
        software: SoftwareService,
        locations: LocationService,
        clock: Callable[[], datetime] = utc_now,
    ):
        self._store = store
        self._accounts = accounts
        self._permissions = permissions
        self._assets = assets
        self._software = software
        self._locations = locations
        self._clock = clock
        self.gate = ImportGate()
        self._row_fault: Callable[[int], None] | None = None  # test hook
        self._after_admission: Callable[[], None] | None = None  # test hook

    def import_csv(self, session_id: str, kind: str, filename: str, data: bytes) -> ImportJob:
        _, user = self._accounts.authenticate(session_id)
        if user["role"] < 1:
            raise NotAuthorizedError("not-authorized", "requires role 1 or above")
        self._permissions.require(user, "bulk_import")
        if kind not in HEADERS:
            raise ValidationError("unknown-kind", kind)
        if not filename.lower().endswith(".csv"):
            raise ValidationError("bad-extension", filename)
        if len(data) >= MAX_BYTES:
            raise ValidationError("oversize", f"{len(data)} bytes")
        if not self.gate.acquire():
            raise ConflictError("too-many-imports")
        try:
            if self._after_admission is not None:
                self._after_admission()
            return self._run(user, kind, data)
        finally:
            self.gate.release()

    def _run(self, user: dict, kind: str, data: bytes) -> ImportJob:
        job = ImportJob(
            job_id=f"import-{next(_job_seq)}",
            kind=kind,
            byte_size=len(data),
            submitted_by=user["user_id"],
            at=iso_ms(self._clock()),
        )
        text = csvio.decode_ascii(data)
        try:
            header = _sniff_header(text)
            if header != HEADERS[kind] and header in HEADERS.values():
                raise ValidationError("kind-mismatch",
                                      next(k for k, h in HEADERS.items() if h == header))
            rows = csvio.parse_rows(text, HEADERS[kind])
            builder = {"physical_asset": self._build_assets,
                       "software": self._build_software,
                       "location": self._build_locations}[kind]
            plan = builder(rows)
        except csvio.RowError as exc:
            job.outcome = {"result": "failure", "row": exc.row, "column": exc.column,
                           "message": exc.message}
            return job
        with self._store.transaction(user["user_id"]) as txn:
            for index, write in plan:
                if self._row_fault is not None:
                    self._row_fault(index)
                kind_name, entity, id_field = write
                entity[id_field] = txn.next_id()
                if kind_name == "building":
                    for floor in entity["floors"]:
                        floor["floor_id"] = txn.next_id()
                if kind_name == "license":
                    entity["software_id"] = entity.pop("_software_ref")["software_id"]
                if kind_name == "location":
                    building = entity.pop("_building_ref")
                    entity["building_id"] = building["building_id"]
                    entity["floor_id"] = entity.pop("_floor_ref")["floor_id"]
                txn.insert(kind_name, entity[id_field], entity)
        job.outcome = {"result": "success", "row_count": len(rows)}
        return job

    # -- per-kind planners ------------------------------------------------------
    # Each returns [(data row index, (entity kind, record, id field))] and
    # raises RowError on the first bad cell.  Records needing parent ids carry
    # object references resolved at insert time, after ids are minted.

    def _build_assets(self, rows: list) -> list:
        plan = []
        barcodes = {asset["barcode"] for _, asset in self._store.iter_records("asset")}
        for index, row in enumerate(rows, start=1):
            if row["barcode"] in barcodes:
                raise csvio.RowError(index, "barcode", f"duplicate barcode '{row['barcode']}'")
            barcodes.add(row["barcode"])
            fields = {
                "barcode": row["barcode"],
                "owner_faculty": row["owner_faculty"],
                "category": row["category"],
                "manufacturer": row["manufacturer"] or None,
                "model": row["model"] or None,
                "legacy_code": row["legacy_code"] or None,
                "date_purchased": row["date_purchased"] or None,
                "warranty_expiration": row["warranty_expiration"] or None,
                "location": row["location"] or None,
            }
            if row["category"] == "Furniture":
                furniture = {"furniture_type": row["furniture_type"]}
                if row["furniture_type"] == "Storage unit":
                    count = _parse_int(row["compartment_count"], index, "compartment_count")
                    furniture["storage"] = {
                        "storage_unit_type": row["storage_unit_type"],
                        "compartment_count": count,
                    }
                elif row["storage_unit_type"] or row["compartment_count"]:
                    raise csvio.RowError(index, "storage_unit_type",
                                         "storage fields given for non-storage furniture")
                fields["furniture"] = furniture
                for column in ("equipment_type", "computer_type", "serial_number"):
                    if row[column]:
                        raise csvio.RowError(index, column,
                                             f"{column} given for furniture row")
            elif row["category"] == "Equipment":
                equipment = {"equipment_type": row["equipment_type"],
                             "serial_number": row["serial_number"] or None}
                if row["equipment_type"] == "Computer":
                    equipment["computer"] = {"computer_type": row["computer_type"]}
                elif row["computer_type"]:
                    raise csvio.RowError(index, "computer_type",
                                         "computer_type given for non-computer row")
                for column in ("furniture_type", "storage_unit_type", "compartment_count"):
                    if row[column]:
                        raise csvio.RowError(index, column, f"{column} given for equipment row")
                fields["equipment"] = equipment
            else:
                raise csvio.RowError(index, "category", f"invalid category '{row['category']}'")
            try:
                record, _ = self._assets.build_asset_record(fields)
            except UuisError as exc:
                column = "category"
                detail = exc.detail or ""
                if detail in ASSET_HEADER:
                    column = detail
                elif detail.split(" ")[0] in ASSET_HEADER:
                    column = detail.split(" ")[0]
                raise csvio.RowError(index, column, exc.code) from None
            plan.append((index, ("asset", record, "asset_id")))
        return plan

    def _build_software(self, rows: list) -> list:
        plan = []
        serials = {lic["serial_number"] for _, lic in self._store.iter_records("license")}
        current_title = None
        current_key = None
        for index, row in enumerate(rows, start=1):
            key = (row["name"], row["vendor"])
            if current_key != key:
                if not row["name"]:
                    raise csvio.RowError(index, "name", "software name is mandatory")
                current_title = {
                    "software_id": None,
                    "name": row["name"],
                    "vendor": row["vendor"] or None,
                    "category": row["category"] or None,
                    "description": None,
                }
                current_key = key
                plan.append((index, ("software", current_title, "software_id")))
            if row["serial_number"] in serials:
                raise csvio.RowError(index, "serial_number",
                                     f"duplicate serial '{row['serial_number']}'")
            serials.add(row["serial_number"])
            for column in ("version", "serial_number", "license_type", "max_installations"):
                if not row[column]:
                    raise csvio.RowError(index, column, f"{column} is mandatory")
            active_text = row["active"].strip().lower()
            if active_text not in ("", "true", "false"):
                raise csvio.RowError(index, "active", f"invalid boolean '{row['active']}'")
            license_record = {
                "license_id": None,
                "_software_ref": current_title,
                "version": row["version"],
                "serial_number": row["serial_number"],
                "license_type": row["license_type"],
                "max_installations": _parse_int(row["max_installations"], index,
                                                "max_installations"),
                "active": active_text != "false",
                "purpose": None,
                "requirements": None,
                "requisition_no": None,
                "purchase_order_no": None,
                "expiry_date": _parse_date(row["expiry_date"], index, "expiry_date"),
                "installed_on": [],
            }
            plan.append((index, ("license", license_record, "license_id")))
        return plan

    def _build_locations(self, rows: list) -> list:
        plan = []
        existing = {(b["name"], b["address"]) for _, b in self._store.iter_records("building")}
        seen_in_file = set()
        current = None
        current_key = None
        current_floor = None
        floor_numbers: set = set()
        for index, row in enumerate(rows, start=1):
            key = (row["building_name"], row["building_address"])
            if current_key != key:
                if not row["building_name"]:
                    raise csvio.RowError(index, "building_name", "building name is mandatory")
                if not row["building_address"]:
                    raise csvio.RowError(index, "building_address",
                                         "building address is mandatory")
                if key in existing or key in seen_in_file:
                    raise csvio.RowError(index, "building_name",
                                         f"duplicate building '{row['building_name']}'")
                seen_in_file.add(key)
                current = {
                    "building_id": None,
                    "name": row["building_name"],
                    "address": row["building_address"],
                    "state": "Committed",  # bulk data is presumed authoritative
                    "floors": [],
                }
                current_key = key
                current_floor = None
                plan.append((index, ("building", current, "building_id")))
            if not row["floor"]:
                raise csvio.RowError(index, "floor", "floor is mandatory")
            if current_floor is None or current_floor["number_or_name"] != row["floor"]:
                if any(f["number_or_name"] == row["floor"] for f in current["floors"]):
                    raise csvio.RowError(index, "floor",
                                         f"floor '{row['floor']}' repeats non-consecutively")
                current_floor = {"floor_id": None, "number_or_name": row["floor"], "area": 0.0}
                current["floors"].append(current_floor)
                floor_numbers = set()
            if not row["location_number"]:
                raise csvio.RowError(index, "location_number", "location number is mandatory")
            if row["location_number"] in floor_numbers:
                raise csvio.RowError(index, "location_number",
                                     f"duplicate location '{row['location_number']}' on floor")
            floor_numbers.add(row["location_number"])
            area = _parse_area(row["area"], index)
            if row["location_type"] and row["location_type"] not in LOCATION_TYPES:
                raise csvio.RowError(index, "location_type",
                                     f"invalid location type '{row['location_type']}'")
            # the schema carries no floor area; aggregate from its locations
            current_floor["area"] = round(current_floor["area"] + area, 6)
            location = {
                "location_id": None,
                "_building_ref": current,
                "_floor_ref": current_floor,
                "number": row["location_number"],
                "area": area,
                "location_type": row["location_type"] or None,
                "faculty": row["faculty"] or None,
                "department": row["department"] or None,
                "available": False,
                "lab_head": None,
            }
            plan.append((index, ("location", location, "location_id")))
        return plan


def _sniff_header(text: str):
    first_line = text.split("\r\n", 1)[0].split("\n", 1)[0]
    return first_line.split(",") if first_line else []


def _parse_int(value: str, row: int, column: str) -> int:
    try:
        number = int(value)
    except (TypeError, ValueError):
        raise csvio.RowError(row, column, f"invalid integer '{value}'") from None
    if number < 1:
        raise csvio.RowError(row, column, f"must be positive, got {number}")
    return number


def _parse_date(value: str, row: int, column: str) -> str | None:
    if not value:
        return None
    try:
        date.fromisoformat(value)
    except ValueError:
        raise csvio.RowError(row, column, f"invalid date '{value}'") from None
    return value


def _parse_area(value: str, row: int) -> float:
    try:
        area = float(value)
    except (TypeError, ValueError):
        raise csvio.RowError(row, "area", f"invalid number '{value}'") from None
    if area <= 0:
        raise csvio.RowError(row, "area", f"must be positive, got {value}")
    return area
