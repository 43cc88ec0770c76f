"""Whole-store invariant sweep.

Walks every committed record and reports violations of the structural rules
the modules are supposed to preserve.  The load harness runs this after a
scenario; an empty result means no operation interleaving corrupted state.
"""

from __future__ import annotations

from .assets import ASSET_STATUSES
from .locations import BUILDING_STATES, LOCATION_TYPES
from .requests_flow import GENERAL_CATEGORIES, REQUEST_STATUSES, SPECIFIC_PAYLOAD_FIELDS
from .store import AUDIT_OPS, ENTITY_KINDS, Store


def invariant_sweep(store: Store) -> list:
    problems: list[str] = []
    _check_users(store, problems)
    _check_sessions(store, problems)
    _check_assets_and_groups(store, problems)
    _check_licenses(store, problems)
    _check_locations(store, problems)
    _check_requests(store, problems)
    _check_audit(store, problems)
    return problems


def _check_users(store, problems):
    usernames = set()
    for uid, user in store.iter_records("user"):
        if user["role"] not in (0, 1, 2, 3):
            problems.append(f"user {uid}: invalid role {user['role']}")
        if user["role"] >= 1 and not user.get("department"):
            problems.append(f"user {uid}: role {user['role']} without department")
        if user["role"] >= 2 and not user.get("faculty"):
            problems.append(f"user {uid}: role {user['role']} without faculty")
        if user["username"] in usernames:
            problems.append(f"user {uid}: duplicate username {user['username']}")
        usernames.add(user["username"])


def _check_sessions(store, problems):
    for sid, session in store.iter_records("session"):
        if session["logout_at"] is not None and session["logout_at"] < session["login_at"]:
            problems.append(f"session {sid}: logout before login")


def _check_assets_and_groups(store, problems):
    barcodes = set()
    membership = {}
    for gid, group in store.iter_records("group"):
        if not group["member_asset_ids"]:
            problems.append(f"group {gid}: empty group persisted")
        for asset_id in group["member_asset_ids"]:
            if asset_id in membership:
                problems.append(f"asset {asset_id}: member of two groups "
                                f"({membership[asset_id]}, {gid})")
            membership[asset_id] = gid
    for aid, asset in store.iter_records("asset"):
        if asset["status"] not in ASSET_STATUSES:
            problems.append(f"asset {aid}: invalid status {asset['status']}")
        if asset["barcode"] in barcodes:
            problems.append(f"asset {aid}: duplicate barcode {asset['barcode']}")
        barcodes.add(asset["barcode"])
        detail = asset["detail"] or {}
        if asset["category"] == "Furniture":
            if "furniture_type" not in detail:
                problems.append(f"asset {aid}: furniture without furniture detail")
            storage = detail.get("storage")
            is_storage = detail.get("furniture_type") == "Storage unit"
            if bool(storage) != is_storage:
                problems.append(f"asset {aid}: storage block mismatch")
            if storage:
                count = storage["compartment_count"]
                for index in storage["compartment_users"]:
                    if not 1 <= int(index) <= count:
                        problems.append(f"asset {aid}: compartment index {index} out of bounds")
        elif asset["category"] == "Equipment":
            if "equipment_type" not in detail:
                problems.append(f"asset {aid}: equipment without equipment detail")
            has_computer = bool(detail.get("computer"))
            if has_computer != (detail.get("equipment_type") == "Computer"):
                problems.append(f"asset {aid}: computer block mismatch")
        else:
            problems.append(f"asset {aid}: invalid category {asset['category']}")
        expected_group = membership.get(aid)
        if asset["group_id"] != expected_group:
            problems.append(f"asset {aid}: group back-reference {asset['group_id']} "
                            f"!= membership {expected_group}")


def _check_licenses(store, problems):
    for lid, lic in store.iter_records("license"):
        if len(lic["installed_on"]) > lic["max_installations"]:
            problems.append(f"license {lid}: installs exceed max_installations")
        if store.get_ref("software", lic["software_id"]) is None:
            problems.append(f"license {lid}: orphan (software {lic['software_id']})")
        for asset_id in lic["installed_on"]:
            asset = store.get_ref("asset", asset_id)
            if asset is None or asset["detail"].get("equipment_type") != "Computer":
                problems.append(f"license {lid}: installed on non-computer {asset_id}")


def _check_locations(store, problems):
    floors = {}
    for bid, building in store.iter_records("building"):
        if building["state"] not in BUILDING_STATES:
            problems.append(f"building {bid}: invalid state {building['state']}")
        names = [f["number_or_name"] for f in building["floors"]]
        if len(names) != len(set(names)):
            problems.append(f"building {bid}: duplicate floor names")
        for floor in building["floors"]:
            floors[floor["floor_id"]] = bid
    numbers = set()
    for lid, location in store.iter_records("location"):
        if location["floor_id"] not in floors:
            problems.append(f"location {lid}: unknown floor {location['floor_id']}")
        elif floors[location["floor_id"]] != location["building_id"]:
            problems.append(f"location {lid}: building/floor mismatch")
        key = (location["floor_id"], location["number"])
        if key in numbers:
            problems.append(f"location {lid}: duplicate number on floor")
        numbers.add(key)
        if location["location_type"] not in LOCATION_TYPES + (None,):
            problems.append(f"location {lid}: invalid type {location['location_type']}")
        if location["lab_head"] and location["location_type"] != "Research Lab":
            problems.append(f"location {lid}: lab head on non-lab")
    for aid, asset in store.iter_records("asset"):
        if asset["location"] is None:
            continue
        location = store.get_ref("location", asset["location"])
        if location is None:
            problems.append(f"asset {aid}: placed in unknown location {asset['location']}")
            continue
        building = store.get_ref("building", location["building_id"])
        if building is None or building["state"] != "Committed":
            problems.append(f"asset {aid}: placed in non-committed building")


def _check_requests(store, problems):
    for rid, request in store.iter_records("request"):
        if request["status"] not in REQUEST_STATUSES:
            problems.append(f"request {rid}: invalid status {request['status']}")
        closed = request["status"] == "Closed"
        if bool(request["closure_note"]) != closed:
            problems.append(f"request {rid}: closure note/state mismatch")
        if request["category"] in GENERAL_CATEGORIES:
            if not request["description"]:
                problems.append(f"request {rid}: general request without description")
            for field in ("barcode", "location", "group_id", "target_username",
                          "compartment_number"):
                if request[field] is not None:
                    problems.append(f"request {rid}: general request carries {field}")
        elif request["category"] in SPECIFIC_PAYLOAD_FIELDS:
            for field in SPECIFIC_PAYLOAD_FIELDS[request["category"]]:
                if request[field] in (None, ""):
                    problems.append(f"request {rid}: missing payload field {field}")
            if closed:
                problems.append(f"request {rid}: specific request closed")
        else:
            problems.append(f"request {rid}: invalid category {request['category']}")


def _check_audit(store, problems):
    for i, rec in enumerate(store.audit_tail(0)):
        if rec["op"] not in AUDIT_OPS:
            problems.append(f"audit[{i}]: invalid op {rec['op']}")
        if rec["entity_kind"] not in ENTITY_KINDS:
            problems.append(f"audit[{i}]: invalid kind {rec['entity_kind']}")
        if rec["op"] in ("insert", "login") and not (rec["before"] == "" and rec["after"]):
            problems.append(f"audit[{i}]: bad insert shape")
        if rec["op"] == "delete" and not (rec["before"] and rec["after"] == ""):
            problems.append(f"audit[{i}]: bad delete shape")
        if rec["op"] in ("update", "logout"):
            if not (rec["before"] and rec["after"]) or rec["before"] == rec["after"]:
                problems.append(f"audit[{i}]: bad update shape")
