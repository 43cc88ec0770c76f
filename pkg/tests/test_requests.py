"""Request state machine: submission, approval decisions, visibility, closure."""

import pytest

from uuis.core.errors import (
    ConflictError,
    MissingFieldError,
    NotAuthorizedError,
    NotFoundError,
    ValidationError,
)
from uuis.core.requests_flow import CROSS, INTRA, decide_approval

_seq = iter(range(1, 100000))


# Hand-enumerated oracle: (approver role, approver faculty, scope) -> approvable.
# Rule: role 3 approves anything; role 2 approves intra-faculty transactions of
# its own faculty; nobody else approves anything.
DECISION_ORACLE = []
for role in (0, 1, 2, 3):
    for fac in ("F", "G"):
        for scope_name, scope in (("intra-F", (INTRA, "F")),
                                  ("intra-G", (INTRA, "G")),
                                  ("cross", (CROSS, None))):
            if role == 3:
                expected = True
            elif role == 2 and scope_name == f"intra-{fac}":
                expected = True
            else:
                expected = False
            DECISION_ORACLE.append((role, fac, scope, expected))
assert len(DECISION_ORACLE) == 24


def test_decision_table_matches_hand_built_oracle():
    for role, faculty, scope, expected in DECISION_ORACLE:
        decision = decide_approval(scope, role, faculty)
        assert decision.approvable is expected, (role, faculty, scope)
        if expected and role == 3:
            assert decision.reason == "role3"
        elif expected:
            assert decision.reason == "intra_faculty_role2_match"
        else:
            assert decision.reason == "not_authorized"


@pytest.fixture
def inventory(world):
    """Two faculties, one committed location per faculty, assets and a group."""
    world.create_user("uadmin", role=3, faculty="F", department="D1",
                      grants=("manage_physical_assets",))
    mgr = world.login("uadmin")
    loc_f = world.make_committed_location(faculty="F", department="D1")
    loc_g = world.make_committed_location(faculty="G", department="D9")

    def add(owner, category="Furniture", **kw):
        barcode = f"BC{next(_seq):05d}"
        fields = {"barcode": barcode, "owner_faculty": owner, "category": category}
        if category == "Furniture":
            fields["furniture"] = kw.get("furniture",
                                         {"furniture_type": "Office chair"})
        else:
            fields["equipment"] = kw.get("equipment",
                                         {"equipment_type": "Computer",
                                          "computer": {"computer_type": "Tower"}})
        return world.svc.assets.add_asset(mgr, fields)["asset"]

    return {"mgr": mgr, "loc_f": loc_f, "loc_g": loc_g, "add": add}


def test_submit_general_stores_pending_with_snapshot(world):
    user = world.create_user("kim", role=1, faculty="F", department="D1")
    sid = world.login("kim")
    request = world.svc.requests.submit_general(sid, "general_technical",
                                                "lab printer jams")
    assert request["status"] == "Pending"
    assert request["request_id"]
    origin = request["originator"]
    assert origin == {"username": "kim", "faculty": "F", "department": "D1", "level": 1}
    # snapshot is immune to later account edits
    record = world.store.get("user", user["user_id"])
    record["department"] = "D2"
    with world.store.transaction("system") as txn:
        txn.update("user", user["user_id"], record)
    stored = world.store.get("request", request["request_id"])
    assert stored["originator"]["department"] == "D1"


def test_submit_general_requires_description(world):
    world.create_user("kim")
    sid = world.login("kim")
    with pytest.raises(ValidationError) as err:
        world.svc.requests.submit_general(sid, "general_technical", "")
    assert err.value.code == "missing-description"
    with pytest.raises(ValidationError):
        world.svc.requests.submit_general(sid, "nonsense_category", "text")


def test_submit_specific_role3_auto_approves_and_mutates(world, inventory):
    asset = inventory["add"]("G", category="Equipment")
    world.create_user("target", role=0)
    world.create_user("boss", role=3, faculty="F", department="D1")
    sid = world.login("boss")
    request = world.svc.requests.submit_specific(
        sid, "assign_equipment_to_user",
        {"barcode": asset["barcode"], "target_username": "target"})
    assert request["status"] == "Approved"
    assert request["decided_at"] is not None
    stored = world.store.get("asset", asset["asset_id"])
    assert stored["detail"]["assigned_user"] == "target"


def test_submit_specific_role0_stays_pending_inventory_untouched(world, inventory):
    asset = inventory["add"]("F")
    world.create_user("stud", role=0)
    sid = world.login("stud")
    before = world.store.get("asset", asset["asset_id"])
    request = world.svc.requests.submit_specific(
        sid, "move_asset_to_location",
        {"barcode": asset["barcode"], "location": inventory["loc_f"]["location_id"]})
    assert request["status"] == "Pending"
    assert world.store.get("asset", asset["asset_id"]) == before


def test_submit_specific_role2_intra_vs_cross(world, inventory):
    world.create_user("fadmin2", role=2, faculty="F", department="D1")
    sid = world.login("fadmin2")
    own = inventory["add"]("F")
    request = world.svc.requests.submit_specific(
        sid, "move_asset_to_location",
        {"barcode": own["barcode"], "location": inventory["loc_f"]["location_id"]})
    assert request["status"] == "Approved"
    assert world.store.get("asset", own["asset_id"])["location"] == \
        inventory["loc_f"]["location_id"]
    foreign = inventory["add"]("G")
    request = world.svc.requests.submit_specific(
        sid, "move_asset_to_location",
        {"barcode": foreign["barcode"], "location": inventory["loc_f"]["location_id"]})
    assert request["status"] == "Pending"  # G asset to F location crosses faculties
    own2 = inventory["add"]("F")
    request = world.svc.requests.submit_specific(
        sid, "move_asset_to_location",
        {"barcode": own2["barcode"], "location": inventory["loc_g"]["location_id"]})
    assert request["status"] == "Pending"  # F asset to G location crosses too


def test_submit_specific_missing_fields_and_unknown_refs(world, inventory):
    world.create_user("kim")
    sid = world.login("kim")
    with pytest.raises(MissingFieldError) as err:
        world.svc.requests.submit_specific(sid, "move_asset_to_location",
                                           {"barcode": "BC1"})
    assert err.value.detail == "location"
    with pytest.raises(NotFoundError) as err:
        world.svc.requests.submit_specific(
            sid, "move_asset_to_location",
            {"barcode": "NO-SUCH", "location": inventory["loc_f"]["location_id"]})
    assert err.value.code == "unknown-reference"
    asset = inventory["add"]("F")
    with pytest.raises(NotFoundError):
        world.svc.requests.submit_specific(
            sid, "assign_equipment_to_user",
            {"barcode": asset["barcode"], "target_username": "ghost"})
    # nothing was stored along the way
    assert world.store.count("request") == 0


def test_submission_autoapproval_matches_approval_predicate(world, inventory):
    """Same predicate at both call sites: a pending copy of an auto-approved
    submission must be approvable by the same user, and vice versa."""
    world.create_user("fadmin3", role=2, faculty="F", department="D1")
    world.create_user("stud3", role=0, department="D1")
    cases = [("fadmin3", "F", True), ("fadmin3", "G", False), ("stud3", "F", False)]
    for username, owner, expect_approved in cases:
        asset = inventory["add"](owner)
        sid = world.login(username)
        request = world.svc.requests.submit_specific(
            sid, "move_asset_to_location",
            {"barcode": asset["barcode"],
             "location": inventory["loc_f" if owner == "F" else "loc_g"]["location_id"]})
        auto = request["status"] == "Approved"
        assert auto is expect_approved
        if not auto:
            scope = world.svc.requests.derive_scope(request)
            user = world.svc.permissions.find_user_by_username(username)
            assert decide_approval(scope, user["role"], user["faculty"]).approvable is False


def test_search_visibility_filters(world, inventory):
    world.create_user("stud_a", role=0, department="D1")
    world.create_user("stud_b", role=0, department="D1")
    world.create_user("dept1", role=1, department="D1")
    world.create_user("dept2", role=1, department="D2")
    world.create_user("fac", role=2, faculty="F", department="D1")
    world.create_user("uni", role=3, faculty="F", department="D1")
    for username in ("stud_a", "stud_b", "dept1", "dept2", "fac"):
        sid = world.login(username)
        world.svc.requests.submit_general(sid, "general_technical", f"report by {username}")

    sid_a = world.login("stud_a")
    rows = world.svc.requests.search_requests(sid_a)
    assert len(rows) == 1  # role 0: own requests only
    mine = world.svc.requests.view_request(sid_a, rows[0]["request_id"])
    assert mine["originator"]["username"] == "stud_a"

    sid_d1 = world.login("dept1")
    rows = world.svc.requests.search_requests(sid_d1)
    owners = {world.svc.requests.view_request(sid_d1, r["request_id"])["originator"]["username"]
              for r in rows}
    assert owners == {"stud_a", "stud_b", "dept1"}  # level <= 1 and department D1

    sid_fac = world.login("fac")
    rows = world.svc.requests.search_requests(sid_fac)
    owners = {world.svc.requests.view_request(sid_fac, r["request_id"])["originator"]["username"]
              for r in rows}
    assert owners == {"stud_a", "stud_b", "dept1", "fac"}  # D1 scoped, level <= 2

    sid_uni = world.login("uni")
    assert len(world.svc.requests.search_requests(sid_uni)) == 5  # unrestricted


def test_search_criteria_conjunction(world):
    world.create_user("kim", role=0, department="D1")
    sid = world.login("kim")
    world.svc.requests.submit_general(sid, "general_technical", "will close")
    world.svc.requests.submit_general(sid, "general_technical", "stays open")
    world.svc.requests.submit_general(sid, "general_administrative", "other kind")
    world.create_user("closer", role=3, faculty="F", department="D1",
                      grants=("close_general_technical",))
    closer_sid = world.login("closer")
    target = world.svc.requests.search_requests(sid, {"description": "will close"})[0]
    world.svc.requests.close_general(closer_sid, target["request_id"], "done")
    rows = world.svc.requests.search_requests(
        sid, {"statuses": ["Closed"], "categories": ["general_technical"]})
    assert [r["request_id"] for r in rows] == [target["request_id"]]
    assert world.svc.requests.search_requests(sid, {"statuses": ["Pending"],
                                                    "categories": ["general_technical"]})
    assert world.svc.requests.search_requests(sid, {"request_id": "nope"}) == []


def test_view_request_invisible_is_not_found(world):
    world.create_user("kim", role=0, department="D1")
    world.create_user("other", role=0, department="D1")
    sid = world.login("kim")
    request = world.svc.requests.submit_general(sid, "general_technical", "mine")
    other_sid = world.login("other")
    with pytest.raises(NotFoundError):
        world.svc.requests.view_request(other_sid, request["request_id"])
    with pytest.raises(NotFoundError):
        world.svc.requests.view_request(other_sid, "99999999")
    full = world.svc.requests.view_request(sid, request["request_id"])
    assert full == world.store.get("request", request["request_id"])


def test_close_general_designation_rules(world):
    world.create_user("stud", role=0, department="D1")
    sid = world.login("stud")
    tech = world.svc.requests.submit_general(sid, "general_technical", "fix it")
    admin = world.svc.requests.submit_general(sid, "general_administrative", "lost chair")

    # role 3 without the designation permission is refused
    world.create_user("undesignated", role=3, faculty="F", department="D1")
    u_sid = world.login("undesignated")
    with pytest.raises(NotAuthorizedError) as err:
        world.svc.requests.close_general(u_sid, tech["request_id"], "note")
    assert err.value.code == "not-designated"

    world.create_user("techcloser", role=3, faculty="F", department="D1",
                      grants=("close_general_technical",))
    t_sid = world.login("techcloser")
    with pytest.raises(ValidationError) as err:
        world.svc.requests.close_general(t_sid, tech["request_id"], "  ")
    assert err.value.code == "missing-note"
    closed = world.svc.requests.close_general(t_sid, tech["request_id"], "replaced cable")
    assert closed["status"] == "Closed" and closed["closure_note"] == "replaced cable"
    with pytest.raises(ConflictError) as err:
        world.svc.requests.close_general(t_sid, tech["request_id"], "again")
    assert err.value.code == "already-terminal"

    # administrative closure is gated per originator level (L0 here)
    with pytest.raises(NotAuthorizedError):
        world.svc.requests.close_general(t_sid, admin["request_id"], "note")
    world.create_user("l0closer", role=3, faculty="F", department="D1",
                      grants=("close_general_admin_L0",))
    l0_sid = world.login("l0closer")
    world.svc.requests.close_general(l0_sid, admin["request_id"], "resolved")


def test_approve_specific_group_move_updates_every_member(world, inventory):
    a1 = inventory["add"]("F")
    a2 = inventory["add"]("G")
    group = world.svc.assets.create_group(inventory["mgr"],
                                          [a1["asset_id"], a2["asset_id"]])["group"]
    world.create_user("stud", role=0, department="D1")
    sid = world.login("stud")
    request = world.svc.requests.submit_specific(
        sid, "move_group_to_location",
        {"group_id": group["group_id"], "location": inventory["loc_f"]["location_id"]})
    assert request["status"] == "Pending"  # mixed-faculty group is cross scoped
    world.create_user("uni", role=3, faculty="F", department="D1")
    uni_sid = world.login("uni")
    approved = world.svc.requests.approve_specific(uni_sid, request["request_id"])
    assert approved["status"] == "Approved"
    for aid in (a1["asset_id"], a2["asset_id"]):
        assert world.store.get("asset", aid)["location"] == \
            inventory["loc_f"]["location_id"]
    with pytest.raises(ConflictError) as err:
        world.svc.requests.approve_specific(uni_sid, request["request_id"])
    assert err.value.code == "already-terminal"


def test_approve_wrong_faculty_role2_changes_nothing(world, inventory):
    asset = inventory["add"]("F")
    world.create_user("stud", role=0, department="D1")
    sid = world.login("stud")
    request = world.svc.requests.submit_specific(
        sid, "move_asset_to_location",
        {"barcode": asset["barcode"], "location": inventory["loc_f"]["location_id"]})
    world.create_user("gadmin2", role=2, faculty="G", department="D9")
    g_sid = world.login("gadmin2")
    before = world.store.get("asset", asset["asset_id"])
    with pytest.raises((NotAuthorizedError, NotFoundError)):
        # G-faculty role 2 in another department cannot even see it; a same-
        # department role-2 of the wrong faculty gets not-authorized
        world.svc.requests.approve_specific(g_sid, request["request_id"])
    world.create_user("fadmin9", role=2, faculty="G", department="D1")
    f_sid = world.login("fadmin9")
    with pytest.raises(NotAuthorizedError) as err:
        world.svc.requests.approve_specific(f_sid, request["request_id"])
    assert err.value.code == "not-authorized"
    assert world.store.get("asset", asset["asset_id"]) == before
    assert world.store.get("request", request["request_id"])["status"] == "Pending"


def test_approve_retired_asset_conflicts_and_stays_pending(world, inventory):
    asset = inventory["add"]("F")
    world.create_user("stud", role=0, department="D1")
    sid = world.login("stud")
    request = world.svc.requests.submit_specific(
        sid, "move_asset_to_location",
        {"barcode": asset["barcode"], "location": inventory["loc_f"]["location_id"]})
    world.svc.assets.update_asset(inventory["mgr"], asset["asset_id"],
                                  {"status": "Retired"})
    world.create_user("uni", role=3, faculty="F", department="D1")
    uni_sid = world.login("uni")
    with pytest.raises(ConflictError) as err:
        world.svc.requests.approve_specific(uni_sid, request["request_id"])
    assert err.value.code == "asset-retired"
    stored = world.store.get("request", request["request_id"])
    assert stored["status"] == "Pending"
    assert world.store.get("asset", asset["asset_id"])["location"] is None


def test_compartment_assignment_validates_bounds(world, inventory):
    locker = inventory["add"]("F", furniture={
        "furniture_type": "Storage unit",
        "storage": {"storage_unit_type": "Locker", "compartment_count": 3},
    })
    world.create_user("target", role=0)
    world.create_user("uni", role=3, faculty="F", department="D1")
    sid = world.login("uni")
    request = world.svc.requests.submit_specific(
        sid, "assign_storage_compartment_to_user",
        {"barcode": locker["barcode"], "compartment_number": 2,
         "target_username": "target"})
    assert request["status"] == "Approved"
    stored = world.store.get("asset", locker["asset_id"])
    assert stored["detail"]["storage"]["compartment_users"] == {"2": "target"}
    with pytest.raises(ValidationError):
        world.svc.requests.submit_specific(
            sid, "assign_storage_compartment_to_user",
            {"barcode": locker["barcode"], "compartment_number": 4,
             "target_username": "target"})


def test_assign_equipment_to_furniture_is_conflict(world, inventory):
    chair = inventory["add"]("F")
    world.create_user("target", role=0)
    world.create_user("uni", role=3, faculty="F", department="D1")
    sid = world.login("uni")
    with pytest.raises(ConflictError) as err:
        world.svc.requests.submit_specific(
            sid, "assign_equipment_to_user",
            {"barcode": chair["barcode"], "target_username": "target"})
    assert err.value.code == "not-equipment"
    assert world.store.count("request") == 0  # rolled back with the mutation


def test_assign_group_to_user_propagates_to_equipment_members(world, inventory):
    chair = inventory["add"]("F")
    computer = inventory["add"]("F", category="Equipment")
    group = world.svc.assets.create_group(
        inventory["mgr"], [chair["asset_id"], computer["asset_id"]])["group"]
    world.create_user("holder", role=0, faculty="F")
    world.create_user("fadmin4", role=2, faculty="F", department="D1")
    sid = world.login("fadmin4")
    request = world.svc.requests.submit_specific(
        sid, "assign_group_to_user",
        {"group_id": group["group_id"], "target_username": "holder"})
    assert request["status"] == "Approved"  # F group to F user is intra-F
    assert world.store.get("group", group["group_id"])["assigned_user"] == "holder"
    assert world.store.get("asset", computer["asset_id"])["detail"]["assigned_user"] == "holder"
    assert "assigned_user" not in world.store.get("asset", chair["asset_id"])["detail"]


def test_terminal_states_never_change(world):
    world.create_user("stud", role=0, department="D1")
    sid = world.login("stud")
    request = world.svc.requests.submit_general(sid, "general_technical", "x")
    world.create_user("closer", role=3, faculty="F", department="D1",
                      grants=("close_general_technical",))
    closer = world.login("closer")
    world.svc.requests.close_general(closer, request["request_id"], "done")
    with pytest.raises((ConflictError, ValidationError)):
        world.svc.requests.approve_specific(closer, request["request_id"])
    with pytest.raises(ConflictError):
        world.svc.requests.close_general(closer, request["request_id"], "again")
    assert world.store.get("request", request["request_id"])["status"] == "Closed"
