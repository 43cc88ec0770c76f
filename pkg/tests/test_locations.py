"""Building workflow state machine, location edits, lab-head custody."""

import pytest

from uuis.core.errors import (
    ConflictError,
    MissingFieldError,
    NotAuthorizedError,
    NotFoundError,
    UnauthenticatedError,
    ValidationError,
)

from conftest import TEST_PASSWORD


@pytest.fixture
def builder(world):
    world.create_user("root", role=3, faculty="F", department="D1",
                      grants=("create_remove_location", "edit_location"))
    return world.login("root")


def test_create_building_requires_reauth_and_yields_draft(world, builder):
    with pytest.raises(UnauthenticatedError) as err:
        world.svc.locations.create_building(builder, "WrongPass1", "Hall", "1 Main St")
    assert err.value.code == "reauth-failed"
    building = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    assert building["state"] == "Draft" and building["floors"] == []


def test_create_building_resumes_existing_draft(world, builder):
    first = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    again = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    assert again["building_id"] == first["building_id"]
    # a committed namesake cannot be re-created
    floor = world.svc.locations.add_floor(builder, first["building_id"], "G", 100.0)
    world.svc.locations.add_location(builder, floor["floor_id"], "101", 10.0)
    world.svc.locations.mark_building_complete(builder, first["building_id"])
    world.svc.locations.commit_building(builder, first["building_id"])
    with pytest.raises(ConflictError) as err:
        world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    assert err.value.code == "duplicate-building"


def test_workflow_gate_requires_role3_with_permission(world):
    world.create_user("mid", role=2)
    sid = world.login("mid")
    with pytest.raises(NotAuthorizedError):
        world.svc.locations.create_building(sid, TEST_PASSWORD, "Hall", "1 Main St")


def test_add_floor_ordering_and_duplicates(world, builder):
    building = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    world.svc.locations.add_floor(builder, building["building_id"], "G", 100.0)
    world.svc.locations.add_floor(builder, building["building_id"], "1", 90.0)
    names = [f["number_or_name"]
             for f in world.store.get("building", building["building_id"])["floors"]]
    assert names == ["G", "1"]
    with pytest.raises(ConflictError) as err:
        world.svc.locations.add_floor(builder, building["building_id"], "G", 80.0)
    assert err.value.code == "duplicate-floor"
    with pytest.raises(ValidationError):
        world.svc.locations.add_floor(builder, building["building_id"], "2", -5.0)


def test_add_location_defaults_unavailable_and_validates(world, builder):
    building = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    floor = world.svc.locations.add_floor(builder, building["building_id"], "G", 100.0)
    location = world.svc.locations.add_location(builder, floor["floor_id"], "101", 24.0)
    assert location["available"] is False and location["lab_head"] is None
    with pytest.raises(ConflictError) as err:
        world.svc.locations.add_location(builder, floor["floor_id"], "101", 12.0)
    assert err.value.code == "duplicate-location"
    with pytest.raises(MissingFieldError):
        world.svc.locations.add_location(builder, floor["floor_id"], "", 12.0)
    with pytest.raises(ValidationError):
        world.svc.locations.add_location(builder, floor["floor_id"], "102", 0)


def test_floor_and_location_additions_require_draft_state(world, builder):
    building = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    floor = world.svc.locations.add_floor(builder, building["building_id"], "G", 100.0)
    world.svc.locations.add_location(builder, floor["floor_id"], "101", 24.0)
    world.svc.locations.mark_building_complete(builder, building["building_id"])
    with pytest.raises(ConflictError) as err:
        world.svc.locations.add_floor(builder, building["building_id"], "1", 90.0)
    assert err.value.code == "state-violation"
    with pytest.raises(ConflictError):
        world.svc.locations.add_location(builder, floor["floor_id"], "102", 24.0)


def test_complete_requires_structure_and_notifies_supervisor(world, builder):
    building = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    with pytest.raises(ValidationError) as err:
        world.svc.locations.mark_building_complete(builder, building["building_id"])
    assert err.value.code == "empty-building"
    floor = world.svc.locations.add_floor(builder, building["building_id"], "G", 100.0)
    with pytest.raises(ValidationError) as err:
        world.svc.locations.mark_building_complete(builder, building["building_id"])
    assert err.value.code == "empty-floor" and err.value.detail == "G"
    world.svc.locations.add_location(builder, floor["floor_id"], "101", 24.0)
    world.svc.locations.mark_building_complete(builder, building["building_id"])
    assert len(world.emails(to="root@iufa.example")) == 1
    with pytest.raises(ConflictError):
        world.svc.locations.mark_building_complete(builder, building["building_id"])


def test_commit_requires_complete_state_and_supervisor_identity(world, builder):
    building = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    with pytest.raises(ConflictError) as err:
        world.svc.locations.commit_building(builder, building["building_id"])
    assert err.value.code == "not-complete"
    floor = world.svc.locations.add_floor(builder, building["building_id"], "G", 100.0)
    world.svc.locations.add_location(builder, floor["floor_id"], "101", 24.0)
    world.svc.locations.mark_building_complete(builder, building["building_id"])
    # another role-3 with the permission but not the supervisor identity
    world.create_user("other", role=3, grants=("create_remove_location",))
    other = world.login("other")
    with pytest.raises(NotAuthorizedError) as err:
        world.svc.locations.commit_building(other, building["building_id"])
    assert err.value.code == "not-supervisor"
    committed = world.svc.locations.commit_building(builder, building["building_id"])
    assert committed["state"] == "Committed"


def test_placement_check_gates_on_committed_building(world, builder):
    building = world.svc.locations.create_building(builder, TEST_PASSWORD, "Hall", "1 Main St")
    floor = world.svc.locations.add_floor(builder, building["building_id"], "G", 100.0)
    location = world.svc.locations.add_location(builder, floor["floor_id"], "101", 24.0)
    with pytest.raises(NotFoundError) as err:
        world.svc.locations.placement_check(location["location_id"])
    assert err.value.code == "unknown-reference"
    world.svc.locations.mark_building_complete(builder, building["building_id"])
    with pytest.raises(NotFoundError):
        world.svc.locations.placement_check(location["location_id"])
    world.svc.locations.commit_building(builder, building["building_id"])
    warning = world.svc.locations.placement_check(location["location_id"])
    assert warning is not None and "unavailable" in warning
    world.svc.locations.edit_location(builder, location["location_id"], {"available": True})
    assert world.svc.locations.placement_check(location["location_id"]) is None


def test_edit_location_scoping_and_faculty_gate(world):
    location = world.make_committed_location(faculty="F", department="D1")
    world.create_user("fadmin", role=2, faculty="F", grants=("edit_location",))
    world.create_user("gadmin", role=2, faculty="G", grants=("edit_location",))
    f_sid = world.login("fadmin")
    g_sid = world.login("gadmin")
    result = world.svc.locations.edit_location(f_sid, location["location_id"],
                                               {"location_type": "Office"})
    assert result["location"]["location_type"] == "Office"
    with pytest.raises(NotAuthorizedError) as err:
        world.svc.locations.edit_location(g_sid, location["location_id"],
                                          {"location_type": "Room"})
    assert err.value.code == "scope-violation"
    with pytest.raises(NotAuthorizedError) as err:
        world.svc.locations.edit_location(f_sid, location["location_id"], {"faculty": "G"})
    assert err.value.code == "faculty-edit-forbidden"
    root = world.login("root")
    result = world.svc.locations.edit_location(root, location["location_id"], {"faculty": "G"})
    assert result["location"]["faculty"] == "G"


def test_edit_location_away_from_lab_clears_head_with_warning(world):
    location = world.make_committed_location(faculty="F", department="D1",
                                             location_type="Research Lab")
    ta = world.create_user("ta", role=0, department="D1")
    world.create_user("dadmin", role=1, department="D1", grants=("assign_lab_head",))
    d_sid = world.login("dadmin")
    world.svc.locations.assign_lab_head(d_sid, location["location_id"], ta["user_id"])
    root = world.login("root")
    result = world.svc.locations.edit_location(root, location["location_id"],
                                               {"location_type": "Office"})
    assert result["location"]["lab_head"] is None
    assert result["warnings"]


def test_assign_lab_head_scope_and_type_rules(world):
    lab = world.make_committed_location(faculty="F", department="D1",
                                        location_type="Research Lab")
    office = world.make_committed_location(faculty="F", department="D1",
                                           location_type="Office")
    ta = world.create_user("ta", role=0, department="D1")
    world.create_user("d1admin", role=1, department="D1", grants=("assign_lab_head",))
    world.create_user("d2admin", role=1, department="D2", grants=("assign_lab_head",))
    d1 = world.login("d1admin")
    d2 = world.login("d2admin")
    result = world.svc.locations.assign_lab_head(d1, lab["location_id"], ta["user_id"])
    assert result["location"]["lab_head"] == ta["user_id"]
    assert result["previous_lab_head"] is None
    with pytest.raises(ConflictError) as err:
        world.svc.locations.assign_lab_head(d1, office["location_id"], ta["user_id"])
    assert err.value.code == "not-a-lab"
    with pytest.raises(NotAuthorizedError) as err:
        world.svc.locations.assign_lab_head(d2, lab["location_id"], ta["user_id"])
    assert err.value.code == "scope-violation"
    with pytest.raises(NotFoundError):
        world.svc.locations.assign_lab_head(d1, lab["location_id"], "no-such-user")
    # replacement reports the previous holder
    ta2 = world.create_user("ta2", role=0, department="D1")
    result = world.svc.locations.assign_lab_head(d1, lab["location_id"], ta2["user_id"])
    assert result["previous_lab_head"] == ta["user_id"]


def test_display_identifier_format(world):
    location = world.make_committed_location()
    name = world.svc.locations.display_identifier(location)
    building = world.store.get("building", location["building_id"])
    assert name == f"{building['name']}-G-101"
