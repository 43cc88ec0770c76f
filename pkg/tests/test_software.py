"""Software titles, license bounds and the near-expiry scanner."""

import random
from datetime import date, timedelta

import pytest

from uuis.core.errors import (
    ImmutableFieldError,
    MissingFieldError,
    NotAuthorizedError,
    ValidationError,
)

_seq = iter(range(1, 100000))


def license_fields(**extra):
    fields = {
        "version": "1.0",
        "serial_number": f"SER-{next(_seq):05d}",
        "license_type": "Site",
        "max_installations": 3,
    }
    fields.update(extra)
    return fields


@pytest.fixture
def mgr(world):
    world.create_user("soft", role=3, faculty="F", department="D1",
                      grants=("manage_software",))
    return world.login("soft")


def add_computer(world, n=1):
    world.create_user("assetmgr", role=3, faculty="F", department="D1",
                      grants=("manage_physical_assets",))
    sid = world.login("assetmgr")
    ids = []
    for i in range(n):
        asset = world.svc.assets.add_asset(sid, {
            "barcode": f"PC{next(_seq):05d}",
            "owner_faculty": "F",
            "category": "Equipment",
            "equipment": {"equipment_type": "Computer",
                          "computer": {"computer_type": "Tower"}},
        })["asset"]
        ids.append(asset["asset_id"])
    return ids


def test_add_software_returns_title_and_license_ids(world, mgr):
    result = world.svc.software.add_software(
        mgr, {"name": "Office Suite", "vendor": "Vend"},
        [license_fields(), license_fields()])
    assert len(result["license_ids"]) == 2
    view = world.svc.software.view_software(mgr, result["software_id"])
    assert view["name"] == "Office Suite"
    assert [l["license_id"] for l in view["licenses"]] == result["license_ids"]
    assert all(l["active"] is True for l in view["licenses"])  # default active


def test_add_software_missing_license_field_names_path(world, mgr):
    before = world.store.dump_canonical()
    bad = license_fields()
    del bad["serial_number"]
    with pytest.raises(MissingFieldError) as err:
        world.svc.software.add_software(mgr, {"name": "X"},
                                        [license_fields(), license_fields(), bad])
    assert err.value.detail == "licenses[2].serial_number"
    assert world.store.dump_canonical() == before


def test_add_software_requires_at_least_one_license(world, mgr):
    with pytest.raises(ValidationError):
        world.svc.software.add_software(mgr, {"name": "X"}, [])


def test_add_software_requires_role3_with_permission(world):
    world.create_user("fadmin", role=2, grants=("manage_software",))
    sid = world.login("fadmin")
    with pytest.raises(NotAuthorizedError):
        world.svc.software.add_software(sid, {"name": "X"}, [license_fields()])


def test_search_basic_name_substring(world, mgr):
    world.svc.software.add_software(mgr, {"name": "Office Suite"}, [license_fields()])
    world.svc.software.add_software(mgr, {"name": "Compiler"}, [license_fields()])
    rows = world.svc.software.search_software(mgr, {"name": "off"}, basic=True)
    assert [r["name"] for r in rows] == ["Office Suite"]
    # basic mode ignores everything but the name
    rows = world.svc.software.search_software(
        mgr, {"name": "off", "vendor": "missing"}, basic=True)
    assert len(rows) == 1
    assert len(world.svc.software.search_software(mgr, {})) == 2


def test_search_advanced_expiry_range_narrows_to_matching_title(world, mgr):
    world.svc.software.add_software(
        mgr, {"name": "Early"}, [license_fields(expiry_date="2026-01-15")])
    world.svc.software.add_software(
        mgr, {"name": "Late"}, [license_fields(expiry_date="2027-06-01")])
    world.svc.software.add_software(mgr, {"name": "Never"}, [license_fields()])
    rows = world.svc.software.search_software(
        mgr, {"expiry_from": "2026-01-01", "expiry_to": "2026-12-31"})
    assert [r["name"] for r in rows] == ["Early"]


def test_search_installed_on_asset(world, mgr):
    pc, = add_computer(world, 1)
    sid = world.svc.software.add_software(mgr, {"name": "Tool"},
                                          [license_fields()])
    lic = world.svc.software.view_software(mgr, sid["software_id"])["licenses"][0]
    world.svc.software.update_software(
        mgr, sid["software_id"],
        {"licenses": [{"license_id": lic["license_id"], "installed_on": [pc]}]})
    rows = world.svc.software.search_software(mgr, {"installed_on_asset": pc})
    assert [r["name"] for r in rows] == ["Tool"]


def test_update_discontinue_keeps_install_records(world, mgr):
    pc, = add_computer(world, 1)
    created = world.svc.software.add_software(mgr, {"name": "Tool"}, [license_fields()])
    lic_id = created["license_ids"][0]
    world.svc.software.update_software(
        mgr, created["software_id"],
        {"licenses": [{"license_id": lic_id, "installed_on": [pc]}]})
    updated = world.svc.software.update_software(
        mgr, created["software_id"],
        {"licenses": [{"license_id": lic_id, "active": False}]})
    lic = updated["software"]["licenses"][0]
    assert lic["active"] is False and lic["installed_on"] == [pc]


def test_install_count_bound_is_enforced(world, mgr):
    pcs = add_computer(world, 4)
    created = world.svc.software.add_software(
        mgr, {"name": "Tool"}, [license_fields(max_installations=3)])
    lic_id = created["license_ids"][0]
    world.svc.software.update_software(
        mgr, created["software_id"],
        {"licenses": [{"license_id": lic_id, "installed_on": pcs[:3]}]})
    with pytest.raises(ValidationError) as err:
        world.svc.software.update_software(
            mgr, created["software_id"],
            {"licenses": [{"license_id": lic_id, "installed_on": pcs}]})
    assert err.value.code == "install-count-exceeded"


def test_installs_must_target_computers(world, mgr):
    world.create_user("assetmgr2", role=3, grants=("manage_physical_assets",))
    sid = world.login("assetmgr2")
    chair = world.svc.assets.add_asset(sid, {
        "barcode": "CHAIR-1", "owner_faculty": "F", "category": "Furniture",
        "furniture": {"furniture_type": "Office chair"},
    })["asset"]["asset_id"]
    created = world.svc.software.add_software(mgr, {"name": "Tool"}, [license_fields()])
    with pytest.raises(ValidationError) as err:
        world.svc.software.update_software(
            mgr, created["software_id"],
            {"licenses": [{"license_id": created["license_ids"][0],
                           "installed_on": [chair]}]})
    assert err.value.code == "not-a-computer"


def test_inactive_license_refuses_new_installs(world, mgr):
    pc, = add_computer(world, 1)
    created = world.svc.software.add_software(
        mgr, {"name": "Tool"}, [license_fields(active=False)])
    with pytest.raises(ValidationError) as err:
        world.svc.software.update_software(
            mgr, created["software_id"],
            {"licenses": [{"license_id": created["license_ids"][0],
                           "installed_on": [pc]}]})
    assert err.value.code == "license-inactive"


def test_max_installations_immutable_on_existing_license(world, mgr):
    created = world.svc.software.add_software(mgr, {"name": "Tool"}, [license_fields()])
    for field in ("max_installations", "version", "serial_number"):
        with pytest.raises(ImmutableFieldError):
            world.svc.software.update_software(
                mgr, created["software_id"],
                {"licenses": [{"license_id": created["license_ids"][0], field: "9"}]})


def test_new_licenses_may_set_max_installations(world, mgr):
    created = world.svc.software.add_software(mgr, {"name": "Tool"}, [license_fields()])
    result = world.svc.software.update_software(
        mgr, created["software_id"],
        {"new_licenses": [license_fields(max_installations=10)]})
    assert len(result["new_license_ids"]) == 1
    licenses = result["software"]["licenses"]
    assert any(l["max_installations"] == 10 for l in licenses)


def test_duplicate_serial_rejected_on_add(world, mgr):
    fields = license_fields()
    world.svc.software.add_software(mgr, {"name": "A"}, [fields])
    clash = license_fields()
    clash["serial_number"] = fields["serial_number"]
    with pytest.raises(ValidationError) as err:
        world.svc.software.add_software(mgr, {"name": "B"}, [clash])
    assert err.value.code == "duplicate-serial"


def test_configure_scan_validates_threshold(world, mgr):
    config = world.svc.software.configure_expiry_scan(mgr, True, 30)
    assert config == {"enabled": True, "threshold_days": 30}
    with pytest.raises(ValidationError):
        world.svc.software.configure_expiry_scan(mgr, True, 0)


def test_scan_boundary_inclusive_and_inactive_excluded(world, mgr):
    today = date(2026, 8, 9)
    world.svc.software.add_software(
        mgr, {"name": "Exact"},
        [license_fields(expiry_date=(today + timedelta(days=30)).isoformat())])
    world.svc.software.add_software(
        mgr, {"name": "Beyond"},
        [license_fields(expiry_date=(today + timedelta(days=31)).isoformat())])
    world.svc.software.add_software(
        mgr, {"name": "AlreadyExpired"},
        [license_fields(expiry_date=(today - timedelta(days=5)).isoformat())])
    world.svc.software.add_software(
        mgr, {"name": "InactiveTomorrow"},
        [license_fields(expiry_date=(today + timedelta(days=1)).isoformat(), active=False)])
    world.svc.software.configure_expiry_scan(mgr, True, 30)
    hits = world.svc.software.run_expiry_scan(today)
    names = {h["software_name"] for h in hits}
    assert names == {"Exact", "AlreadyExpired"}


def test_scan_disabled_returns_nothing(world, mgr):
    world.svc.software.add_software(
        mgr, {"name": "Soon"}, [license_fields(expiry_date="2026-08-10")])
    assert world.svc.software.run_expiry_scan(date(2026, 8, 9)) == []
    world.svc.software.configure_expiry_scan(mgr, True, 30)
    assert world.svc.software.run_expiry_scan(date(2026, 8, 9)) != []
    world.svc.software.configure_expiry_scan(mgr, False, 30)
    outbox_before = len(world.emails())
    assert world.svc.software.run_expiry_scan(date(2026, 8, 10)) == []
    assert len(world.emails()) == outbox_before


def test_scan_emails_once_per_day_with_tab_separated_lines(world, mgr):
    world.svc.software.add_software(
        mgr, {"name": "Soon"}, [license_fields(expiry_date="2026-08-15")])
    world.svc.software.configure_expiry_scan(mgr, True, 30)
    world.svc.software.run_expiry_scan(date(2026, 8, 9))
    world.svc.software.run_expiry_scan(date(2026, 8, 9))
    mails = world.emails(to="software-manager@iufa.example")
    assert len(mails) == 1
    line = mails[0].body.splitlines()[0]
    name, serial, expiry = line.split("\t")
    assert name == "Soon" and expiry == "2026-08-15"
    # a new day emails again
    world.svc.software.run_expiry_scan(date(2026, 8, 10))
    assert len(world.emails(to="software-manager@iufa.example")) == 2


def test_scanner_matches_brute_force_over_random_sets(world, mgr):
    rng = random.Random(5)
    today = date(2026, 8, 9)
    for i in range(40):
        expiry = None
        if rng.random() < 0.8:
            expiry = (today + timedelta(days=rng.randrange(-40, 80))).isoformat()
        world.svc.software.add_software(
            mgr, {"name": f"S{i}"},
            [license_fields(expiry_date=expiry, active=rng.random() < 0.7)])
    for threshold in (1, 7, 30, 60):
        world.svc.software.configure_expiry_scan(mgr, True, threshold)
        hits = {h["license_id"] for h in world.svc.software.run_expiry_scan(today)}
        oracle = set()
        for lid, lic in world.store.iter_records("license"):
            if lic["active"] and lic["expiry_date"] is not None:
                days_left = (date.fromisoformat(lic["expiry_date"]) - today).days
                if days_left <= threshold:
                    oracle.add(lid)
        assert hits == oracle
