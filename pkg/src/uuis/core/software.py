"""Software titles, multi-license records and the near-expiry scanner.

Licenses cap their installation set at ``max_installations``, fixed at
creation.  Discontinuing a license means flipping it inactive: existing
install records stay for the books, but new ones are refused and the
scanner ignores it.

The scanner itself takes an explicit ``now`` so the daily trigger is just
plumbing; it emails at most once per calendar day.
"""

from __future__ import annotations

from datetime import date, datetime
from typing import Callable

from .auth import AccountService
from .errors import (
    ImmutableFieldError,
    MissingFieldError,
    NotAuthorizedError,
    NotFoundError,
    ValidationError,
)
from .outbox import Outbox
from .store import Store, utc_now

LICENSE_MANDATORY = ("version", "serial_number", "license_type", "max_installations")
LICENSE_EDITABLE = ("license_type", "active", "purpose", "requirements",
                    "requisition_no", "purchase_order_no", "expiry_date", "installed_on")

SCAN_CONFIG_KEY = "expiry_scan"
SCAN_LAST_EMAIL_KEY = "expiry_scan_last_email"


def _check_expiry(value, path):
    if value in (None, ""):
        return None
    try:
        date.fromisoformat(value)
    except (TypeError, ValueError):
        raise ValidationError("invalid-date", path) from None
    return value


class SoftwareService:
    def __init__(
        self,
        store: Store,
        outbox: Outbox,
        accounts: AccountService,
        permissions,
        clock: Callable[[], datetime] = utc_now,
        manager_email: str | None = None,
    ):
        self._store = store
        self._outbox = outbox
        self._accounts = accounts
        self._permissions = permissions
        self._clock = clock
        self.manager_email = manager_email

    def _gate(self, session_id: str) -> dict:
        _, user = self._accounts.authenticate(session_id)
        if user["role"] != 3:
            raise NotAuthorizedError("not-authorized", "requires role 3")
        self._permissions.require(user, "manage_software")
        return user

    # -- add -----------------------------------------------------------------

    def add_software(self, session_id: str, title: dict, licenses: list) -> dict:
        user = self._gate(session_id)
        if not title.get("name"):
            raise MissingFieldError("name")
        if not licenses:
            raise ValidationError("missing-mandatory-field", "licenses")
        prepared = [self._build_license(lic, f"licenses[{i}]") for i, lic in enumerate(licenses)]
        self._check_serials(prepared, [f"licenses[{i}]" for i in range(len(prepared))])
        with self._store.transaction(user["user_id"]) as txn:
            software_id = txn.next_id()
            record = {
                "software_id": software_id,
                "name": title["name"],
                "vendor": title.get("vendor"),
                "category": title.get("category"),
                "description": title.get("description"),
            }
            txn.insert("software", software_id, record)
            license_ids = []
            for lic in prepared:
                lic["license_id"] = txn.next_id()
                lic["software_id"] = software_id
                txn.insert("license", lic["license_id"], lic)
                license_ids.append(lic["license_id"])
        return {"software_id": software_id, "license_ids": license_ids}

    def _build_license(self, fields: dict, path: str) -> dict:
        for name in LICENSE_MANDATORY:
            if fields.get(name) in (None, ""):
                raise MissingFieldError(f"{path}.{name}")
        max_installs = fields["max_installations"]
        if not isinstance(max_installs, int) or isinstance(max_installs, bool) or max_installs < 1:
            raise ValidationError("invalid-number", f"{path}.max_installations")
        active = fields.get("active", True)
        if not isinstance(active, bool):
            raise ValidationError("invalid-active-flag", f"{path}.active")
        installed_on = list(dict.fromkeys(fields.get("installed_on") or []))
        record = {
            "license_id": None,
            "software_id": None,
            "version": fields["version"],
            "serial_number": fields["serial_number"],
            "license_type": fields["license_type"],
            "max_installations": max_installs,
            "active": active,
            "purpose": fields.get("purpose"),
            "requirements": fields.get("requirements"),
            "requisition_no": fields.get("requisition_no"),
            "purchase_order_no": fields.get("purchase_order_no"),
            "expiry_date": _check_expiry(fields.get("expiry_date"), f"{path}.expiry_date"),
            "installed_on": sorted(installed_on),
        }
        self._check_installs(record, added=installed_on, path=path)
        return record

    def _check_installs(self, license_record: dict, added: list, path: str):
        installs = license_record["installed_on"]
        if len(installs) > license_record["max_installations"]:
            raise ValidationError("install-count-exceeded", path)
        if added and not license_record["active"]:
            raise ValidationError("license-inactive", path)
        for asset_id in installs:
            asset = self._store.get_ref("asset", asset_id)
            if asset is None:
                raise NotFoundError("unknown-asset", asset_id)
            if asset["detail"].get("equipment_type") != "Computer":
                raise ValidationError("not-a-computer", asset_id)

    def _check_serials(self, new_licenses: list, paths: list):
        seen = {}
        for _, existing in self._store.iter_records("license"):
            seen[existing["serial_number"]] = "stored"
        for lic, path in zip(new_licenses, paths):
            serial = lic["serial_number"]
            if serial in seen:
                raise ValidationError("duplicate-serial", f"{path}.serial_number")
            seen[serial] = path

    # -- search / view ------------------------------------------------------------

    def search_software(self, session_id: str, criteria: dict | None = None,
                        basic: bool = False) -> list:
        self._gate(session_id)
        criteria = dict(criteria or {})
        if basic:
            criteria = {"name": criteria.get("name")}
        rows = []
        for software_id, title in self._store.iter_records("software"):
            licenses = self._licenses_of(software_id)
            if not _title_matches(title, licenses, criteria):
                continue
            rows.append(
                {
                    "software_id": software_id,
                    "name": title["name"],
                    "vendor": title["vendor"],
                    "category": title["category"],
                    "license_count": len(licenses),
                    "active_license_count": sum(1 for l in licenses if l["active"]),
                }
            )
        return sorted(rows, key=lambda r: (r["name"], r["software_id"]))

    def view_software(self, session_id: str, software_id: str) -> dict:
        self._gate(session_id)
        title = self._store.get("software", software_id)
        if title is None:
            raise NotFoundError("not-found", software_id)
        title["licenses"] = self._licenses_of(software_id)
        return title

    # -- update ---------------------------------------------------------------

    def update_software(self, session_id: str, software_id: str, edits: dict) -> dict:
        user = self._gate(session_id)
        title = self._store.get("software", software_id)
        if title is None:
            raise NotFoundError("not-found", software_id)
        for key in edits:
            if key not in ("vendor", "category", "description", "licenses", "new_licenses"):
                if key == "name":
                    raise ImmutableFieldError("name")
                raise ValidationError("unknown-field", key)
        for key in ("vendor", "category", "description"):
            if key in edits:
                title[key] = edits[key]
        existing = {l["license_id"]: l for l in self._licenses_of(software_id)}
        touched = []
        for patch in edits.get("licenses", []):
            license_id = patch.get("license_id")
            current = existing.get(license_id)
            if current is None:
                raise NotFoundError("unknown-license", str(license_id))
            touched.append(self._patch_license(current, patch))
        added_paths = []
        added = []
        for i, fields in enumerate(edits.get("new_licenses", [])):
            path = f"new_licenses[{i}]"
            added.append(self._build_license(fields, path))
            added_paths.append(path)
        self._check_serials(added, added_paths)
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("software", software_id, title)
            for lic in touched:
                txn.update("license", lic["license_id"], lic)
            new_ids = []
            for lic in added:
                lic["license_id"] = txn.next_id()
                lic["software_id"] = software_id
                txn.insert("license", lic["license_id"], lic)
                new_ids.append(lic["license_id"])
        title["licenses"] = self._licenses_of(software_id)
        return {"software": title, "new_license_ids": new_ids}

    def _patch_license(self, current: dict, patch: dict) -> dict:
        path = f"licenses[{current['license_id']}]"
        for key in patch:
            if key == "license_id":
                continue
            if key in ("version", "serial_number", "max_installations"):
                raise ImmutableFieldError(f"{path}.{key}")
            if key not in LICENSE_EDITABLE:
                raise ValidationError("unknown-field", f"{path}.{key}")
        before_installs = set(current["installed_on"])
        updated = dict(current)
        for key in LICENSE_EDITABLE:
            if key not in patch:
                continue
            if key == "active":
                if not isinstance(patch[key], bool):
                    raise ValidationError("invalid-active-flag", f"{path}.active")
                updated[key] = patch[key]
            elif key == "expiry_date":
                updated[key] = _check_expiry(patch[key], f"{path}.expiry_date")
            elif key == "installed_on":
                updated[key] = sorted(dict.fromkeys(patch[key] or []))
            else:
                updated[key] = patch[key]
        added = [a for a in updated["installed_on"] if a not in before_installs]
        self._check_installs(updated, added=added, path=path)
        return updated

    # -- expiry scanner -------------------------------------------------------

    def configure_expiry_scan(self, session_id: str, enabled: bool, threshold_days: int) -> dict:
        user = self._gate(session_id)
        if not isinstance(threshold_days, int) or isinstance(threshold_days, bool) \
                or threshold_days < 1:
            raise ValidationError("invalid-threshold", str(threshold_days))
        config = {"enabled": bool(enabled), "threshold_days": threshold_days}
        with self._store.transaction(user["user_id"]) as txn:
            txn.set_system(SCAN_CONFIG_KEY, config)
        return config

    def scan_config(self) -> dict:
        return self._store.get_system(SCAN_CONFIG_KEY, {"enabled": False, "threshold_days": 30})

    def run_expiry_scan(self, now: date | None = None) -> list:
        """Active licenses expiring within the threshold (expired ones included).

        Never raises; disabled scanner yields nothing.  At most one summary
        email per calendar day, and none when there are no hits.
        """
        config = self.scan_config()
        if not config["enabled"]:
            return []
        if now is None:
            now = self._clock().date()
        elif isinstance(now, datetime):
            now = now.date()
        threshold = config["threshold_days"]
        hits = []
        for _, lic in self._store.iter_records("license"):
            if not lic["active"] or not lic["expiry_date"]:
                continue
            expiry = date.fromisoformat(lic["expiry_date"])
            if (expiry - now).days <= threshold:
                title = self._store.get_ref("software", lic["software_id"])
                hits.append(
                    {
                        "license_id": lic["license_id"],
                        "serial_number": lic["serial_number"],
                        "software_name": title["name"] if title else "",
                        "expiry_date": lic["expiry_date"],
                    }
                )
        hits.sort(key=lambda h: (h["expiry_date"], h["serial_number"]))
        if hits and self.manager_email \
                and self._store.get_system(SCAN_LAST_EMAIL_KEY) != now.isoformat():
            body = "\n".join(
                f"{h['software_name']}\t{h['serial_number']}\t{h['expiry_date']}" for h in hits
            )
            with self._store.transaction("system") as txn:
                txn.set_system(SCAN_LAST_EMAIL_KEY, now.isoformat())
                txn.after_commit(
                    lambda: self._outbox.email(
                        self.manager_email, "Software licenses near expiry", body
                    )
                )
        return hits

    def _licenses_of(self, software_id: str) -> list:
        out = [dict(l) for _, l in self._store.iter_records("license")
               if l["software_id"] == software_id]
        return sorted(out, key=lambda l: l["license_id"])


def _title_matches(title: dict, licenses: list, criteria: dict) -> bool:
    name = criteria.get("name")
    if name and name.lower() not in title["name"].lower():
        return False
    for key in ("vendor", "category"):
        wanted = criteria.get(key)
        if wanted and title[key] != wanted:
            return False
    license_keys = ("serial_number", "license_type", "active", "expiry_from", "expiry_to",
                    "installed_on_asset")
    if not any(criteria.get(k) not in (None, "") for k in license_keys):
        return True
    return any(_license_matches(lic, criteria) for lic in licenses)


def _license_matches(lic: dict, criteria: dict) -> bool:
    if criteria.get("serial_number") not in (None, "") \
            and lic["serial_number"] != criteria["serial_number"]:
        return False
    if criteria.get("license_type") not in (None, "") \
            and lic["license_type"] != criteria["license_type"]:
        return False
    if criteria.get("active") is not None and lic["active"] != criteria["active"]:
        return False
    if criteria.get("installed_on_asset") not in (None, "") \
            and criteria["installed_on_asset"] not in lic["installed_on"]:
        return False
    expiry_from, expiry_to = criteria.get("expiry_from"), criteria.get("expiry_to")
    if expiry_from or expiry_to:
        if not lic["expiry_date"]:
            return False
        if expiry_from and lic["expiry_date"] < expiry_from:
            return False
        if expiry_to and lic["expiry_date"] > expiry_to:
            return False
    return True
