"""Role catalog, per-user grant/revoke overrides and legacy user import.

The permission catalog is closed: every key a module gates on is listed
here and nothing else is grantable.  A user's effective set is their role's
defaults overlaid with explicit per-user overrides, override winning.

Role and override records share the ``permission`` entity kind in the store
(ids ``role:*`` and ``ovr:*``) so the audit log's closed kind enumeration
stays intact.
"""

from __future__ import annotations

import secrets
from datetime import datetime
from typing import Callable, Iterable

from . import csvio
from .auth import AccountService, hash_password, password_policy_ok, validate_account_record
from .errors import (
    ConflictError,
    NotAuthorizedError,
    NotFoundError,
    ValidationError,
)
from .outbox import Outbox
from .store import Store, iso_ms, utc_now

PERMISSION_CATALOG = frozenset(
    {
        "manage_physical_assets",
        "manage_software",
        "edit_location",
        "create_remove_location",
        "assign_lab_head",
        "close_general_admin_L0",
        "close_general_admin_L1",
        "close_general_admin_L2",
        "close_general_admin_L3",
        "close_general_technical",
        "manage_permissions",
        "browse_audit",
        "bulk_import",
        "run_backup",
    }
)

# Seeded defaults per privilege tier.  Request closure designations are
# deliberately absent everywhere: a "designated individual" is created by an
# explicit grant, never by rank alone.
BUILTIN_ROLES = (
    ("0", "student", 0, frozenset()),
    ("1", "department_admin", 1, frozenset({"assign_lab_head", "bulk_import", "manage_permissions"})),
    (
        "2",
        "faculty_admin",
        2,
        frozenset(
            {"assign_lab_head", "bulk_import", "manage_permissions",
             "manage_physical_assets", "edit_location"}
        ),
    ),
    (
        "3",
        "university_admin",
        3,
        frozenset(
            {"manage_physical_assets", "manage_software", "edit_location",
             "create_remove_location", "assign_lab_head", "manage_permissions",
             "browse_audit", "bulk_import", "run_backup"}
        ),
    ),
)

USER_IMPORT_HEADER = [
    "username", "first_name", "last_name", "email", "role_level", "faculty", "department",
]


def role_key(role_id: str) -> str:
    return f"role:{role_id}"


def override_key(user_id: str, permission: str) -> str:
    return f"ovr:{user_id}:{permission}"


class ImportReport:
    def __init__(self, created: int = 0, skipped: int = 0, errors: list | None = None):
        self.created = created
        self.skipped = skipped
        self.errors = errors or []


class PermissionService:
    def __init__(
        self,
        store: Store,
        outbox: Outbox,
        accounts: AccountService,
        clock: Callable[[], datetime] = utc_now,
        coordinator_email: str | None = None,
    ):
        self._store = store
        self._outbox = outbox
        self._accounts = accounts
        self._clock = clock
        self._coordinator_email = coordinator_email

    def seed(self):
        """Insert the built-in role tiers on a fresh store."""
        missing = [r for r in BUILTIN_ROLES if self._store.get_ref("permission", role_key(r[0])) is None]
        if not missing:
            return
        with self._store.transaction("system") as txn:
            for role_id, name, level, grants in missing:
                txn.insert(
                    "permission",
                    role_key(role_id),
                    {"role_id": role_id, "name": name, "level": level,
                     "default_grants": sorted(grants)},
                )

    # -- resolution -----------------------------------------------------------

    def effective_permissions(self, user_id: str) -> frozenset:
        user = self._store.get_ref("user", user_id)
        if user is None:
            raise NotFoundError("unknown-user", user_id)
        role = self._role_of(user)
        grants = set(role["default_grants"])
        for _, record in self._store.iter_records("permission"):
            if record.get("user_id") == user_id:
                if record["state"] == "granted":
                    grants.add(record["permission"])
                else:
                    grants.discard(record["permission"])
        return frozenset(grants)

    def has_permission(self, user: dict, permission: str) -> bool:
        return permission in self.effective_permissions(user["user_id"])

    def require(self, user: dict, permission: str):
        if not self.has_permission(user, permission):
            raise NotAuthorizedError("not-authorized", permission)

    def user_overrides(self, user_id: str) -> list:
        return sorted(
            (dict(r) for _, r in self._store.iter_records("permission") if r.get("user_id") == user_id),
            key=lambda r: r["permission"],
        )

    # -- administration --------------------------------------------------------

    def grant_revoke(self, session_id: str, target_username: str, changes: list) -> dict:
        _, admin = self._accounts.authenticate(session_id)
        self._require_admin(admin)
        target = self.find_user_by_username(target_username)
        if target is None:
            raise NotFoundError("unknown-user", target_username)
        if target["role"] > admin["role"]:
            raise NotAuthorizedError("scope-violation",
                                     f"target level {target['role']} above admin level {admin['role']}")
        self._validate_changes(changes)
        at = iso_ms(self._clock())
        with self._store.transaction(admin["user_id"]) as txn:
            for change in changes:
                key = override_key(target["user_id"], change["permission"])
                record = {
                    "user_id": target["user_id"],
                    "permission": change["permission"],
                    "state": change["state"],
                    "set_by": admin["user_id"],
                    "at": at,
                }
                if txn.exists("permission", key):
                    txn.update("permission", key, record)
                else:
                    txn.insert("permission", key, record)
            change_id = txn.txn_id
            summary = ", ".join(f"{c['permission']}={c['state']}" for c in changes)
            txn.after_commit(
                lambda: self._notify_permission_change(target, change_id, at, summary)
            )
        return {"change_id": change_id, "applied": len(changes)}

    def edit_role_defaults(self, session_id: str, role_id: str, changes: list) -> dict:
        _, admin = self._accounts.authenticate(session_id)
        self._require_admin(admin)
        role = self._store.get("permission", role_key(role_id))
        if role is None:
            raise NotFoundError("unknown-role", role_id)
        if role["level"] > admin["role"]:
            raise NotAuthorizedError("scope-violation",
                                     f"role level {role['level']} above admin level {admin['role']}")
        self._validate_changes(changes)
        grants = set(role["default_grants"])
        for change in changes:
            if change["state"] == "granted":
                grants.add(change["permission"])
            else:
                grants.discard(change["permission"])
        role["default_grants"] = sorted(grants)
        with self._store.transaction(admin["user_id"]) as txn:
            txn.update("permission", role_key(role_id), role)
        return {"role_id": role_id, "default_grants": role["default_grants"]}

    def add_role(self, session_id: str, name: str, level: int, default_grants: Iterable[str]) -> dict:
        _, admin = self._accounts.authenticate(session_id)
        self._require_admin(admin)
        if not name:
            raise ValidationError("missing-mandatory-field", "name")
        if level not in (0, 1, 2, 3):
            raise ValidationError("invalid-role", str(level))
        if level > admin["role"]:
            raise NotAuthorizedError("scope-violation",
                                     f"cannot create role above own level {admin['role']}")
        grants = set(default_grants)
        unknown = grants - PERMISSION_CATALOG
        if unknown:
            raise ValidationError("unknown-permission", sorted(unknown)[0])
        for _, record in self._store.iter_records("permission"):
            if "role_id" in record and record["name"] == name:
                raise ConflictError("duplicate-role", name)
        with self._store.transaction(admin["user_id"]) as txn:
            role_id = txn.next_id()
            record = {"role_id": role_id, "name": name, "level": level,
                      "default_grants": sorted(grants)}
            txn.insert("permission", role_key(role_id), record)
        return record

    def create_user(self, session_id: str, fields: dict, password: str) -> dict:
        """Direct account creation by a university administrator."""
        _, admin = self._accounts.authenticate(session_id)
        if admin["role"] != 3:
            raise NotAuthorizedError("not-authorized", "requires role 3")
        self.require(admin, "manage_permissions")
        if not password_policy_ok(password):
            raise ValidationError("policy-violation", "initial password violates policy")
        record = self._build_account(fields, password)
        if self.find_user_by_username(record["username"]) is not None:
            raise ConflictError("duplicate-username", record["username"])
        with self._store.transaction(admin["user_id"]) as txn:
            record["user_id"] = txn.next_id()
            txn.insert("user", record["user_id"], record)
        public = dict(record)
        public.pop("password_hash")
        return public

    def import_users(self, session_id: str, data: bytes) -> ImportReport:
        """Atomic legacy-user import; generated passwords go out via the outbox."""
        _, admin = self._accounts.authenticate(session_id)
        if admin["role"] != 3:
            raise NotAuthorizedError("not-authorized", "requires role 3")
        self.require(admin, "manage_permissions")
        text = csvio.decode_ascii(data)
        rows = csvio.parse_rows(text, USER_IMPORT_HEADER)
        seen = set()
        prepared = []
        for index, row in enumerate(rows, start=1):
            if row["username"] in seen or self.find_user_by_username(row["username"]) is not None:
                raise csvio.RowError(index, "username", f"duplicate username '{row['username']}'")
            seen.add(row["username"])
            level_text = row["role_level"] or "0"
            if level_text not in ("0", "1", "2", "3"):
                raise csvio.RowError(index, "role_level", f"invalid role level '{row['role_level']}'")
            password = _initial_password()
            try:
                record = self._build_account(
                    {
                        "username": row["username"],
                        "first_name": row["first_name"],
                        "last_name": row["last_name"],
                        "email": row["email"],
                        "role": int(level_text),
                        "faculty": row["faculty"] or None,
                        "department": row["department"] or None,
                    },
                    password,
                )
            except ValidationError as exc:
                column = exc.detail if exc.detail in USER_IMPORT_HEADER else "email"
                raise csvio.RowError(index, column, exc.code) from None
            prepared.append((record, password))
        with self._store.transaction(admin["user_id"]) as txn:
            for record, password in prepared:
                record["user_id"] = txn.next_id()
                txn.insert("user", record["user_id"], record)
                txn.after_commit(
                    lambda r=record, p=password: self._outbox.email(
                        r["email"],
                        "Your inventory account",
                        f"Account '{r['username']}' was created for you. "
                        f"Initial password: {p}\nPlease change it after first login.",
                    )
                )
        return ImportReport(created=len(prepared))

    def permissions_report(self, session_id: str, by_role: bool = False) -> str:
        _, admin = self._accounts.authenticate(session_id)
        self._require_admin(admin)
        users = sorted((dict(u) for _, u in self._store.iter_records("user")),
                       key=lambda u: u["username"])
        lines = ["username,role_level,role,permissions"]
        if by_role:
            for role in self.list_roles():
                members = [u for u in users if self._role_of(u)["role_id"] == role["role_id"]]
                lines.append(f"# Role {role['level']}: {role['name']}")
                lines.extend(self._report_row(u) for u in members)
        else:
            lines.extend(self._report_row(u) for u in users)
        return "\n".join(lines) + "\n"

    def list_roles(self) -> list:
        roles = [dict(r) for _, r in self._store.iter_records("permission") if "role_id" in r]
        return sorted(roles, key=lambda r: (r["level"], r["name"]))

    def find_user_by_username(self, username: str) -> dict | None:
        for _, record in self._store.iter_records("user"):
            if record["username"] == username:
                return dict(record)
        return None

    # -- internals ----------------------------------------------------------

    def _report_row(self, user: dict) -> str:
        perms = ";".join(sorted(self.effective_permissions(user["user_id"])))
        role = self._role_of(user)
        return f"{user['username']},{user['role']},{role['name']},\"{perms}\""

    def _role_of(self, user: dict) -> dict:
        role_id = user.get("role_id") or str(user["role"])
        role = self._store.get_ref("permission", role_key(role_id))
        if role is None:  # custom role vanished; fall back to the level tier
            role = self._store.get_ref("permission", role_key(str(user["role"])))
        return role

    def _require_admin(self, admin: dict):
        if admin["role"] < 1:
            raise NotAuthorizedError("not-authorized", "requires role 1 or above")
        self.require(admin, "manage_permissions")

    def _validate_changes(self, changes: list):
        if not changes:
            raise ValidationError("missing-mandatory-field", "changes")
        for change in changes:
            if change.get("permission") not in PERMISSION_CATALOG:
                raise ValidationError("unknown-permission", str(change.get("permission")))
            if change.get("state") not in ("granted", "revoked"):
                raise ValidationError("invalid-state", str(change.get("state")))

    def _build_account(self, fields: dict, password: str) -> dict:
        record = {
            "user_id": None,
            "username": fields.get("username"),
            "password_hash": hash_password(password, self._accounts.hash_iterations),
            "first_name": fields.get("first_name"),
            "last_name": fields.get("last_name"),
            "email": fields.get("email"),
            "home_address": fields.get("home_address"),
            "phone": fields.get("phone"),
            "role": fields.get("role", 0),
            "role_id": fields.get("role_id"),
            "faculty": fields.get("faculty"),
            "department": fields.get("department"),
            "active": True,
        }
        validate_account_record(record)
        return record

    def _notify_permission_change(self, target: dict, change_id: int, at: str, summary: str):
        body = (f"Permissions for account '{target['username']}' changed "
                f"(change {change_id}, {at}): {summary}")
        self._outbox.email(target["email"], "Permission change notification", body)
        if self._coordinator_email:
            self._outbox.email(self._coordinator_email, "Permission change notification", body)


def _initial_password() -> str:
    # policy requires a letter and a digit; anchor one of each
    body = "".join(secrets.choice("abcdefghjkmnpqrstuvwxyzABCDEFGHJKMNPQRSTUVWXYZ23456789")
                   for _ in range(10))
    return f"A{body}7"
