"""Login/logout, session lifecycle and self-service account management.

Passwords are stored as salted PBKDF2-HMAC-SHA256 digests with a
configurable iteration count; the plaintext never leaves this module.
Login always requires a valid CAPTCHA and every failure mode (unknown
username, wrong password, bad CAPTCHA, inactive account) collapses into one
generic invalid-credentials answer.
"""

from __future__ import annotations

import hashlib
import re
import secrets
from datetime import datetime
from typing import Callable

from .captcha import CaptchaService
from .errors import (
    ImmutableFieldError,
    MissingFieldError,
    UnauthenticatedError,
    ValidationError,
)
from .outbox import Outbox
from .store import Store, iso_ms, utc_now

PASSWORD_RULE = "at least 8 characters including a letter and a digit"

_EMAIL_RE = re.compile(r"^[^@\s]+@[^@\s]+\.[^@\s]+$")

EDITABLE_ACCOUNT_FIELDS = ("first_name", "last_name", "email", "home_address", "phone")
MANDATORY_ACCOUNT_FIELDS = ("first_name", "last_name", "email")


def password_policy_ok(password: str) -> bool:
    if len(password) < 8 or not password.isascii() or not password.isprintable():
        return False
    return any(c.isalpha() for c in password) and any(c.isdigit() for c in password)


def hash_password(password: str, iterations: int = 100_000) -> str:
    salt = secrets.token_hex(16)
    digest = hashlib.pbkdf2_hmac(
        "sha256", password.encode("utf-8"), bytes.fromhex(salt), iterations
    )
    return f"pbkdf2_sha256${iterations}${salt}${digest.hex()}"


def verify_password(stored: str, password: str) -> bool:
    try:
        scheme, iterations, salt, digest = stored.split("$")
    except ValueError:
        return False
    if scheme != "pbkdf2_sha256":
        return False
    candidate = hashlib.pbkdf2_hmac(
        "sha256", password.encode("utf-8"), bytes.fromhex(salt), int(iterations)
    )
    return secrets.compare_digest(candidate.hex(), digest)


def validate_email(email: str):
    if not _EMAIL_RE.match(email or ""):
        raise ValidationError("malformed-email", email)


def validate_account_record(record: dict):
    """Structural invariants every account must satisfy, whatever created it."""
    if not record.get("username"):
        raise MissingFieldError("username")
    for field in MANDATORY_ACCOUNT_FIELDS:
        if not record.get(field):
            raise MissingFieldError(field)
    validate_email(record["email"])
    role = record.get("role")
    if role not in (0, 1, 2, 3):
        raise ValidationError("invalid-role", str(role))
    if role >= 1 and not record.get("department"):
        raise MissingFieldError("department")
    if role >= 2 and not record.get("faculty"):
        raise MissingFieldError("faculty")


class AccountService:
    def __init__(
        self,
        store: Store,
        outbox: Outbox,
        captcha: CaptchaService,
        clock: Callable[[], datetime] = utc_now,
        hash_iterations: int = 100_000,
    ):
        self._store = store
        self._outbox = outbox
        self._captcha = captcha
        self._clock = clock
        self.hash_iterations = hash_iterations

    # -- login / logout ------------------------------------------------------

    def login(self, username: str, password: str, challenge_id: str, captcha_text: str) -> dict:
        captcha_ok = self._captcha.redeem(challenge_id, captcha_text)
        return self.login_with_validated_captcha(username, password, captcha_ok)

    def login_with_validated_captcha(self, username: str, password: str,
                                     captcha_valid: bool) -> dict:
        """Open a session; the caller has already consumed the CAPTCHA."""
        user = self._find_by_username(username)
        credentials_ok = (
            captcha_valid
            and user is not None
            and user["active"]
            and verify_password(user["password_hash"], password)
        )
        if not credentials_ok:
            raise UnauthenticatedError("invalid-credentials")
        now = iso_ms(self._clock())
        session = {
            "session_id": secrets.token_urlsafe(32),
            "user_id": user["user_id"],
            "login_at": now,
            "last_seen_at": now,
            "logout_at": None,
        }
        with self._store.transaction(user["user_id"]) as txn:
            txn.insert("session", session["session_id"], session, audit_op="login")
        return session

    def logout(self, session_id: str) -> None:
        session, user = self.authenticate(session_id)
        session["logout_at"] = iso_ms(self._clock())
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("session", session_id, session, audit_op="logout")

    def authenticate(self, session_id: str) -> tuple[dict, dict]:
        session = self._store.get("session", session_id) if session_id else None
        if session is None or session["logout_at"] is not None:
            raise UnauthenticatedError()
        user = self._store.get("user", session["user_id"])
        if user is None or not user["active"]:
            raise UnauthenticatedError()
        return session, user

    # -- account self-service --------------------------------------------------

    def view_account(self, session_id: str) -> dict:
        session, user = self.authenticate(session_id)
        return self._account_view(user, session)

    def update_account(self, session_id: str, fields: dict) -> dict:
        session, user = self.authenticate(session_id)
        for key in fields:
            if key not in EDITABLE_ACCOUNT_FIELDS:
                raise ImmutableFieldError(key)
        updated = dict(user)
        updated.update(fields)
        for field in MANDATORY_ACCOUNT_FIELDS:
            if not updated.get(field):
                raise MissingFieldError(field)
        validate_email(updated["email"])
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("user", user["user_id"], updated)
        return self._account_view(updated, session)

    def change_password(self, session_id: str, old: str, new: str, new_confirm: str) -> None:
        session, user = self.authenticate(session_id)
        if not verify_password(user["password_hash"], old):
            raise ValidationError("old-mismatch")
        if new != new_confirm:
            raise ValidationError("confirm-mismatch")
        if not password_policy_ok(new):
            raise ValidationError("policy-violation", PASSWORD_RULE)
        updated = dict(user)
        updated["password_hash"] = hash_password(new, self.hash_iterations)
        with self._store.transaction(user["user_id"]) as txn:
            txn.update("user", user["user_id"], updated)
            txn.after_commit(
                lambda: self._outbox.email(
                    user["email"],
                    "Your password was changed",
                    f"The password for account '{user['username']}' was changed "
                    f"at {iso_ms(self._clock())}. If this was not you, contact IT.",
                )
            )

    # -- helpers ------------------------------------------------------------

    def _account_view(self, user: dict, session: dict) -> dict:
        return {
            "username": user["username"],
            "first_name": user["first_name"],
            "last_name": user["last_name"],
            "email": user["email"],
            "home_address": user.get("home_address"),
            "phone": user.get("phone"),
            "role": user["role"],
            "faculty": user.get("faculty"),
            "department": user.get("department"),
            "last_login_at": self._previous_login(user["user_id"], session),
        }

    def _previous_login(self, user_id: str, current: dict) -> str | None:
        best = None
        for sid, record in self._store.iter_records("session"):
            if record["user_id"] != user_id or sid == current["session_id"]:
                continue
            if record["login_at"] > current["login_at"]:
                continue
            key = (record["login_at"], sid)
            if best is None or key > best:
                best = key
        return best[0] if best else None

    def _find_by_username(self, username: str) -> dict | None:
        for _, record in self._store.iter_records("user"):
            if record["username"] == username:
                return dict(record)
        return None
