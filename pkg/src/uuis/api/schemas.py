"""Request bodies with a fixed shape.

Partial-update endpoints (account, assets, groups, software) take raw JSON
objects instead: immutable-field and unknown-field checks belong to the
domain layer, which reports them with the offending field named.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class LoginBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    username: str
    password: str
    captcha_challenge_id: str
    captcha_text: str


class PasswordChangeBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    old_password: str
    new_password: str
    new_password_confirm: str


class PermissionChange(BaseModel):
    model_config = ConfigDict(extra="forbid")

    permission: str
    state: str  # granted | revoked


class GrantRevokeBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    changes: list[PermissionChange] = Field(min_length=1)


class RoleCreateBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    level: int
    default_grants: list[str] = Field(default_factory=list)


class UserCreateBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    username: str
    first_name: str
    last_name: str
    email: str
    role: int = 0
    faculty: str | None = None
    department: str | None = None
    home_address: str | None = None
    phone: str | None = None
    password: str


class RequestCloseBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    closure_note: str


class ExpiryScanBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool
    threshold_days: int


class LocationEditBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    location_type: str | None = None
    department: str | None = None
    faculty: str | None = None
    available: bool | None = None


class LabHeadBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    user_id: str


class BuildingCreateBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reauth_password: str
    name: str
    address: str


class FloorBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    number_or_name: str
    area: float


class LocationAddBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    number: str
    area: float
    location_type: str | None = None
    faculty: str | None = None
    department: str | None = None


class BackupBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    local_target: str | None = None
    remote_target: str | None = None
    scope: list[str] | None = None
