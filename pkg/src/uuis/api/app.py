"""HTTP gateway: REST surface over the inventory service.

Every route runs behind the session cookie; mutating routes check the
permission catalog before touching a module, and the flows that call for an
explicit confirmation dialog run echo-then-commit via confirm tokens.
Database trouble surfaces as one fixed message with internals withheld;
anything unexpected serves a static crash page and alerts IT.
"""

from __future__ import annotations

import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass

import anyio.to_thread
from fastapi import Depends, FastAPI, File, Form, Query, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import HTMLResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from ..core.bulk import ImportJob
from ..core.errors import (
    ConflictError,
    NotAuthorizedError,
    NotFoundError,
    ServiceInterruptionError,
    UnauthenticatedError,
    UuisError,
    ValidationError,
)
from ..core.ratelimit import ADMIT
from ..core.service import InventoryService
from ..core.store import ENTITY_KINDS, BackupPolicy
from . import messages
from .confirm import ConfirmRegistry
from . import schemas

SESSION_COOKIE = "uuis_session"

API = "/api/v1"

# route -> required catalog permission; the gate-completeness test probes
# every row with a permissionless session and expects 403
ROUTE_PERMISSIONS = [
    ("GET", f"{API}/assets", "manage_physical_assets"),
    ("POST", f"{API}/assets", "manage_physical_assets"),
    ("GET", f"{API}/assets/00000001", "manage_physical_assets"),
    ("PATCH", f"{API}/assets/00000001", "manage_physical_assets"),
    ("POST", f"{API}/groups", "manage_physical_assets"),
    ("GET", f"{API}/groups/00000001", "manage_physical_assets"),
    ("PUT", f"{API}/groups/00000001", "manage_physical_assets"),
    ("GET", f"{API}/software", "manage_software"),
    ("POST", f"{API}/software", "manage_software"),
    ("GET", f"{API}/software/00000001", "manage_software"),
    ("PATCH", f"{API}/software/00000001", "manage_software"),
    ("PUT", f"{API}/software/expiry-scan", "manage_software"),
    ("POST", f"{API}/software/expiry-scan/run", "manage_software"),
    ("PATCH", f"{API}/locations/00000001", "edit_location"),
    ("POST", f"{API}/locations/00000001/lab-head", "assign_lab_head"),
    ("POST", f"{API}/buildings", "create_remove_location"),
    ("POST", f"{API}/buildings/00000001/floors", "create_remove_location"),
    ("POST", f"{API}/buildings/00000001/floors/00000002/locations", "create_remove_location"),
    ("POST", f"{API}/buildings/00000001/complete", "create_remove_location"),
    ("POST", f"{API}/buildings/00000001/commit", "create_remove_location"),
    ("GET", f"{API}/permissions/report", "manage_permissions"),
    ("GET", f"{API}/permissions/someone", "manage_permissions"),
    ("POST", f"{API}/permissions/someone", "manage_permissions"),
    ("POST", f"{API}/permissions/users", "manage_permissions"),
    ("POST", f"{API}/permissions/user-import", "manage_permissions"),
    ("GET", f"{API}/roles", "manage_permissions"),
    ("POST", f"{API}/roles", "manage_permissions"),
    ("PUT", f"{API}/roles/0", "manage_permissions"),
    ("POST", f"{API}/imports", "bulk_import"),
    ("GET", f"{API}/audit", "browse_audit"),
    ("POST", f"{API}/backup", "run_backup"),
]

_STATUS_BY_TYPE = (
    (UnauthenticatedError, 401),
    (NotAuthorizedError, 403),
    (NotFoundError, 404),
    (ServiceInterruptionError, 503),
    (ConflictError, 409),
    (ValidationError, 422),
)

CRASH_PAGE = """<!doctype html>
<html><head><title>UUIS</title></head>
<body><h1>Something went wrong</h1>
<p>The system hit an unexpected problem. The IT department has been alerted
automatically. Please try again in a few minutes.</p></body></html>
"""


@dataclass
class RequestContext:
    session_id: str
    session: dict
    user: dict

    @property
    def user_id(self) -> str:
        return self.user["user_id"]


class ConfirmRequired(Exception):
    def __init__(self, token: str, echo: dict):
        self.token = token
        self.echo = echo


class RateLimited(Exception):
    pass


def create_app(service: InventoryService, with_schedulers: bool = False) -> FastAPI:
    app = FastAPI(title="UUIS", docs_url=None, redoc_url=None, openapi_url=None,
                  lifespan=_lifespan)
    svc = service
    app.state.service = svc
    confirm_registry = ConfirmRegistry(clock=svc.clock)

    # -- dependencies ---------------------------------------------------------

    def get_context(request: Request) -> RequestContext:
        session_id = request.cookies.get(SESSION_COOKIE, "")
        session, user = svc.accounts.authenticate(session_id)
        return RequestContext(session_id=session_id, session=session, user=user)

    def require(permission: str):
        def dependency(ctx: RequestContext = Depends(get_context)) -> RequestContext:
            svc.permissions.require(ctx.user, permission)
            return ctx

        return dependency

    def throttled_query(request: Request, ctx: RequestContext = Depends(get_context)):
        """Sliding-window limiter for search queries, CAPTCHA escalated."""
        captcha_ok = False
        challenge = request.headers.get("X-Captcha-Challenge")
        answer = request.headers.get("X-Captcha-Answer")
        if challenge and answer is not None:
            captcha_ok = svc.captcha.redeem(challenge, answer)
        decision = svc.limiter.check(ctx.session_id, "query",
                                     svc.clock().timestamp(), captcha_ok)
        if decision != ADMIT:
            raise RateLimited()
        return ctx

    def two_phase(ctx: RequestContext, operation: str, payload: dict, execute):
        """Echo-then-commit: dry-run validate, hand out a token, commit on it."""
        token = payload.pop("confirm_token", None)
        if token:
            stored = confirm_registry.take(ctx.user_id, operation, token)
            return execute(stored)
        with svc.store.dry_run():
            execute(dict(payload))
        raise ConfirmRequired(confirm_registry.begin(ctx.user_id, operation, payload), payload)

    # -- error rendering ---------------------------------------------------------

    def _status_for(exc: UuisError) -> int:
        for klass, status in _STATUS_BY_TYPE:
            if isinstance(exc, klass):
                return status
        return 500

    def _error_response(request: Request, code: str, status: int,
                        detail: str | None = None, extra: dict | None = None):
        locale = messages.locale_from_header(request.headers.get("Accept-Language"))
        body = {"code": code, "message": messages.resolve(code, locale)}
        if detail is not None:
            body["detail"] = detail
        if extra:
            body.update(extra)
        return JSONResponse(body, status_code=status)

    @app.exception_handler(UuisError)
    async def uuis_error_handler(request: Request, exc: UuisError):
        status = _status_for(exc)
        # database failures surface as the fixed message with no internals
        detail = None if isinstance(exc, ServiceInterruptionError) else exc.detail
        code = "service-interruption" if isinstance(exc, ServiceInterruptionError) else exc.code
        return _error_response(request, code, status, detail)

    @app.exception_handler(ConfirmRequired)
    async def confirm_required_handler(request: Request, exc: ConfirmRequired):
        return _error_response(request, "confirm-required", 428, None,
                               {"confirm_token": exc.token, "echo": exc.echo})

    @app.exception_handler(RateLimited)
    async def rate_limited_handler(request: Request, exc: RateLimited):
        return _error_response(request, "captcha-required", 429)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()) if p != "body")
        return _error_response(request, "validation-error", 422, where or None)

    @app.exception_handler(Exception)
    async def crash_handler(request: Request, exc: Exception):
        _crash_alert(svc, f"{type(exc).__name__} on {request.method} {request.url.path}")
        return HTMLResponse(CRASH_PAGE, status_code=500)

    app.add_middleware(OverloadMiddleware, service=svc)

    # -- captcha and sessions ------------------------------------------------------

    @app.get(f"{API}/captcha")
    def new_captcha():
        return svc.captcha.issue()

    @app.post(f"{API}/sessions")
    def login(request: Request, body: schemas.LoginBody):
        principal = request.client.host if request.client else "unknown"
        captcha_ok = svc.captcha.redeem(body.captcha_challenge_id, body.captcha_text)
        decision = svc.limiter.check(principal, "login", svc.clock().timestamp(), captcha_ok)
        if decision != ADMIT:
            raise RateLimited()
        session = svc.accounts.login_with_validated_captcha(
            body.username, body.password, captcha_ok)
        user = svc.permissions.find_user_by_username(body.username)
        view = svc.accounts.view_account(session["session_id"])
        response = JSONResponse(
            {
                "username": user["username"],
                "role": user["role"],
                "capabilities": sorted(svc.permissions.effective_permissions(user["user_id"])),
                "last_login_at": view["last_login_at"],
            }
        )
        response.set_cookie(SESSION_COOKIE, session["session_id"],
                            httponly=True, samesite="lax")
        return response

    @app.get(f"{API}/sessions/current")
    def whoami(ctx: RequestContext = Depends(get_context)):
        return {
            "username": ctx.user["username"],
            "role": ctx.user["role"],
            "capabilities": sorted(svc.permissions.effective_permissions(ctx.user_id)),
        }

    @app.delete(f"{API}/sessions/current")
    def logout(ctx: RequestContext = Depends(get_context)):
        svc.accounts.logout(ctx.session_id)
        response = JSONResponse({"status": "logged-out"})
        response.delete_cookie(SESSION_COOKIE)
        return response

    # -- account ---------------------------------------------------------------

    @app.get(f"{API}/account")
    def view_account(ctx: RequestContext = Depends(get_context)):
        return svc.accounts.view_account(ctx.session_id)

    @app.put(f"{API}/account")
    def update_account(body: dict, ctx: RequestContext = Depends(get_context)):
        return two_phase(ctx, "update_account", dict(body),
                         lambda fields: svc.accounts.update_account(ctx.session_id, fields))

    @app.post(f"{API}/account/password")
    def change_password(body: schemas.PasswordChangeBody,
                        ctx: RequestContext = Depends(get_context)):
        svc.accounts.change_password(ctx.session_id, body.old_password,
                                     body.new_password, body.new_password_confirm)
        return {"status": "password-changed"}

    # -- permissions and roles ----------------------------------------------------

    @app.get(f"{API}/permissions/report")
    def permissions_report(by_role: bool = False,
                           ctx: RequestContext = Depends(require("manage_permissions"))):
        return PlainTextResponse(svc.permissions.permissions_report(ctx.session_id, by_role))

    @app.post(f"{API}/permissions/users")
    def create_user(body: schemas.UserCreateBody,
                    ctx: RequestContext = Depends(require("manage_permissions"))):
        fields = body.model_dump(exclude={"password"})
        return svc.permissions.create_user(ctx.session_id, fields, body.password)

    @app.post(f"{API}/permissions/user-import")
    def import_users(file: UploadFile = File(...),
                     ctx: RequestContext = Depends(require("manage_permissions"))):
        report = svc.permissions.import_users(ctx.session_id, file.file.read())
        return {"created": report.created, "skipped": report.skipped,
                "errors": report.errors}

    @app.get(f"{API}/permissions/{{username}}")
    def view_permissions(username: str,
                         ctx: RequestContext = Depends(require("manage_permissions"))):
        user = svc.permissions.find_user_by_username(username)
        if user is None:
            raise NotFoundError("unknown-user", username)
        return {
            "username": username,
            "role": user["role"],
            "effective": sorted(svc.permissions.effective_permissions(user["user_id"])),
            "overrides": svc.permissions.user_overrides(user["user_id"]),
        }

    @app.post(f"{API}/permissions/{{username}}")
    def grant_revoke(username: str, body: schemas.GrantRevokeBody,
                     ctx: RequestContext = Depends(require("manage_permissions"))):
        return svc.permissions.grant_revoke(
            ctx.session_id, username, [c.model_dump() for c in body.changes])

    @app.get(f"{API}/roles")
    def list_roles(ctx: RequestContext = Depends(require("manage_permissions"))):
        return {"roles": svc.permissions.list_roles()}

    @app.post(f"{API}/roles")
    def add_role(body: schemas.RoleCreateBody,
                 ctx: RequestContext = Depends(require("manage_permissions"))):
        return svc.permissions.add_role(ctx.session_id, body.name, body.level,
                                        set(body.default_grants))

    @app.put(f"{API}/roles/{{role_id}}")
    def edit_role(role_id: str, body: schemas.GrantRevokeBody,
                  ctx: RequestContext = Depends(require("manage_permissions"))):
        return svc.permissions.edit_role_defaults(
            ctx.session_id, role_id, [c.model_dump() for c in body.changes])

    # -- requests -----------------------------------------------------------------

    @app.post(f"{API}/requests")
    def submit_request(body: dict, ctx: RequestContext = Depends(get_context)):
        payload = dict(body)
        category = payload.get("category")
        if category in ("general_administrative", "general_technical"):
            # general submissions go through the confirmation dialog
            def execute(fields: dict):
                return svc.requests.submit_general(ctx.session_id, fields.get("category"),
                                                   fields.get("description") or "")

            return two_phase(ctx, "submit_general", payload, execute)
        payload.pop("confirm_token", None)
        return svc.requests.submit_specific(ctx.session_id, category, payload)

    @app.get(f"{API}/requests")
    def search_requests(
        request: Request,
        ctx: RequestContext = Depends(throttled_query),
        request_id: str | None = None,
        category: list[str] = Query(default=[]),
        status: list[str] = Query(default=[]),
        description: str | None = None,
        barcode: str | None = None,
        location: str | None = None,
        group_id: str | None = None,
        target_username: str | None = None,
        originator_username: str | None = None,
        originator_faculty: str | None = None,
        originator_department: str | None = None,
        originator_level: int | None = None,
        compartment_number: int | None = None,
        closure_note: str | None = None,
    ):
        criteria = {
            "request_id": request_id,
            "categories": category,
            "statuses": status,
            "description": description,
            "barcode": barcode,
            "location": location,
            "group_id": group_id,
            "target_username": target_username,
            "originator_username": originator_username,
            "originator_faculty": originator_faculty,
            "originator_department": originator_department,
            "originator_level": originator_level,
            "compartment_number": compartment_number,
            "closure_note": closure_note,
        }
        rows = svc.requests.search_requests(ctx.session_id, criteria)
        return _listing(request, rows)

    @app.get(f"{API}/requests/{{request_id}}")
    def view_request(request_id: str, ctx: RequestContext = Depends(get_context)):
        return svc.requests.view_request(ctx.session_id, request_id)

    @app.post(f"{API}/requests/{{request_id}}/close")
    def close_request(request_id: str, body: schemas.RequestCloseBody,
                      ctx: RequestContext = Depends(get_context)):
        return svc.requests.close_general(ctx.session_id, request_id, body.closure_note)

    @app.post(f"{API}/requests/{{request_id}}/approve")
    def approve_request(request_id: str, ctx: RequestContext = Depends(get_context)):
        return svc.requests.approve_specific(ctx.session_id, request_id)

    # -- assets and groups -----------------------------------------------------------

    @app.get(f"{API}/assets")
    def search_assets(
        request: Request,
        ctx: RequestContext = Depends(throttled_query),
        page: int = 1,
        page_size: int = 50,
        asset_id: str | None = None,
        barcode: str | None = None,
        owner_faculty: str | None = None,
        purchase_req_no: str | None = None,
        purchase_order_no: str | None = None,
        legacy_code: str | None = None,
        location: str | None = None,
        group_id: str | None = None,
        manufacturer: str | None = None,
        model: str | None = None,
        category: list[str] = Query(default=[]),
        status: list[str] = Query(default=[]),
        furniture_type: list[str] = Query(default=[]),
        storage_unit_type: list[str] = Query(default=[]),
        equipment_type: list[str] = Query(default=[]),
        computer_type: list[str] = Query(default=[]),
        serial_number: str | None = None,
        assigned_user: str | None = None,
        mac_address: str | None = None,
        date_purchased_from: str | None = None,
        date_purchased_to: str | None = None,
        warranty_from: str | None = None,
        warranty_to: str | None = None,
        hdd_gb_min: float | None = None,
        hdd_gb_max: float | None = None,
        nonvolatile_mb_min: float | None = None,
        nonvolatile_mb_max: float | None = None,
        volatile_mb_min: float | None = None,
        volatile_mb_max: float | None = None,
    ):
        svc.permissions.require(ctx.user, "manage_physical_assets")
        criteria = {
            "asset_id": asset_id, "barcode": barcode, "owner_faculty": owner_faculty,
            "purchase_req_no": purchase_req_no, "purchase_order_no": purchase_order_no,
            "legacy_code": legacy_code, "location": location, "group_id": group_id,
            "manufacturer": manufacturer, "model": model, "categories": category,
            "statuses": status, "furniture_types": furniture_type,
            "storage_unit_types": storage_unit_type, "equipment_types": equipment_type,
            "computer_types": computer_type, "serial_number": serial_number,
            "assigned_user": assigned_user, "mac_address": mac_address,
            "date_purchased_from": date_purchased_from, "date_purchased_to": date_purchased_to,
            "warranty_from": warranty_from, "warranty_to": warranty_to,
            "hdd_gb_min": hdd_gb_min, "hdd_gb_max": hdd_gb_max,
            "nonvolatile_mb_min": nonvolatile_mb_min, "nonvolatile_mb_max": nonvolatile_mb_max,
            "volatile_mb_min": volatile_mb_min, "volatile_mb_max": volatile_mb_max,
        }
        result = svc.assets.search_assets(ctx.session_id, criteria, page=page,
                                          page_size=page_size)
        return _listing(request, result["rows"], total=result["total"],
                        page=result["page"], page_size=result["page_size"])

    @app.post(f"{API}/assets")
    def add_asset(body: dict,
                  ctx: RequestContext = Depends(require("manage_physical_assets"))):
        return two_phase(ctx, "add_asset", dict(body),
                         lambda fields: svc.assets.add_asset(ctx.session_id, fields))

    @app.get(f"{API}/assets/{{asset_id}}")
    def view_asset(asset_id: str,
                   ctx: RequestContext = Depends(require("manage_physical_assets"))):
        return svc.assets.view_asset(ctx.session_id, asset_id)

    @app.patch(f"{API}/assets/{{asset_id}}")
    def update_asset(asset_id: str, body: dict,
                     ctx: RequestContext = Depends(require("manage_physical_assets"))):
        return two_phase(
            ctx, f"update_asset:{asset_id}", dict(body),
            lambda edits: svc.assets.update_asset(ctx.session_id, asset_id, edits))

    @app.post(f"{API}/groups")
    def create_group(body: dict,
                     ctx: RequestContext = Depends(require("manage_physical_assets"))):
        def execute(fields: dict):
            kwargs = {}
            if "location" in fields:
                kwargs["location"] = fields["location"]
            if "assigned_user" in fields:
                kwargs["assigned_user"] = fields["assigned_user"]
            return svc.assets.create_group(ctx.session_id,
                                           fields.get("member_asset_ids") or [], **kwargs)

        return two_phase(ctx, "create_group", dict(body), execute)

    @app.get(f"{API}/groups/{{group_id}}")
    def view_group(group_id: str,
                   ctx: RequestContext = Depends(require("manage_physical_assets"))):
        return svc.assets.view_group(ctx.session_id, group_id)

    @app.put(f"{API}/groups/{{group_id}}")
    def update_group(group_id: str, body: dict,
                     ctx: RequestContext = Depends(require("manage_physical_assets"))):
        def execute(fields: dict):
            kwargs = {}
            if "location" in fields:
                kwargs["location"] = fields["location"]
            if "assigned_user" in fields:
                kwargs["assigned_user"] = fields["assigned_user"]
            return svc.assets.update_or_delete_group(
                ctx.session_id, group_id, fields.get("member_asset_ids") or [], **kwargs)

        return two_phase(ctx, f"update_group:{group_id}", dict(body), execute)

    # -- software --------------------------------------------------------------------

    @app.get(f"{API}/software")
    def search_software(request: Request, basic: bool = False,
                        ctx: RequestContext = Depends(throttled_query),
                        name: str | None = None,
                        vendor: str | None = None,
                        category: str | None = None,
                        serial_number: str | None = None,
                        license_type: str | None = None,
                        active: bool | None = None,
                        expiry_from: str | None = None,
                        expiry_to: str | None = None,
                        installed_on_asset: str | None = None):
        svc.permissions.require(ctx.user, "manage_software")
        criteria = {
            "name": name, "vendor": vendor, "category": category,
            "serial_number": serial_number, "license_type": license_type,
            "active": active, "expiry_from": expiry_from, "expiry_to": expiry_to,
            "installed_on_asset": installed_on_asset,
        }
        return _listing(request,
                        svc.software.search_software(ctx.session_id, criteria, basic=basic))

    @app.post(f"{API}/software")
    def add_software(body: dict,
                     ctx: RequestContext = Depends(require("manage_software"))):
        def execute(fields: dict):
            return svc.software.add_software(ctx.session_id, fields.get("title") or {},
                                             fields.get("licenses") or [])

        return two_phase(ctx, "add_software", dict(body), execute)

    @app.put(f"{API}/software/expiry-scan")
    def configure_scan(body: schemas.ExpiryScanBody,
                       ctx: RequestContext = Depends(require("manage_software"))):
        return svc.software.configure_expiry_scan(ctx.session_id, body.enabled,
                                                  body.threshold_days)

    @app.post(f"{API}/software/expiry-scan/run")
    def run_scan(ctx: RequestContext = Depends(require("manage_software"))):
        return {"hits": svc.software.run_expiry_scan()}

    @app.get(f"{API}/software/{{software_id}}")
    def view_software(software_id: str,
                      ctx: RequestContext = Depends(require("manage_software"))):
        return svc.software.view_software(ctx.session_id, software_id)

    @app.patch(f"{API}/software/{{software_id}}")
    def update_software(software_id: str, body: dict,
                        ctx: RequestContext = Depends(require("manage_software"))):
        return two_phase(
            ctx, f"update_software:{software_id}", dict(body),
            lambda edits: svc.software.update_software(ctx.session_id, software_id, edits))

    # -- locations and buildings --------------------------------------------------------

    @app.get(f"{API}/locations")
    def list_locations(building_id: str | None = None,
                       ctx: RequestContext = Depends(get_context)):
        rows = svc.locations.list_locations(building_id)
        for row in rows:
            row["display"] = svc.locations.display_identifier(row)
        return {"rows": rows}

    @app.get(f"{API}/locations/{{location_id}}")
    def view_location(location_id: str, ctx: RequestContext = Depends(get_context)):
        location = svc.locations.get_location(location_id)
        if location is None:
            raise NotFoundError("not-found", location_id)
        location["display"] = svc.locations.display_identifier(location)
        return location

    @app.patch(f"{API}/locations/{{location_id}}")
    def edit_location(location_id: str, body: schemas.LocationEditBody,
                      ctx: RequestContext = Depends(require("edit_location"))):
        return svc.locations.edit_location(ctx.session_id, location_id,
                                           body.model_dump(exclude_unset=True))

    @app.post(f"{API}/locations/{{location_id}}/lab-head")
    def assign_lab_head(location_id: str, body: schemas.LabHeadBody,
                        ctx: RequestContext = Depends(require("assign_lab_head"))):
        return svc.locations.assign_lab_head(ctx.session_id, location_id, body.user_id)

    @app.get(f"{API}/buildings")
    def list_buildings(ctx: RequestContext = Depends(get_context)):
        return {"rows": svc.locations.list_buildings()}

    @app.post(f"{API}/buildings")
    def create_building(body: schemas.BuildingCreateBody,
                        ctx: RequestContext = Depends(require("create_remove_location"))):
        return svc.locations.create_building(ctx.session_id, body.reauth_password,
                                             body.name, body.address)

    @app.post(f"{API}/buildings/{{building_id}}/floors")
    def add_floor(building_id: str, body: schemas.FloorBody,
                  ctx: RequestContext = Depends(require("create_remove_location"))):
        return svc.locations.add_floor(ctx.session_id, building_id,
                                       body.number_or_name, body.area)

    @app.post(f"{API}/buildings/{{building_id}}/floors/{{floor_id}}/locations")
    def add_location(building_id: str, floor_id: str, body: schemas.LocationAddBody,
                     ctx: RequestContext = Depends(require("create_remove_location"))):
        return svc.locations.add_location(ctx.session_id, floor_id, body.number, body.area,
                                          location_type=body.location_type,
                                          faculty=body.faculty, department=body.department)

    @app.post(f"{API}/buildings/{{building_id}}/complete")
    def complete_building(building_id: str,
                          ctx: RequestContext = Depends(require("create_remove_location"))):
        return svc.locations.mark_building_complete(ctx.session_id, building_id)

    @app.post(f"{API}/buildings/{{building_id}}/commit")
    def commit_building(building_id: str,
                        ctx: RequestContext = Depends(require("create_remove_location"))):
        return svc.locations.commit_building(ctx.session_id, building_id)

    # -- bulk import, audit, backup -------------------------------------------------------

    @app.post(f"{API}/imports")
    def bulk_import(kind: str = Form(...), file: UploadFile = File(...),
                    ctx: RequestContext = Depends(require("bulk_import"))):
        job = svc.bulk.import_csv(ctx.session_id, kind, file.filename or "",
                                  file.file.read())
        return _job_view(job)

    @app.get(f"{API}/audit")
    def browse_audit(request: Request,
                     ctx: RequestContext = Depends(throttled_query),
                     actor: str | None = None,
                     date_from: str | None = None,
                     date_to: str | None = None,
                     text: str | None = None):
        svc.permissions.require(ctx.user, "browse_audit")
        rows = svc.store.browse_audit(actor=actor, date_from=date_from,
                                      date_to=date_to, text=text)
        return _listing(request, rows)

    @app.post(f"{API}/backup")
    def run_backup(body: schemas.BackupBody,
                   ctx: RequestContext = Depends(require("run_backup"))):
        policy = svc.backup_policy()
        if body.local_target or body.remote_target:
            if body.scope:
                scope = frozenset(body.scope)
            else:
                scope = policy.scope if policy else frozenset(ENTITY_KINDS)
            policy = BackupPolicy(
                local_target=body.local_target or (policy.local_target if policy else ""),
                remote_target=body.remote_target or (policy.remote_target if policy else ""),
                scope=scope,
            )
        if policy is None:
            raise ValidationError("validation-error", "no backup targets configured")
        manifest = svc.store.run_backup(policy, manual=True)
        return {"directory": manifest.directory,
                "files": [{"path": p, "sha256": d, "bytes": s} for p, d, s in manifest.files],
                "manifest": manifest.text}

    @app.get(f"{API}/health")
    def health():
        return {"status": "ok"}

    if svc.config.static_dir:
        app.mount("/", StaticFiles(directory=svc.config.static_dir, html=True),
                  name="static")

    if with_schedulers:
        _start_schedulers(svc)

    return app


@asynccontextmanager
async def _lifespan(app: FastAPI):
    # handlers are synchronous and short; size the worker pool to the admission
    # capacity so queueing, not the pool, is the limiter
    svc = app.state.service
    limiter = anyio.to_thread.current_default_thread_limiter()
    limiter.total_tokens = max(limiter.total_tokens, min(svc.config.capacity, 200))
    yield


def _listing(request: Request, rows: list, **extra):
    body = {"rows": rows, **extra}
    if not rows:
        locale = messages.locale_from_header(request.headers.get("Accept-Language"))
        body["message"] = messages.resolve("no-results", locale)
    return body


def _job_view(job: ImportJob) -> dict:
    return {"job_id": job.job_id, "kind": job.kind, "byte_size": job.byte_size,
            "submitted_by": job.submitted_by, "at": job.at, "outcome": job.outcome}


def _crash_alert(svc: InventoryService, context: str):
    """One email plus one SMS stub to IT; failures must never mask the page."""
    try:
        if svc.config.it_email:
            svc.outbox.email(svc.config.it_email, "UUIS crash alert",
                             f"Unrecoverable failure: {context}")
        if svc.config.it_sms:
            svc.outbox.sms(svc.config.it_sms, f"UUIS crash: {context}")
    except Exception:
        pass


class OverloadMiddleware:
    """Concurrency cap: beyond capacity callers get the wait page, and a login
    still unserved after the configured wait limit gets told to retry later."""

    def __init__(self, app, service: InventoryService):
        self.app = app
        self.svc = service
        self.in_flight = 0
        self._lock = threading.Lock()
        self._login_waiters: dict = {}

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        is_login = scope["path"] == f"{API}/sessions" and scope["method"] == "POST"
        principal = scope.get("client")[0] if scope.get("client") else "unknown"
        with self._lock:
            admitted = self.in_flight < self.svc.config.capacity
            if admitted:
                self.in_flight += 1
        if not admitted:
            await self._refuse(scope, send, is_login, principal)
            return
        try:
            if is_login:
                with self._lock:
                    self._login_waiters.pop(principal, None)
            await self.app(scope, receive, send)
        finally:
            with self._lock:
                self.in_flight -= 1

    async def _refuse(self, scope, send, is_login: bool, principal: str):
        code = "high-load"
        if is_login:
            now = self.svc.clock()
            with self._lock:
                first = self._login_waiters.setdefault(principal, now)
            waited = (now - first).total_seconds()
            if waited >= self.svc.config.login_wait_limit_seconds:
                code = "retry-later"
        response = JSONResponse({"code": code, "message": messages.resolve(code)},
                                status_code=503)
        await response(scope, receive_noop, send)


async def receive_noop():
    return {"type": "http.request", "body": b"", "more_body": False}


def _start_schedulers(svc: InventoryService):
    """Daily expiry scan and periodic backups; both are best-effort."""

    def loop():
        last_scan_day = None
        last_backup = time.monotonic()
        while True:
            time.sleep(30)
            try:
                now = svc.clock()
                scan_at = svc.config.expiry_scan_utc_time
                if (last_scan_day != now.date()
                        and now.strftime("%H:%M") >= scan_at
                        and svc.software.scan_config()["enabled"]):
                    svc.software.run_expiry_scan(now.date())
                    last_scan_day = now.date()
                policy = svc.backup_policy()
                if policy is not None and (
                        time.monotonic() - last_backup) >= policy.frequency_hours * 3600:
                    svc.store.run_backup(policy)
                    last_backup = time.monotonic()
            except Exception:
                pass  # the next tick retries; scheduling must never kill the app

    threading.Thread(target=loop, name="uuis-schedulers", daemon=True).start()
