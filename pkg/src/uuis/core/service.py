"""Composition root: builds the store and every domain service around it."""

from __future__ import annotations

from datetime import datetime
from typing import Callable

from ..config import ServiceConfig
from .assets import AssetService
from .auth import AccountService, hash_password
from .bulk import BulkImportService
from .captcha import CaptchaService
from .locations import LocationService
from .outbox import MemorySender, Outbox, SpoolSender
from .permissions import PermissionService
from .ratelimit import SlidingWindowLimiter
from .requests_flow import RequestService
from .software import SoftwareService
from .store import BackupPolicy, Store, utc_now


class InventoryService:
    def __init__(
        self,
        config: ServiceConfig | None = None,
        store: Store | None = None,
        outbox_sender=None,
        clock: Callable[[], datetime] = utc_now,
    ):
        self.config = config or ServiceConfig()
        self.clock = clock
        self.store = store if store is not None else Store(self.config.store_path, clock=clock)
        if outbox_sender is None:
            outbox_sender = (
                SpoolSender(self.config.spool_dir) if self.config.spool_dir else MemorySender()
            )
        self.outbox_sender = outbox_sender
        self.outbox = Outbox(outbox_sender, clock)
        self.captcha = CaptchaService(clock)
        self.limiter = SlidingWindowLimiter()
        self.accounts = AccountService(
            self.store, self.outbox, self.captcha, clock,
            hash_iterations=self.config.hash_iterations,
        )
        self.permissions = PermissionService(
            self.store, self.outbox, self.accounts, clock,
            coordinator_email=self.config.coordinator_email,
        )
        self.locations = LocationService(
            self.store, self.outbox, self.accounts, self.permissions, clock,
            supervisor_username=self.config.supervisor_username,
            supervisor_email=self.config.supervisor_email,
        )
        self.assets = AssetService(self.store, self.accounts, self.permissions,
                                   self.locations, clock)
        self.software = SoftwareService(
            self.store, self.outbox, self.accounts, self.permissions, clock,
            manager_email=self.config.software_manager_email,
        )
        self.requests = RequestService(self.store, self.accounts, self.permissions,
                                       self.assets, self.locations, clock)
        self.bulk = BulkImportService(self.store, self.accounts, self.permissions,
                                      self.assets, self.software, self.locations, clock)
        self.permissions.seed()
        self._bootstrap_admin()

    def backup_policy(self) -> BackupPolicy | None:
        if not self.config.backup_local or not self.config.backup_remote:
            return None
        return BackupPolicy(
            local_target=self.config.backup_local,
            remote_target=self.config.backup_remote,
            frequency_hours=self.config.backup_frequency_hours,
            scope=frozenset(self.config.backup_scope),
        )

    def _bootstrap_admin(self):
        """Seed the first university administrator on an empty user table."""
        cfg = self.config
        if self.store.count("user") or not cfg.bootstrap_admin_username \
                or not cfg.bootstrap_admin_password:
            return
        with self.store.transaction("system") as txn:
            user_id = txn.next_id()
            txn.insert(
                "user",
                user_id,
                {
                    "user_id": user_id,
                    "username": cfg.bootstrap_admin_username,
                    "password_hash": hash_password(cfg.bootstrap_admin_password,
                                                   cfg.hash_iterations),
                    "first_name": "System",
                    "last_name": "Administrator",
                    "email": cfg.bootstrap_admin_email,
                    "home_address": None,
                    "phone": None,
                    "role": 3,
                    "role_id": None,
                    "faculty": cfg.bootstrap_admin_faculty,
                    "department": cfg.bootstrap_admin_department,
                    "active": True,
                },
            )
