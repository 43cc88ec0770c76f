"""Transactional record store with a parallel, append-only audit log.

Every entity mutation happens inside exactly one transaction.  Writers are
fully serialized: the writer lock is taken at ``begin_txn`` and held until
commit or abort, which makes transactions trivially serializable.  Readers
never take the lock; commits swap copy-on-write dictionaries, so a reader
always observes a consistent committed snapshot.

Commit appends one audit record per mutated entity in the same atomic step.
Audit records are append-only: no API mutates or deletes them.

Durability is an optional JSON-lines journal (one line per committed
transaction).  Replay tolerates a torn final line, so a crash mid-append
rolls back to the previous commit.  Transaction and id counters are
allocation metadata: they advance even for aborted transactions and are
deliberately excluded from :meth:`Store.dump_canonical`, which captures the
observable content (entities, system settings, audit log) for byte-level
equality checks.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterator
from urllib.parse import urlparse

from .errors import ConflictError, ServiceInterruptionError, ValidationError

ENTITY_KINDS = (
    "user",
    "permission",
    "request",
    "asset",
    "group",
    "software",
    "license",
    "location",
    "building",
    "session",
)

AUDIT_OPS = ("insert", "update", "delete", "login", "logout")

# Values never shown by browse_audit; the stored snapshots keep the truth so
# backup/restore equality holds.
_REDACTED_FIELDS = ("password_hash", "session_id")

ID_WIDTH = 8


def canonical_json(obj: Any) -> str:
    """Key-sorted, separator-free JSON; the snapshot and equality format."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def iso_ms(dt: datetime) -> str:
    """UTC timestamp with millisecond precision, the stored timestamp format."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat(timespec="milliseconds")


def parse_ts(value: str) -> datetime:
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class BackupFailedError(ConflictError):
    def __init__(self, target: str):
        super().__init__("backup-failed", target)
        self.target = target


@dataclass(frozen=True)
class BackupPolicy:
    """What to back up and where; frequency drives the automatic scheduler."""

    local_target: str
    remote_target: str
    frequency_hours: float = 24.0
    scope: frozenset = frozenset(ENTITY_KINDS)

    def __post_init__(self):
        if self.frequency_hours <= 0:
            raise ValidationError("validation-error", "frequency must be positive")
        if not self.scope:
            raise ValidationError("validation-error", "scope must not be empty")
        unknown = set(self.scope) - set(ENTITY_KINDS)
        if unknown:
            raise ValidationError("validation-error", f"unknown entity kind: {sorted(unknown)}")


@dataclass
class BackupManifest:
    directory: str
    files: list = field(default_factory=list)  # (relative path, sha256 hex, byte count)

    @property
    def text(self) -> str:
        return "".join(f"{path} {digest} {size}\n" for path, digest, size in self.files)


class TransactionToken:
    """Handle for one open transaction; confined to a single context."""

    def __init__(self, store: "Store", txn_id: int, actor: str, started_at: str):
        self.txn_id = txn_id
        self.actor = actor
        self.started_at = started_at
        self._store = store
        self._open = True
        # entity writes in application order: (kind, id) -> [final record | None, audit op override]
        self._writes: dict = {}
        self._system: dict = {}
        self._after_commit: list = []

    # -- reads (overlay of buffered writes on the committed base) ----------

    def get(self, kind: str, entity_id: str):
        key = (kind, entity_id)
        if key in self._writes:
            record = self._writes[key][0]
            return json.loads(canonical_json(record)) if record is not None else None
        return self._store.get(kind, entity_id)

    def exists(self, kind: str, entity_id: str) -> bool:
        key = (kind, entity_id)
        if key in self._writes:
            return self._writes[key][0] is not None
        return self._store.get_ref(kind, entity_id) is not None

    def iter_records(self, kind: str) -> Iterator[tuple]:
        """Yield (id, record) pairs with txn writes overlaid. Records are read-only."""
        written = {eid: rec for (k, eid), (rec, _) in self._writes.items() if k == kind}
        for eid, rec in self._store.iter_records(kind):
            if eid in written:
                continue
            yield eid, rec
        for eid, rec in written.items():
            if rec is not None:
                yield eid, rec

    # -- writes -------------------------------------------------------------

    def insert(self, kind: str, entity_id: str, record: dict, audit_op: str = "insert"):
        self._write_check(kind, audit_op)
        if self.exists(kind, entity_id):
            raise ConflictError("duplicate-id", f"{kind}/{entity_id}")
        self._writes[(kind, entity_id)] = [record, audit_op]

    def update(self, kind: str, entity_id: str, record: dict, audit_op: str = "update"):
        self._write_check(kind, audit_op)
        if not self.exists(kind, entity_id):
            raise ConflictError("unknown-id", f"{kind}/{entity_id}")
        self._writes[(kind, entity_id)] = [record, audit_op]

    def delete(self, kind: str, entity_id: str):
        self._write_check(kind, "delete")
        if not self.exists(kind, entity_id):
            raise ConflictError("unknown-id", f"{kind}/{entity_id}")
        self._writes[(kind, entity_id)] = [None, "delete"]

    def set_system(self, key: str, value):
        """Persist a non-entity setting; journaled but never audited."""
        self._ensure_open()
        self._system[key] = value

    def next_id(self) -> str:
        """Mint a zero-padded decimal identifier from the persistence counter."""
        self._ensure_open()
        return self._store._mint_id()

    def after_commit(self, hook: Callable[[], None]):
        """Run ``hook`` once the commit is durable; failures are swallowed."""
        self._ensure_open()
        self._after_commit.append(hook)

    def _write_check(self, kind: str, audit_op: str):
        self._ensure_open()
        if kind not in ENTITY_KINDS:
            raise ValueError(f"unknown entity kind: {kind}")
        if audit_op not in AUDIT_OPS:
            raise ValueError(f"unknown audit op: {audit_op}")

    def _ensure_open(self):
        if not self._open:
            raise ConflictError("transaction-closed", str(self.txn_id))


class Store:
    """Embedded record store; ``path=None`` keeps everything in memory."""

    def __init__(self, path: str | None = None, clock: Callable[[], datetime] = utc_now):
        self._clock = clock
        self._state: dict = {kind: {} for kind in ENTITY_KINDS}
        self._audit: list = []
        self._system: dict = {}
        self._txn_counter = 0
        self._id_counter = 0
        self._closed = False
        self._write_lock = threading.Lock()
        self._writer_thread: int | None = None
        self._commit_fault: Callable | None = None
        self._dry_run = threading.local()
        self._path = Path(path) if path else None
        self._journal = None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            if self._path.exists():
                self._replay()
            self._journal = open(self._path, "a", encoding="ascii")

    # -- transactions ---------------------------------------------------

    def begin_txn(self, actor: str) -> TransactionToken:
        self._ensure_open()
        if self._writer_thread == threading.get_ident():
            raise RuntimeError("nested transaction in one context")
        self._write_lock.acquire()
        self._writer_thread = threading.get_ident()
        self._ensure_open_locked()
        self._txn_counter += 1
        return TransactionToken(self, self._txn_counter, actor, iso_ms(self._clock()))

    def commit_txn(self, txn: TransactionToken) -> int:
        """Make ``txn`` durable atomically; returns the number of audit records."""
        txn._ensure_open()
        try:
            writes, audit = self._finalize(txn)
            if getattr(self._dry_run, "active", False):
                return len(audit)  # echo phase: fully validated, nothing applied
            if self._commit_fault is not None:
                fault, self._commit_fault = self._commit_fault, None
                fault()
            if self._journal is not None:
                self._append_journal(txn, writes, audit)
            self._apply(writes, audit, txn._system)
        finally:
            self._release(txn)
        for hook in txn._after_commit:
            try:
                hook()
            except Exception:  # delivery is best effort by design
                pass
        return len(audit)

    def dry_run(self) -> "_DryRunContext":
        """While active on this thread, commits validate but apply nothing."""
        return _DryRunContext(self)

    def abort_txn(self, txn: TransactionToken) -> None:
        txn._ensure_open()
        self._release(txn)

    def transaction(self, actor: str) -> "_TxnContext":
        return _TxnContext(self, actor)

    def _release(self, txn: TransactionToken):
        txn._open = False
        self._writer_thread = None
        self._write_lock.release()

    def _finalize(self, txn: TransactionToken):
        """Resolve buffered writes against the base state; drop no-ops."""
        at = iso_ms(self._clock())
        writes = []  # (kind, id, final record | None)
        audit = []
        for (kind, eid), (record, audit_op) in txn._writes.items():
            before = self._state[kind].get(eid)
            if record is None and before is None:
                continue  # inserted then deleted inside the txn
            before_s = canonical_json(before) if before is not None else ""
            after_s = canonical_json(record) if record is not None else ""
            if before_s == after_s:
                continue  # no-op update: no state change, no audit record
            if audit_op in ("insert", "update", "delete"):
                op = "delete" if record is None else ("update" if before is not None else "insert")
            else:
                op = audit_op
            writes.append((kind, eid, json.loads(after_s) if after_s else None))
            audit.append(
                {
                    "txn_id": txn.txn_id,
                    "entity_kind": kind,
                    "entity_id": eid,
                    "op": op,
                    "actor": txn.actor,
                    "at": at,
                    "before": before_s,
                    "after": after_s,
                }
            )
        return writes, audit

    def _append_journal(self, txn, writes, audit):
        line = (
            json.dumps(
                {
                    "txn_id": txn.txn_id,
                    "writes": [[k, e, r] for k, e, r in writes],
                    "audit": audit,
                    "system": txn._system,
                    "counters": {"txn": self._txn_counter, "id": self._id_counter},
                },
                ensure_ascii=True,
            )
            + "\n"
        )
        offset = self._journal.tell()
        try:
            self._journal.write(line)
            self._journal.flush()
        except OSError as exc:
            try:  # drop the partial line so later commits stay parseable
                self._journal.seek(offset)
                self._journal.truncate()
            except OSError:
                self._closed = True
            raise ServiceInterruptionError(detail="journal write failed") from exc

    def _apply(self, writes, audit, system):
        new_state = dict(self._state)
        touched = {}
        for kind, eid, record in writes:
            if kind not in touched:
                touched[kind] = dict(new_state[kind])
                new_state[kind] = touched[kind]
            if record is None:
                touched[kind].pop(eid, None)
            else:
                touched[kind][eid] = record
        if system:
            new_system = dict(self._system)
            new_system.update(system)
            self._system = new_system
        self._state = new_state
        self._audit.extend(audit)

    def _replay(self):
        with open(self._path, "r", encoding="ascii") as f:
            for line in f:
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn final line from a crash mid-append
                self._apply(
                    [tuple(w) for w in entry["writes"]], entry["audit"], entry.get("system", {})
                )
                self._txn_counter = entry["counters"]["txn"]
                self._id_counter = entry["counters"]["id"]

    # -- reads ------------------------------------------------------------

    def get(self, kind: str, entity_id: str):
        """Committed record as an independent copy, or None."""
        record = self.get_ref(kind, entity_id)
        return json.loads(canonical_json(record)) if record is not None else None

    def get_ref(self, kind: str, entity_id: str):
        """Committed record without copying; callers must not mutate it."""
        self._ensure_open()
        return self._state[kind].get(entity_id)

    def iter_records(self, kind: str) -> Iterator[tuple]:
        self._ensure_open()
        return iter(list(self._state[kind].items()))

    def count(self, kind: str) -> int:
        self._ensure_open()
        return len(self._state[kind])

    def get_system(self, key: str, default=None):
        self._ensure_open()
        return self._system.get(key, default)

    # -- audit --------------------------------------------------------------

    def browse_audit(
        self,
        actor: str | None = None,
        date_from: str | None = None,
        date_to: str | None = None,
        text: str | None = None,
    ) -> list:
        """Matching audit records, oldest first; sensitive values redacted."""
        self._ensure_open()
        try:
            lo = parse_ts(date_from) if date_from else None
            hi = parse_ts(date_to) if date_to else None
        except ValueError as exc:
            raise ValidationError("malformed-date-range", str(exc)) from None
        if lo is not None and hi is not None and lo > hi:
            raise ValidationError("malformed-date-range", "empty range")
        out = []
        for rec in list(self._audit):
            if actor is not None and rec["actor"] != actor:
                continue
            at = parse_ts(rec["at"])
            if lo is not None and at < lo:
                continue
            if hi is not None and at > hi:
                continue
            if text is not None and text not in rec["before"] and text not in rec["after"]:
                continue
            out.append(_redact(rec))
        return out

    def audit_size(self) -> int:
        return len(self._audit)

    def audit_tail(self, since: int) -> list:
        """Unredacted records appended after index ``since``; for internal checks."""
        return [json.loads(canonical_json(r)) for r in self._audit[since:]]

    # -- identity and equality ----------------------------------------------

    def _mint_id(self) -> str:
        self._id_counter += 1
        return str(self._id_counter).zfill(ID_WIDTH)

    def dump_canonical(self) -> bytes:
        """Observable content (entities, system, audit) as canonical bytes."""
        self._ensure_open()
        return canonical_json(
            {"entities": self._state, "system": self._system, "audit": self._audit}
        ).encode("ascii")

    # -- backup / restore ----------------------------------------------------

    def run_backup(self, policy: BackupPolicy, manual: bool = False) -> BackupManifest:
        """Snapshot scoped kinds to both targets; returns the checksum manifest."""
        self._ensure_open()
        files = {}
        for kind in sorted(policy.scope):
            files[f"{kind}.json"] = canonical_json(self._state[kind])
        files["audit.json"] = canonical_json(self._audit)
        files["system.json"] = canonical_json(self._system)
        files["meta.json"] = canonical_json(
            {
                "counters": {"txn": self._txn_counter, "id": self._id_counter},
                "scope": sorted(policy.scope),
                "format": 1,
            }
        )
        manifest = BackupManifest(directory=policy.local_target)
        for name in sorted(files):
            data = files[name].encode("ascii")
            manifest.files.append((name, hashlib.sha256(data).hexdigest(), len(data)))
        for label, target in (("local", policy.local_target), ("remote", policy.remote_target)):
            directory = _resolve_target(label, target)
            try:
                directory.mkdir(parents=True, exist_ok=True)
                for name, content in files.items():
                    (directory / name).write_text(content, encoding="ascii")
                (directory / "MANIFEST").write_text(manifest.text, encoding="ascii")
            except OSError:
                raise BackupFailedError(label) from None
        return manifest

    @classmethod
    def restore(cls, backup_dir: str, path: str | None = None,
                clock: Callable[[], datetime] = utc_now) -> "Store":
        """Fresh store from a backup directory; verifies manifest checksums."""
        directory = Path(backup_dir)
        manifest_text = (directory / "MANIFEST").read_text(encoding="ascii")
        store = cls(path=None, clock=clock)
        loaded = {}
        for line in manifest_text.splitlines():
            name, digest, size = line.split(" ")
            data = (directory / name).read_bytes()
            if len(data) != int(size) or hashlib.sha256(data).hexdigest() != digest:
                raise ConflictError("backup-corrupt", name)
            loaded[name] = json.loads(data)
        for name, content in loaded.items():
            if name == "audit.json":
                store._audit = content
            elif name == "system.json":
                store._system = content
            elif name == "meta.json":
                store._txn_counter = content["counters"]["txn"]
                store._id_counter = content["counters"]["id"]
            else:
                store._state[name[: -len(".json")]] = content
        if path is not None:
            restored = cls(path=path, clock=clock)
            restored._state = store._state
            restored._audit = store._audit
            restored._system = store._system
            restored._txn_counter = store._txn_counter
            restored._id_counter = store._id_counter
            restored._rewrite_journal()
            return restored
        return store

    def _rewrite_journal(self):
        self._journal.seek(0)
        self._journal.truncate()
        writes = [
            [kind, eid, rec] for kind in ENTITY_KINDS for eid, rec in self._state[kind].items()
        ]
        self._journal.write(
            json.dumps(
                {
                    "txn_id": self._txn_counter,
                    "writes": writes,
                    "audit": self._audit,
                    "system": self._system,
                    "counters": {"txn": self._txn_counter, "id": self._id_counter},
                },
                ensure_ascii=True,
            )
            + "\n"
        )
        self._journal.flush()

    # -- lifecycle -----------------------------------------------------------

    def close(self):
        self._closed = True
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    def fail_next_commit(self, exc: Exception | None = None):
        """Test hook: raise ``exc`` at the next commit, before anything applies."""

        def fault():
            raise exc if exc is not None else ServiceInterruptionError(detail="injected fault")

        self._commit_fault = fault

    def _ensure_open(self):
        if self._closed:
            raise ServiceInterruptionError("store-unavailable")

    def _ensure_open_locked(self):
        if self._closed:
            self._writer_thread = None
            self._write_lock.release()
            raise ServiceInterruptionError("store-unavailable")


class _DryRunContext:
    def __init__(self, store: Store):
        self._store = store

    def __enter__(self):
        self._store._dry_run.active = True
        return self

    def __exit__(self, exc_type, exc, tb):
        self._store._dry_run.active = False
        return False


class _TxnContext:
    def __init__(self, store: Store, actor: str):
        self._store = store
        self._actor = actor
        self._txn: TransactionToken | None = None

    def __enter__(self) -> TransactionToken:
        self._txn = self._store.begin_txn(self._actor)
        return self._txn

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self._store.commit_txn(self._txn)
        elif self._txn._open:
            self._store.abort_txn(self._txn)
        return False


def _redact(record: dict) -> dict:
    out = dict(record)
    for key in ("before", "after"):
        if out[key]:
            out[key] = _redact_snapshot(out[key])
    return out


def _redact_snapshot(snapshot: str) -> str:
    data = json.loads(snapshot)
    _redact_obj(data)
    return canonical_json(data)


def _redact_obj(obj):
    if isinstance(obj, dict):
        for key, value in obj.items():
            if key in _REDACTED_FIELDS and isinstance(value, str):
                obj[key] = "[redacted]"
            else:
                _redact_obj(value)
    elif isinstance(obj, list):
        for item in obj:
            _redact_obj(item)


def _resolve_target(label: str, target: str) -> Path:
    if not target:
        raise BackupFailedError(label)
    parsed = urlparse(target)
    if parsed.scheme in ("", "file"):
        return Path(parsed.path if parsed.scheme == "file" else target)
    raise BackupFailedError(label)
