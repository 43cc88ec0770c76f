"""Notification outbox: a persisted spool standing in for email/SMS delivery.

Delivery is pluggable.  The default sender writes one file per message into
a spool directory (`<enqueued_at>-<seq>.eml` for email, `.sms` for SMS);
tests swap in :class:`MemorySender`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable

from .store import iso_ms, utc_now


@dataclass(frozen=True)
class OutboxMessage:
    to: str
    subject: str
    body: str
    enqueued_at: str
    channel: str = "email"


class MemorySender:
    def __init__(self):
        self.messages: list[OutboxMessage] = []

    def __call__(self, message: OutboxMessage):
        self.messages.append(message)


class SpoolSender:
    def __init__(self, directory: str):
        self._dir = Path(directory)
        self._seq = 0
        self._lock = threading.Lock()

    def __call__(self, message: OutboxMessage):
        with self._lock:
            self._seq += 1
            seq = self._seq
        self._dir.mkdir(parents=True, exist_ok=True)
        ext = "eml" if message.channel == "email" else "sms"
        name = f"{message.enqueued_at}-{seq}.{ext}"
        content = f"To: {message.to}\nSubject: {message.subject}\n\n{message.body}\n"
        (self._dir / name).write_text(content, encoding="utf-8")


class Outbox:
    def __init__(self, sender: Callable[[OutboxMessage], None],
                 clock: Callable[[], datetime] = utc_now):
        self._sender = sender
        self._clock = clock

    def email(self, to: str, subject: str, body: str):
        self._sender(OutboxMessage(to, subject, body, iso_ms(self._clock()), "email"))

    def sms(self, to: str, body: str):
        self._sender(OutboxMessage(to, "", body, iso_ms(self._clock()), "sms"))
