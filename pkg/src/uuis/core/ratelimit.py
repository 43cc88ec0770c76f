"""Per-principal sliding-window limiter with CAPTCHA escalation.

After five admitted events inside a rolling 30-second window, every further
event needs a valid single-use CAPTCHA; one valid answer admits exactly one
event.  Windows are kept per (principal, kind) so query throttling and login
throttling never interfere.

An event is inside the window while ``now - t < window``; at exactly the
window width it has aged out, so five events spread over 31 seconds never
escalate.  Refused events are not recorded.
"""

from __future__ import annotations

import threading
from collections import deque

ADMIT = "admit"
CAPTCHA_REQUIRED = "captcha-required"


class SlidingWindowLimiter:
    def __init__(self, window_seconds: float = 30.0, free_events: int = 5):
        self.window_seconds = window_seconds
        self.free_events = free_events
        self._events: dict[tuple[str, str], deque] = {}
        self._lock = threading.Lock()

    def check(self, principal: str, kind: str, now: float, captcha_ok: bool = False) -> str:
        """Decide one event; records it only when admitted."""
        key = (principal, kind)
        with self._lock:
            window = self._events.get(key)
            if window is None:
                window = self._events[key] = deque()
            cutoff = now - self.window_seconds
            while window and window[0] <= cutoff:
                window.popleft()
            if len(window) < self.free_events or captcha_ok:
                window.append(now)
                return ADMIT
            return CAPTCHA_REQUIRED

    def reset(self, principal: str, kind: str):
        with self._lock:
            self._events.pop((principal, kind), None)
