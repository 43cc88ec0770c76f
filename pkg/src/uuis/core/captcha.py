"""Single-use CAPTCHA challenges.

The challenge is a short character string the client must transcribe; how it
gets obfuscated on screen is the UI's business.  Challenges expire and are
consumed on first redemption attempt, valid or not.
"""

from __future__ import annotations

import secrets
import threading
from datetime import datetime, timedelta
from typing import Callable

from .store import utc_now

_ALPHABET = "ABCDEFGHJKLMNPQRSTUVWXYZ23456789"  # no 0/O/1/I lookalikes


class CaptchaService:
    def __init__(self, clock: Callable[[], datetime] = utc_now, ttl_seconds: int = 600):
        self._clock = clock
        self._ttl = timedelta(seconds=ttl_seconds)
        self._challenges: dict[str, tuple[str, datetime]] = {}
        self._lock = threading.Lock()

    def issue(self) -> dict:
        answer = "".join(secrets.choice(_ALPHABET) for _ in range(6))
        challenge_id = secrets.token_urlsafe(16)
        with self._lock:
            self._prune()
            self._challenges[challenge_id] = (answer, self._clock() + self._ttl)
        return {"challenge_id": challenge_id, "prompt": f"Type the characters: {answer}"}

    def redeem(self, challenge_id: str, text: str) -> bool:
        """True iff the challenge exists, is unexpired and ``text`` matches.

        The challenge is consumed either way; a wrong answer burns it.
        """
        with self._lock:
            entry = self._challenges.pop(challenge_id, None)
        if entry is None:
            return False
        answer, expires_at = entry
        if self._clock() >= expires_at:
            return False
        return secrets.compare_digest(answer, text.strip().upper())

    def _prune(self):
        now = self._clock()
        dead = [cid for cid, (_, exp) in self._challenges.items() if now >= exp]
        for cid in dead:
            del self._challenges[cid]
