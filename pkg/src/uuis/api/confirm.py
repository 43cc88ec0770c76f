"""Two-phase confirmation tokens.

Mutations the flows gate behind a confirmation dialog run an echo phase
first: the operation executes under a store dry run (full validation, no
state change) and the caller gets the payload back with a token.  Repeating
the call with the token commits the stored payload.  Tokens are single-use,
bound to (user, operation) and expire after ten minutes.
"""

from __future__ import annotations

import secrets
import threading
from datetime import datetime, timedelta
from typing import Callable

from ..core.errors import ConflictError
from ..core.store import utc_now

TOKEN_TTL_SECONDS = 600


class ConfirmRegistry:
    def __init__(self, clock: Callable[[], datetime] = utc_now):
        self._clock = clock
        self._pending: dict = {}
        self._lock = threading.Lock()

    def begin(self, user_id: str, operation: str, payload: dict) -> str:
        token = secrets.token_urlsafe(16)
        expires = self._clock() + timedelta(seconds=TOKEN_TTL_SECONDS)
        with self._lock:
            self._prune()
            self._pending[token] = (user_id, operation, payload, expires)
        return token

    def take(self, user_id: str, operation: str, token: str) -> dict:
        """Redeem a token exactly once; anything off is the same conflict."""
        with self._lock:
            entry = self._pending.pop(token, None)
        if entry is None:
            raise ConflictError("confirm-token-invalid")
        owner, bound_op, payload, expires = entry
        if owner != user_id or bound_op != operation or self._clock() >= expires:
            raise ConflictError("confirm-token-invalid")
        return payload

    def _prune(self):
        now = self._clock()
        for token in [t for t, e in self._pending.items() if now >= e[3]]:
            del self._pending[token]
