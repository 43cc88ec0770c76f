"""User-facing message catalog keyed by error code and locale.

English ships complete; the French column is structural for now and falls
back to English where empty.  Codes absent from the catalog render as the
humanized code so new errors degrade gracefully instead of crashing.
"""

from __future__ import annotations

# code -> {locale: text}; None means "not yet translated"
CATALOG: dict = {
    "unauthenticated": {"en": "Authentication required", "fr": "Authentification requise"},
    "invalid-credentials": {
        "en": "Invalid username, password or CAPTCHA",
        "fr": "Nom d'utilisateur, mot de passe ou CAPTCHA invalide",
    },
    "reauth-failed": {"en": "Password confirmation failed", "fr": None},
    "not-authorized": {
        "en": "You are not authorized to perform the operation",
        "fr": "Vous n'êtes pas autorisé à effectuer cette opération",
    },
    "scope-violation": {"en": "Target is outside your administrative scope", "fr": None},
    "faculty-mismatch": {"en": "Asset faculty differs from your faculty", "fr": None},
    "owner-edit-forbidden": {"en": "Only a university administrator may change the owner",
                             "fr": None},
    "faculty-edit-forbidden": {"en": "Only a university administrator may change the faculty",
                               "fr": None},
    "not-designated": {"en": "You are not the designated user for this request", "fr": None},
    "not-supervisor": {"en": "Only the notified supervisor may commit the building", "fr": None},
    "not-found": {"en": "No results found", "fr": "Aucun résultat trouvé"},
    "no-results": {"en": "No results found", "fr": "Aucun résultat trouvé"},
    "missing-mandatory-field": {"en": "A mandatory field is missing", "fr": None},
    "missing-description": {"en": "A description is required", "fr": None},
    "missing-note": {"en": "A closure note is required", "fr": None},
    "policy-violation": {
        "en": "Passwords need 8 or more characters including a letter and a digit",
        "fr": None,
    },
    "old-mismatch": {"en": "The current password is incorrect", "fr": None},
    "confirm-mismatch": {"en": "The new passwords do not match", "fr": None},
    "immutable-field": {"en": "This field cannot be changed", "fr": None},
    "duplicate-barcode": {"en": "An asset with this barcode already exists", "fr": None},
    "already-terminal": {"en": "The request was already decided", "fr": None},
    "install-count-exceeded": {"en": "The license installation limit is reached", "fr": None},
    "license-inactive": {"en": "A discontinued license accepts no new installations",
                         "fr": None},
    "too-many-imports": {"en": "Too many imports are running; try again shortly", "fr": None},
    "captcha-required": {"en": "Please solve a CAPTCHA to continue", "fr": None},
    "confirm-required": {"en": "Please confirm the submission", "fr": None},
    "confirm-token-invalid": {"en": "The confirmation expired or was already used", "fr": None},
    # the exact wordings below are load-bearing; tests pin them
    "service-interruption": {"en": "Temporary service interruption",
                             "fr": "Interruption temporaire du service"},
    "store-unavailable": {"en": "Temporary service interruption",
                          "fr": "Interruption temporaire du service"},
    "high-load": {"en": "Please wait, system is experiencing high load", "fr": None},
    "retry-later": {"en": "Please try again later", "fr": None},
    "crash": {"en": "The system hit an unexpected problem. IT has been alerted.", "fr": None},
}


def resolve(code: str, locale: str = "en") -> str:
    entry = CATALOG.get(code)
    if entry is None:
        return code.replace("-", " ").capitalize()
    if locale != "en" and entry.get(locale):
        return entry[locale]
    return entry["en"]


def locale_from_header(accept_language: str | None) -> str:
    if accept_language and accept_language.strip().lower().startswith("fr"):
        return "fr"
    return "en"
