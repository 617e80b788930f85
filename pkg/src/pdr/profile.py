"""User profile extraction from a user's private documents."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .corpus import CorpusHandle, SourceDocument
from .errors import EmptyCorpus, MalformedOutput, ProfileSchemaError
from .llm import ChatRequest, Gateway

SCHEMA_VERSION = 1
DEPTHS = ("overview", "standard", "expert")
MAX_DOCS = 10
MAX_DOC_CHARS = 4000
MAX_EXEMPLARS = 3
MAX_EXEMPLAR_CHARS = 500
MAX_INTEREST_CHARS = 80


@dataclass(frozen=True)
class ResponsePreferences:
    tone: str = ""
    structure: str = ""
    depth: str = "standard"
    formatting: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"tone": self.tone, "structure": self.structure, "depth": self.depth, "formatting": list(self.formatting)}


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    demographics: dict[str, str] = field(default_factory=dict)
    learning_interests: tuple[str, ...] = ()
    response_preferences: ResponsePreferences = field(default_factory=ResponsePreferences)
    interaction_tendencies: tuple[str, ...] = ()
    style_exemplars: tuple[str, ...] = ()
    provenance: tuple[str, ...] = ()
    schema_version: int = SCHEMA_VERSION

    def is_empty(self) -> bool:
        return not (
            self.demographics
            or self.learning_interests
            or self.interaction_tendencies
            or self.style_exemplars
            or self.response_preferences != ResponsePreferences()
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "user_id": self.user_id,
            "demographics": dict(self.demographics),
            "learning_interests": list(self.learning_interests),
            "response_preferences": self.response_preferences.to_dict(),
            "interaction_tendencies": list(self.interaction_tendencies),
            "style_exemplars": list(self.style_exemplars),
            "provenance": list(self.provenance),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UserProfile":
        prefs = d.get("response_preferences") or {}
        return cls(
            user_id=d["user_id"],
            demographics={str(k): str(v) for k, v in (d.get("demographics") or {}).items()},
            learning_interests=tuple(d.get("learning_interests") or ()),
            response_preferences=ResponsePreferences(
                tone=prefs.get("tone", ""),
                structure=prefs.get("structure", ""),
                depth=prefs.get("depth", "standard"),
                formatting=tuple(prefs.get("formatting") or ()),
            ),
            interaction_tendencies=tuple(d.get("interaction_tendencies") or ()),
            style_exemplars=tuple(d.get("style_exemplars") or ()),
            provenance=tuple(d.get("provenance") or ()),
            schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
        )

    @classmethod
    def from_json(cls, text: str) -> "UserProfile":
        return cls.from_dict(json.loads(text))


def empty_profile(user_id: str = "") -> UserProfile:
    return UserProfile(user_id=user_id)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def validate_profile(p: UserProfile, corpus: CorpusHandle | None = None) -> list[Violation]:
    """Every schema invariant ``p`` breaks; an empty list means valid.

    Grounding checks need ``corpus``; without it they are skipped.
    """
    out: list[Violation] = []
    if not p.user_id:
        out.append(Violation("EmptyUserId", "user_id is empty"))
    if p.schema_version != SCHEMA_VERSION:
        out.append(Violation("SchemaVersion", f"unsupported schema_version {p.schema_version}"))
    seen: set[str] = set()
    for interest in p.learning_interests:
        if interest in seen:
            out.append(Violation("DuplicateInterest", interest))
        seen.add(interest)
        if len(interest) > MAX_INTEREST_CHARS:
            out.append(Violation("InterestTooLong", interest[:40]))
        if not interest.strip():
            out.append(Violation("EmptyInterest", ""))
    if p.response_preferences.depth not in DEPTHS:
        out.append(Violation("InvalidDepth", p.response_preferences.depth))
    if len(p.style_exemplars) > MAX_EXEMPLARS:
        out.append(Violation("TooManyExemplars", str(len(p.style_exemplars))))
    for ex in p.style_exemplars:
        if len(ex) > MAX_EXEMPLAR_CHARS:
            out.append(Violation("ExemplarTooLong", ex[:40]))
    if corpus is not None:
        known = {d.doc_id: d for d in corpus.documents}
        for doc_id in p.provenance:
            if doc_id not in known:
                out.append(Violation("UnknownProvenance", doc_id))
        bodies = [known[i].body for i in p.provenance if i in known]
        for ex in p.style_exemplars:
            if not ex or not any(ex in b for b in bodies):
                out.append(Violation("ExemplarNotGrounded", ex[:40]))
    return out


PROFILE_SYSTEM = """You are a personal-understanding agent. Read the user's own documents and \
describe the user as one JSON object with exactly these keys:
  "demographics": object of short string facts (e.g. role, field, audience),
  "learning_interests": list of short topic strings,
  "response_preferences": {"tone": str, "structure": str, "depth": "overview"|"standard"|"expert", "formatting": [str]},
  "interaction_tendencies": list of short strings describing how the user writes and asks,
  "style_exemplars": up to 3 passages copied VERBATIM from the documents that best show the user's style (each under 500 characters).
Return only the JSON object."""

PROFILE_KEYS = [
    ("demographics", "object"),
    ("learning_interests", "list"),
    ("response_preferences", "object"),
    ("interaction_tendencies", "list"),
    ("style_exemplars", "list"),
]


def select_documents(docs: tuple[SourceDocument, ...], max_docs: int = MAX_DOCS) -> list[SourceDocument]:
    """Most recent first, where recency is position in the dataset."""
    return list(reversed(docs))[:max_docs]


def render_profile_prompt(user_id: str, docs: list[SourceDocument], max_chars: int = MAX_DOC_CHARS) -> str:
    parts = [f"USER: {user_id}", f"DOCUMENTS: {len(docs)}"]
    for d in docs:
        header = f"=== DOCUMENT {d.doc_id} ({d.format})" + (f": {d.title}" if d.title else "") + " ==="
        parts.append(header + "\n" + d.body[:max_chars])
    parts.append("=== END ===")
    return "\n\n".join(parts)


def _check_profile(obj: dict[str, Any]) -> None:
    prefs = obj["response_preferences"]
    depth = prefs.get("depth", "standard")
    if depth not in DEPTHS:
        raise MalformedOutput(f"response_preferences.depth must be one of {', '.join(DEPTHS)}")
    for key in ("learning_interests", "interaction_tendencies", "style_exemplars"):
        if not all(isinstance(v, str) for v in obj[key]):
            raise MalformedOutput(f"{key} must contain only strings")
    if not all(isinstance(v, str) for v in prefs.get("formatting") or []):
        raise MalformedOutput("response_preferences.formatting must contain only strings")


def _dedup(items: list[str], limit: int | None = None) -> tuple[str, ...]:
    out: list[str] = []
    for raw in items:
        item = " ".join(raw.split())
        if limit is not None:
            item = item[:limit].rstrip()
        if item and item not in out:
            out.append(item)
    return tuple(out)


def extract_profile(
    corpus: CorpusHandle,
    user_id: str,
    gateway: Gateway,
    max_docs: int = MAX_DOCS,
    max_chars: int = MAX_DOC_CHARS,
) -> UserProfile:
    """Ask the model for a structured profile of ``user_id``.

    Documents are those tagged with the user in ``corpus``; if no document is
    tagged, every document in the corpus counts as the user's. Exemplars that
    are not verbatim substrings of a consulted document are dropped.
    """
    docs = corpus.for_user(user_id).documents or (
        corpus.documents if not any("user_id" in d.metadata for d in corpus.documents) else ()
    )
    if not docs:
        raise EmptyCorpus(f"no private documents for user {user_id!r}")
    chosen = select_documents(docs, max_docs)
    request = ChatRequest(
        PROFILE_SYSTEM,
        render_profile_prompt(user_id, chosen, max_chars),
        tag="profile",
        temperature=0.0,
        scope=user_id,
    )
    try:
        obj = gateway.complete_structured(request, PROFILE_KEYS, check=_check_profile)
    except MalformedOutput as exc:
        raise ProfileSchemaError(f"profile for {user_id!r}: {exc}") from exc

    prefs = obj["response_preferences"]
    bodies = [d.body for d in chosen]
    # exemplars stay byte-exact: no whitespace cleanup, or grounding would break
    exemplars = [
        ex for ex in obj["style_exemplars"] if ex.strip() and len(ex) <= MAX_EXEMPLAR_CHARS and any(ex in b for b in bodies)
    ]
    profile = UserProfile(
        user_id=user_id,
        demographics={str(k): str(v) for k, v in obj["demographics"].items()},
        learning_interests=_dedup(obj["learning_interests"], MAX_INTEREST_CHARS),
        response_preferences=ResponsePreferences(
            tone=str(prefs.get("tone", "")),
            structure=str(prefs.get("structure", "")),
            depth=prefs.get("depth", "standard"),
            formatting=_dedup(prefs.get("formatting") or []),
        ),
        interaction_tendencies=_dedup(obj["interaction_tendencies"]),
        style_exemplars=tuple(dict.fromkeys(exemplars))[:MAX_EXEMPLARS],
        provenance=tuple(d.doc_id for d in chosen),
    )
    problems = validate_profile(profile, corpus)
    if problems:
        raise ProfileSchemaError(f"profile for {user_id!r} violates {[v.code for v in problems]}")
    return profile


def write_profile(run_dir: str | Path, profile: UserProfile) -> Path:
    path = Path(run_dir) / "profiles" / f"{profile.user_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(profile.to_json(), encoding="utf-8")
    return path
