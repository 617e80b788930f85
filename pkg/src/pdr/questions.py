"""Profile-conditioned decomposition of a research query into sub-queries."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import MalformedOutput
from .llm import ChatRequest, Gateway
from .profile import UserProfile

DEFAULT_K_MAX = 4


@dataclass(frozen=True)
class ResearchQuery:
    text: str
    task: str
    sample_id: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text is empty")


@dataclass(frozen=True)
class SubQuery:
    sq_id: str
    index: int
    text: str
    rationale: str = ""
    generation: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "sq_id": self.sq_id,
            "index": self.index,
            "text": self.text,
            "rationale": self.rationale,
            "generation": self.generation,
        }


@dataclass(frozen=True)
class SubQueryPlan:
    query: ResearchQuery
    sub_queries: tuple[SubQuery, ...]
    k: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.query.sample_id,
            "task": self.query.task,
            "query": self.query.text,
            "k_max": self.k,
            "sub_queries": [sq.to_dict() for sq in self.sub_queries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


DECOMPOSE_SYSTEM = """You plan research for one specific user. Break the user's request into at most {k_max} \
focused sub-queries that together cover what this user needs, using the profile to resolve intent \
(their field, interests, depth and style). Do not ask the user anything.
Return one JSON object: {{"sub_queries": [{{"text": "...", "rationale": "one line"}}, ...]}}"""


def profile_block(profile: UserProfile | None) -> str:
    if profile is None or profile.is_empty():
        return "(no profile available)"
    return json.dumps(profile.to_dict(), indent=2, ensure_ascii=False)


def render_decompose_prompt(query: ResearchQuery, profile: UserProfile | None) -> str:
    return "\n\n".join(
        [
            "USER PROFILE:\n" + profile_block(profile),
            f"TASK: {query.task}",
            "QUERY:\n" + query.text,
        ]
    )


def _check_items(obj: dict[str, Any]) -> None:
    for item in obj["sub_queries"]:
        if isinstance(item, str):
            continue
        if not isinstance(item, dict) or not isinstance(item.get("text"), str):
            raise MalformedOutput("each sub-query needs a string 'text'")


def develop_subqueries(
    query: ResearchQuery,
    profile: UserProfile | None,
    gateway: Gateway,
    k_max: int = DEFAULT_K_MAX,
) -> SubQueryPlan:
    """One decompose call; duplicates (case-insensitive) collapse, then cap at ``k_max``.

    An empty list from the model falls back to the original query.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    request = ChatRequest(
        DECOMPOSE_SYSTEM.format(k_max=k_max),
        render_decompose_prompt(query, profile),
        tag="decompose",
        temperature=0.0,
        scope=query.sample_id,
    )
    obj = gateway.complete_structured(request, [("sub_queries", "list")], check=_check_items)
    seen: set[str] = set()
    picked: list[tuple[str, str]] = []
    for item in obj["sub_queries"]:
        text, rationale = (item, "") if isinstance(item, str) else (item["text"], str(item.get("rationale") or ""))
        text = " ".join(text.split())
        key = text.casefold()
        if not text or key in seen:
            continue
        seen.add(key)
        picked.append((text, rationale))
    picked = picked[:k_max]
    if not picked:
        picked = [(query.text, "fallback")]
    subs = tuple(SubQuery(f"{query.sample_id}#{i}", i, t, r, 0) for i, (t, r) in enumerate(picked))
    return SubQueryPlan(query, subs, k_max)


def write_plan(run_dir: str | Path, plan: SubQueryPlan) -> Path:
    path = Path(run_dir) / "plans" / f"{plan.query.sample_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(plan.to_json(), encoding="utf-8")
    return path
