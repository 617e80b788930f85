"""Final report synthesis from evidence, profile and plan."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import EmptyGeneration
from .index import ScoredChunk
from .llm import ChatRequest, Gateway
from .profile import UserProfile
from .questions import SubQueryPlan, profile_block
from .retrieval import EvidenceBundle

log = logging.getLogger(__name__)

EVIDENCE_EXCERPT_CHARS = 800
INSUFFICIENT_EVIDENCE = "Note: insufficient evidence was retrieved for this request."

SECTION_TABLE: dict[str, tuple[str, ...]] = {
    "abstract_gen": ("Abstract",),
    "topic_writing": ("Title", "Post"),
    "report_gen": ("Summary", "Background", "Findings", "Analysis", "Recommendations"),
    "speech_script": ("Opening", "Main Points", "Closing"),
}

_CITATION = re.compile(r"\[([^\[\]\s]+)\]")


@dataclass(frozen=True)
class ReportSpec:
    section_order: tuple[str, ...]
    depth: str
    tone: str
    formatting: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "section_order": list(self.section_order),
            "depth": self.depth,
            "tone": self.tone,
            "formatting": list(self.formatting),
        }


@dataclass
class Report:
    sample_id: str
    text: str
    citations: list[str]
    spec: ReportSpec
    gateway_tag: str = "generate"
    warnings: list[str] = field(default_factory=list)

    def meta(self, ledger_snapshot: dict | None = None) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "spec": self.spec.to_dict(),
            "citations": list(self.citations),
            "warnings": list(self.warnings),
            "ledger": ledger_snapshot or {},
        }


def derive_report_spec(profile: UserProfile | None, task: str) -> ReportSpec:
    if task not in SECTION_TABLE:
        raise ValueError(f"unknown task {task!r}")
    prefs = profile.response_preferences if profile is not None else None
    return ReportSpec(
        section_order=SECTION_TABLE[task],
        depth=prefs.depth if prefs else "standard",
        tone=prefs.tone if prefs else "",
        formatting=tuple(prefs.formatting) if prefs else (),
    )


GENERATE_SYSTEM = """You write the final document for a user, grounded in the numbered evidence. \
Follow the requested section order, depth and tone, and imitate the user's own writing where a profile is given. \
Reason privately about the user's style before writing, but output only the document in Markdown. \
Cite evidence by its bracketed id, e.g. [doc::0001], right after the claim it supports. \
Never cite ids that are not listed. If the evidence is insufficient, say so plainly."""


def render_evidence(merged: list[ScoredChunk]) -> str:
    if not merged:
        return "EVIDENCE: none\n" + INSUFFICIENT_EVIDENCE
    parts = [f"EVIDENCE: {len(merged)} passages"]
    for n, sc in enumerate(merged, 1):
        parts.append(f"({n}) [{sc.chunk_id}] ({sc.origin}, score {sc.score:.3f})\n{sc.chunk.text[:EVIDENCE_EXCERPT_CHARS]}")
    return "\n\n".join(parts)


def render_generate_prompt(
    spec: ReportSpec,
    profile: UserProfile | None,
    plan: SubQueryPlan,
    bundle: EvidenceBundle,
    include_plan: bool = True,
    use_evidence: bool = True,
) -> str:
    parts = [
        "REPORT SPEC:\n" + json.dumps(spec.to_dict(), ensure_ascii=False),
        "SECTIONS: " + " | ".join(spec.section_order),
        "USER PROFILE:\n" + profile_block(profile),
        "QUERY:\n" + plan.query.text,
    ]
    if include_plan:
        parts.append("PLAN:\n" + "\n".join(f"{sq.index + 1}. {sq.text}" for sq in plan.sub_queries))
    if use_evidence:
        parts.append(render_evidence(bundle.merged))
    return "\n\n".join(parts)


def parse_citations(text: str, known: set[str]) -> tuple[list[str], list[str]]:
    """Bracketed ids in order of first appearance, split into (known, unknown)."""
    cited: list[str] = []
    unknown: list[str] = []
    for cid in _CITATION.findall(text):
        target = cited if cid in known else unknown
        if cid not in target:
            target.append(cid)
    return cited, unknown


def generate_report(
    bundle: EvidenceBundle,
    profile: UserProfile | None,
    plan: SubQueryPlan,
    gateway: Gateway,
    system_profile: bool = False,
    include_plan: bool = True,
    use_evidence: bool = True,
) -> Report:
    """Single generate call (one retry on empty text).

    ``system_profile`` puts the profile in the system prompt instead of the
    user prompt, which is how the profile-prompting baseline injects it.
    ``use_evidence=False`` leaves evidence out of the prompt entirely.
    """
    spec = derive_report_spec(profile, plan.query.task)
    system = GENERATE_SYSTEM
    user_profile = profile
    if system_profile:
        system += "\n\nUSER PROFILE:\n" + profile_block(profile)
        user_profile = None
    request = ChatRequest(
        system,
        render_generate_prompt(spec, user_profile, plan, bundle, include_plan, use_evidence),
        tag="generate",
        temperature=0.3,
        max_output_chars=20000,
        scope=plan.query.sample_id,
    )
    text = gateway.complete(request).text.strip()
    if not text:
        text = gateway.complete(request).text.strip()
    if not text:
        raise EmptyGeneration(f"{plan.query.sample_id}: model returned empty text twice")
    if use_evidence and not bundle.merged and INSUFFICIENT_EVIDENCE not in text:
        text += "\n\n" + INSUFFICIENT_EVIDENCE
    citations, unknown = parse_citations(text, set(bundle.chunk_ids()))
    warnings = [f"dropped unknown citation [{cid}]" for cid in unknown]
    for w in warnings:
        log.warning("%s: %s", plan.query.sample_id, w)
    return Report(plan.query.sample_id, text + "\n", citations, spec, "generate", warnings)


def write_report(run_dir: str | Path, report: Report, ledger_snapshot: dict | None = None) -> Path:
    out = Path(run_dir) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{report.sample_id}.md"
    path.write_text(report.text, encoding="utf-8")
    meta = json.dumps(report.meta(ledger_snapshot), indent=2, ensure_ascii=False) + "\n"
    (out / f"{report.sample_id}.meta.json").write_text(meta, encoding="utf-8")
    return path
