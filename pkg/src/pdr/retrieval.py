"""Iterative private/public retrieval with filtering, stop decisions and query evolution.

Each sub-query runs its own bounded state machine::

    internal search -> filter -> append -> decide
        -> [external search -> filter -> append]
        -> stop | evolve and repeat

Every transition is appended to the evidence set's trace, which is enough to
rebuild the evidence from the indices alone (see :func:`replay_trace`).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from .errors import MalformedOutput, MissingGapQuery
from .index import Index, ScoredChunk, search
from .llm import ChatRequest, Gateway
from .questions import SubQuery, SubQueryPlan

FILTER_EXCERPT_CHARS = 600
DECIDE_EXCERPT_CHARS = 300


@dataclass(frozen=True)
class Decision:
    sufficient: bool
    need_external: bool
    gap_query: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"sufficient": self.sufficient, "need_external": self.need_external, "gap_query": self.gap_query}


FAIL_STOP = Decision(sufficient=True, need_external=False, gap_query=None)


@dataclass(frozen=True)
class Budget:
    max_iterations: int = 3
    top_k_internal: int = 5
    top_k_external: int = 5
    max_evidence_chunks: int = 24

    def __post_init__(self) -> None:
        for name in ("max_iterations", "top_k_internal", "top_k_external", "max_evidence_chunks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_evidence_chunks < self.top_k_internal:
            raise ValueError("max_evidence_chunks must be >= top_k_internal")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    state: str
    query_text: str
    generation: int
    added_chunk_ids: tuple[str, ...] = ()
    kept_chunk_ids: tuple[str, ...] = ()
    decision: Decision | None = None
    flags: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "iter": self.iter,
            "state": self.state,
            "query_text": self.query_text,
            "generation": self.generation,
            "added_chunk_ids": list(self.added_chunk_ids),
            "kept_chunk_ids": list(self.kept_chunk_ids),
            "decision": self.decision.to_dict() if self.decision else None,
            "flags": dict(sorted(self.flags.items())),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TraceRecord":
        dec = d.get("decision")
        return cls(
            d["iter"],
            d["state"],
            d["query_text"],
            d["generation"],
            tuple(d.get("added_chunk_ids", ())),
            tuple(d.get("kept_chunk_ids", ())),
            Decision(**dec) if dec else None,
            dict(d.get("flags", {})),
        )


@dataclass
class EvidenceSet:
    sq_id: str
    items: list[ScoredChunk] = field(default_factory=list)
    iterations_used: int = 0
    external_used: bool = False
    trace: list[TraceRecord] = field(default_factory=list)
    final_query: SubQuery | None = None

    def chunk_ids(self) -> list[str]:
        return [sc.chunk_id for sc in self.items]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sq_id": self.sq_id,
            "iterations_used": self.iterations_used,
            "external_used": self.external_used,
            "items": [sc.to_dict() for sc in self.items],
        }


@dataclass
class EvidenceBundle:
    sample_id: str
    per_subquery: list[EvidenceSet]
    merged: list[ScoredChunk]

    def chunk_ids(self) -> list[str]:
        return [sc.chunk_id for sc in self.merged]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "per_subquery": [s.to_dict() for s in self.per_subquery],
            "merged": [sc.to_dict() for sc in self.merged],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


FILTER_SYSTEM = """You filter retrieved passages for a research sub-query. Keep only passages that \
contain information useful for answering it; drop off-topic or redundant ones.
Return one JSON object: {"keep": [indices of passages to keep]}"""

DECIDE_SYSTEM = """You decide whether the evidence gathered so far answers a research sub-query.
Return one JSON object: {"sufficient": bool, "need_external": bool, "gap_query": string or null}
- sufficient: true when the evidence already covers the sub-query.
- need_external: true when the user's private documents cannot cover it and public sources should be searched.
- gap_query: when not sufficient, a refined query targeting exactly what is still missing."""


def render_filter_prompt(sq: SubQuery, candidates: list[ScoredChunk]) -> str:
    lines = [f"SUB-QUERY: {sq.text}", f"CANDIDATES: {len(candidates)}"]
    for i, sc in enumerate(candidates):
        lines.append(f"[{i}] {sc.chunk_id} ({sc.origin})\n{sc.chunk.text[:FILTER_EXCERPT_CHARS]}")
    return "\n\n".join(lines)


def render_decide_prompt(
    sq: SubQuery,
    evidence: EvidenceSet,
    iteration: int,
    max_iterations: int,
    latest: list[ScoredChunk],
    allow_external: bool,
) -> str:
    lines = [
        f"SUB-QUERY: {sq.text}",
        f"ITERATION: {iteration + 1} of {max_iterations}",
        f"EVIDENCE SO FAR: {len(evidence.items)} passages",
        "LATEST PASSAGES:",
    ]
    if latest:
        lines += [f"- [{sc.chunk_id}] {sc.chunk.text[:DECIDE_EXCERPT_CHARS]}" for sc in latest]
    else:
        lines.append("- (none)")
    if not allow_external:
        lines.append("External search is unavailable; need_external must be false.")
    return "\n".join(lines)


def _keep_check(obj: dict[str, Any]) -> None:
    if not isinstance(obj["keep"], list):
        raise MalformedOutput("'keep' must be a list")


def filter_chunks(
    sq: SubQuery,
    candidates: list[ScoredChunk],
    gateway: Gateway,
    flags: dict[str, Any] | None = None,
) -> list[ScoredChunk]:
    """Keep the candidates the filter agent selects, in input order.

    Out-of-range or non-integer indices are ignored. Unusable output keeps
    every candidate and sets ``flags['filter_fail_open']``.
    """
    if not candidates:
        return []
    request = ChatRequest(FILTER_SYSTEM, render_filter_prompt(sq, candidates), tag="filter", scope=sq.sq_id)
    try:
        obj = gateway.complete_structured(request, [("keep", "list")], check=_keep_check)
    except MalformedOutput:
        if flags is not None:
            flags["filter_fail_open"] = True
        return list(candidates)
    keep = {i for i in obj["keep"] if isinstance(i, int) and not isinstance(i, bool) and 0 <= i < len(candidates)}
    return [sc for i, sc in enumerate(candidates) if i in keep]


def decide(
    sq: SubQuery,
    evidence_so_far: EvidenceSet,
    gateway: Gateway,
    iteration: int = 0,
    max_iterations: int = 1,
    latest: list[ScoredChunk] | None = None,
    allow_external: bool = True,
    flags: dict[str, Any] | None = None,
) -> Decision:
    """Ask the decision agent whether to stop, go external, or refine.

    Unusable output stops the loop (sets ``flags['decide_fail_stop']``).
    """
    request = ChatRequest(
        DECIDE_SYSTEM,
        render_decide_prompt(sq, evidence_so_far, iteration, max_iterations, latest or [], allow_external),
        tag="decide",
        scope=sq.sq_id,
    )
    try:
        obj = gateway.complete_structured(
            request, [("sufficient", "bool"), ("need_external", "bool"), ("gap_query", "str?")]
        )
    except MalformedOutput:
        if flags is not None:
            flags["decide_fail_stop"] = True
        return FAIL_STOP
    gap = obj["gap_query"]
    gap = " ".join(gap.split()) if gap else None
    return Decision(obj["sufficient"], obj["need_external"] and allow_external, gap or None)


def evolve_query(sq: SubQuery, decision: Decision) -> SubQuery:
    if decision.sufficient or not decision.gap_query:
        raise MissingGapQuery(f"{sq.sq_id}: evolution needs an insufficient decision with a gap query")
    return replace(sq, text=decision.gap_query, generation=sq.generation + 1)


def _append(evidence: EvidenceSet, kept: Iterable[ScoredChunk], cap: int) -> tuple[list[str], bool]:
    """Merge ``kept`` into ``evidence``: dedup by id keeping max score, then cap."""
    pos = {sc.chunk_id: i for i, sc in enumerate(evidence.items)}
    added: list[str] = []
    capped = False
    for sc in kept:
        if sc.chunk_id in pos:
            i = pos[sc.chunk_id]
            if sc.score > evidence.items[i].score:
                evidence.items[i] = sc
        elif len(evidence.items) < cap:
            pos[sc.chunk_id] = len(evidence.items)
            evidence.items.append(sc)
            added.append(sc.chunk_id)
        else:
            capped = True
    return added, capped


def run_retrieval(
    sq: SubQuery,
    private_idx: Index,
    public_idx: Index | None,
    budget: Budget,
    gateway: Gateway,
    allow_external: bool = True,
) -> EvidenceSet:
    """Run the retrieval state machine for one sub-query.

    Halts after at most ``budget.max_iterations`` iterations whatever the
    agents answer. ``allow_external=False`` (or no public index) pins
    ``need_external`` to false.
    """
    allow_external = allow_external and public_idx is not None
    ev = EvidenceSet(sq.sq_id)
    query = sq
    for i in range(budget.max_iterations):
        flags: dict[str, Any] = {}
        cands = search(private_idx, query.text, budget.top_k_internal)
        kept = filter_chunks(query, cands, gateway, flags)
        added, capped = _append(ev, kept, budget.max_evidence_chunks)
        if capped:
            flags["evidence_capped"] = True
        ev.trace.append(
            TraceRecord(i, "internal", query.text, query.generation, tuple(added), tuple(sc.chunk_id for sc in kept), None, flags)
        )
        latest = kept

        flags = {}
        decision = decide(query, ev, gateway, i, budget.max_iterations, latest, allow_external, flags)
        ev.trace.append(TraceRecord(i, "decide", query.text, query.generation, decision=decision, flags=flags))

        if decision.need_external and allow_external:
            flags = {}
            cands = search(public_idx, query.text, budget.top_k_external)
            kept = filter_chunks(query, cands, gateway, flags)
            added, capped = _append(ev, kept, budget.max_evidence_chunks)
            if capped:
                flags["evidence_capped"] = True
            ev.external_used = True
            ev.trace.append(
                TraceRecord(i, "external", query.text, query.generation, tuple(added), tuple(sc.chunk_id for sc in kept), None, flags)
            )

        ev.iterations_used = i + 1
        if decision.sufficient:
            reason = "sufficient"
        elif i + 1 >= budget.max_iterations:
            reason = "budget"
        elif not decision.gap_query:
            # re-running an unchanged query would return the same candidates
            reason = "no_gap_query"
        else:
            query = evolve_query(query, decision)
            ev.trace.append(TraceRecord(i, "evolve", query.text, query.generation))
            continue
        ev.trace.append(TraceRecord(i, "stop", query.text, query.generation, flags={"reason": reason}))
        break
    ev.final_query = query
    return ev


def replay_trace(
    sq_id: str,
    trace: Iterable[TraceRecord],
    private_idx: Index,
    public_idx: Index | None,
    budget: Budget,
) -> EvidenceSet:
    """Rebuild an evidence set from its trace by re-running only the searches."""
    ev = EvidenceSet(sq_id)
    for rec in trace:
        ev.trace.append(rec)
        if rec.state not in ("internal", "external"):
            continue
        idx, k = (private_idx, budget.top_k_internal) if rec.state == "internal" else (public_idx, budget.top_k_external)
        if idx is None:
            raise ValueError("trace needs a public index that was not provided")
        by_id = {sc.chunk_id: sc for sc in search(idx, rec.query_text, k)}
        missing = [cid for cid in rec.kept_chunk_ids if cid not in by_id]
        if missing:
            raise ValueError(f"trace record iter={rec.iter} keeps chunks absent from search results: {missing}")
        _append(ev, (by_id[cid] for cid in rec.kept_chunk_ids), budget.max_evidence_chunks)
        ev.iterations_used = max(ev.iterations_used, rec.iter + 1)
        ev.external_used = ev.external_used or rec.state == "external"
    return ev


def aggregate_evidence(sets: list[EvidenceSet], sample_id: str = "") -> EvidenceBundle:
    """Union across sub-queries: first-appearance order, maximum score per chunk."""
    merged: list[ScoredChunk] = []
    pos: dict[str, int] = {}
    for s in sets:
        for sc in s.items:
            if sc.chunk_id not in pos:
                pos[sc.chunk_id] = len(merged)
                merged.append(sc)
            elif sc.score > merged[pos[sc.chunk_id]].score:
                merged[pos[sc.chunk_id]] = sc
    return EvidenceBundle(sample_id, list(sets), merged)


def run_plan(
    plan: SubQueryPlan,
    private_idx: Index,
    public_idx: Index | None,
    budget: Budget,
    gateway: Gateway,
    workers: int = 1,
    allow_external: bool = True,
) -> EvidenceBundle:
    """Run every sub-query (concurrently when ``workers > 1``) and aggregate by index."""

    def one(sq: SubQuery) -> EvidenceSet:
        return run_retrieval(sq, private_idx, public_idx, budget, gateway, allow_external)

    subs = sorted(plan.sub_queries, key=lambda s: s.index)
    if workers > 1 and len(subs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(one, subs))
    else:
        sets = [one(sq) for sq in subs]
    return aggregate_evidence(sets, plan.query.sample_id)


def write_trace(run_dir: str | Path, evidence: EvidenceSet) -> Path:
    path = Path(run_dir) / "traces" / f"{evidence.sq_id}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in evidence.trace:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
    return path


def read_trace(path: str | Path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TraceRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
