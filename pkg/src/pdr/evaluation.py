"""Report scoring: lexical overlap plus LLM-as-judge quality and personalization."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Any, Mapping

from .corpus import TaskSample
from .errors import MalformedOutput, PDRError, ScoreOutOfRange
from .llm import ChatRequest, Gateway
from .metrics import lexical_scores
from .profile import UserProfile

log = logging.getLogger(__name__)

DIMENSIONS = ("comprehensiveness", "readability", "contextual_personalization", "presentation_personalization")
# summary column order, matching the usual results-table layout
COLUMNS = ("r1", "rl", "meteor", "comp", "read", "cp", "pp")
COLUMN_LABELS = {"r1": "R-1", "rl": "R-L", "meteor": "Met.", "comp": "Comp.", "read": "Read.", "cp": "C.P.", "pp": "P.P."}
_DIM_COLUMN = dict(zip(DIMENSIONS, ("comp", "read", "cp", "pp")))

RUBRICS: dict[str, str] = {
    "comprehensiveness": (
        "Comprehensiveness: are the candidate's factual claims correct and checkable, and does it cover every "
        "important sub-topic, figure and piece of context found in the reference? Missing material lowers the score."
    ),
    "readability": (
        "Readability: can the intended audience follow the candidate easily? Judge vocabulary and sentence "
        "complexity relative to that audience, the flow between parts, and whether headings and structure "
        "make information quick to find."
    ),
    "contextual_personalization": (
        "Contextual personalization: do the chosen topics, examples and their ordering serve this particular "
        "user's interests and goals, as shown by the reference the user wrote? Content that serves no user "
        "need lowers the score."
    ),
    "presentation_personalization": (
        "Presentation personalization: do tone, style, formatting and layout match how this user presents "
        "their own work? Top marks only if the candidate could be used as-is with no further editing."
    ),
}

JUDGE_SYSTEM = """You are a strict evaluator. The REFERENCE was written by the user and is the gold standard. \
Score only the CANDIDATE against it on one dimension, from 1 (worst) to 10 (matches the reference perfectly).
{rubric}
Return one JSON object: {{"score": number from 1 to 10, "justification": "one or two sentences"}}"""


@dataclass(frozen=True)
class JudgeScore:
    dimension: str
    score: float
    raw_response: str = ""


def _score_check(obj: dict[str, Any]) -> None:
    if not 1 <= obj["score"] <= 10:
        raise ScoreOutOfRange(f"score {obj['score']} outside [1, 10]")


def render_judge_prompt(candidate: str, reference: str, profile: UserProfile | None = None) -> str:
    parts = []
    if profile is not None and not profile.is_empty():
        parts.append("USER PROFILE:\n" + json.dumps(profile.to_dict(), ensure_ascii=False))
    parts.append("REFERENCE:\n" + reference)
    parts.append("CANDIDATE:\n" + candidate)
    return "\n\n".join(parts)


def judge_pairwise(
    candidate: str,
    reference: str,
    dimension: str,
    gateway: Gateway,
    rubric: str | None = None,
    profile: UserProfile | None = None,
    scope: str = "",
) -> JudgeScore:
    if dimension not in DIMENSIONS:
        raise ValueError(f"unknown dimension {dimension!r}")
    if not candidate.strip() or not reference.strip():
        raise ValueError("candidate and reference must be non-empty")
    request = ChatRequest(
        JUDGE_SYSTEM.format(rubric=rubric or RUBRICS[dimension]),
        render_judge_prompt(candidate, reference, profile),
        tag="judge",
        temperature=0.0,
        max_output_chars=2000,
        scope=scope or dimension,
    )
    obj = gateway.complete_structured(
        request, [("score", "number"), ("justification", "str?")], check=_score_check
    )
    return JudgeScore(dimension, float(obj["score"]), json.dumps(obj, ensure_ascii=False, sort_keys=True))


@dataclass
class EvalSummary:
    per_sample: dict[str, dict[str, float]]
    tasks: dict[str, str]
    aggregate: dict[str, dict[str, float]]
    failures: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "columns": list(COLUMNS),
            "per_sample": self.per_sample,
            "tasks": self.tasks,
            "aggregate": self.aggregate,
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalSummary":
        return cls(d["per_sample"], d["tasks"], d["aggregate"], d.get("failures", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("task", "sample_id") + COLUMNS + ("failed",))
        for sid in sorted(self.tasks, key=lambda s: (self.tasks[s], s)):
            row = self.per_sample.get(sid)
            values = [f"{row[c]:.6f}" for c in COLUMNS] if row else [""] * len(COLUMNS)
            w.writerow([self.tasks[sid], sid, *values, "1" if sid in self.failures else "0"])
        return buf.getvalue()


def aggregate(per_sample: Mapping[str, Mapping[str, float]], tasks: Mapping[str, str]) -> dict[str, dict[str, float]]:
    """Arithmetic mean of each column per task, plus an ``all`` row."""
    groups: dict[str, list[str]] = {}
    for sid in per_sample:
        groups.setdefault(tasks[sid], []).append(sid)
    out = {t: {c: fmean(per_sample[s][c] for s in sids) for c in COLUMNS} for t, sids in sorted(groups.items())}
    if per_sample:
        out["all"] = {c: fmean(row[c] for row in per_sample.values()) for c in COLUMNS}
    return out


def score_sample(
    text: str,
    sample: TaskSample,
    gateway: Gateway,
    profile: UserProfile | None = None,
) -> dict[str, float]:
    row = lexical_scores(text, sample.reference_text)
    scores = {"r1": row["rouge1"], "rl": row["rougeL"], "meteor": row["meteor"]}
    for dim in DIMENSIONS:
        scope = f"{sample.sample_id}/{dim}"
        scores[_DIM_COLUMN[dim]] = judge_pairwise(text, sample.reference_text, dim, gateway, profile=profile, scope=scope).score
    return scores


def evaluate_run(
    reports: Mapping[str, str],
    samples: list[TaskSample],
    profiles: Mapping[str, UserProfile] | None,
    gateway: Gateway,
    workers: int = 1,
) -> EvalSummary:
    """Score each sample's report text against its reference.

    ``reports`` maps sample_id to report text. A missing report or a judge
    error marks the sample failed; failed samples are left out of the means.
    """
    profiles = profiles or {}
    tasks = {s.sample_id: s.task for s in samples}

    def one(sample: TaskSample) -> tuple[str, dict[str, float] | None, str | None]:
        text = reports.get(sample.sample_id)
        if text is None or not text.strip():
            return sample.sample_id, None, "missing report"
        try:
            return sample.sample_id, score_sample(text, sample, gateway, profiles.get(sample.user_id)), None
        except (PDRError, MalformedOutput) as exc:
            log.warning("evaluation of %s failed: %s", sample.sample_id, exc)
            return sample.sample_id, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, samples))
    else:
        results = [one(s) for s in samples]
    per_sample = {sid: row for sid, row, _ in results if row is not None}
    failures = {sid: err for sid, _, err in results if err is not None}
    return EvalSummary(per_sample, tasks, aggregate(per_sample, tasks), failures)


def write_summary(run_dir: str | Path, summary: EvalSummary) -> tuple[Path, Path]:
    out = Path(run_dir) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    js = out / "summary.json"
    js.write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    cs = out / "summary.csv"
    cs.write_text(summary.to_csv(), encoding="utf-8")
    return js, cs


def read_summary(run_dir: str | Path) -> EvalSummary:
    return EvalSummary.from_dict(json.loads((Path(run_dir) / "eval" / "summary.json").read_text(encoding="utf-8")))


def format_table(summary: EvalSummary, delimiter: str = " | ") -> str:
    """Aggregate means, one row per task, in R-1 .. P.P. column order."""
    header = delimiter.join(["Task", *(COLUMN_LABELS[c] for c in COLUMNS)])
    lines = [header]
    for task, row in summary.aggregate.items():
        cells = [task] + [f"{row[c]:.4f}" if c in ("r1", "rl", "meteor") else f"{row[c]:.2f}" for c in COLUMNS]
        lines.append(delimiter.join(cells))
    return "\n".join(lines)
