"""End-to-end run lifecycle: profiles, plans, retrieval, reports, manifest."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .config import RunConfig, config_from_snapshot
from .corpus import CorpusHandle, TaskSample, load_dataset, load_public_corpus
from .demo import demo_script
from .errors import IncompleteRun, PDRError
from .evaluation import EvalSummary, evaluate_run, write_summary
from .index import HashingEmbedder, Index, index_build, search
from .llm import CallLedger, Gateway, HttpBackend
from .mock import MockBackend, load_script
from .profile import UserProfile, extract_profile, write_profile
from .questions import ResearchQuery, SubQuery, SubQueryPlan, develop_subqueries, write_plan
from .report import generate_report, write_report
from .retrieval import EvidenceSet, aggregate_evidence, run_plan, write_trace

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RUN_INFO = "run_info.json"
PROFILE_MODES = ("pdr", "profile_prompting")


@dataclass
class RunManifest:
    config: dict[str, Any]
    samples: dict[str, dict[str, Any]]
    profiles: dict[str, dict[str, Any]]
    ledger: dict[str, dict[str, int]]
    searches: dict[str, int]
    artifacts: dict[str, list[str]] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def failed(self) -> list[str]:
        return [sid for sid, s in self.samples.items() if s["status"] != "ok"]

    def to_dict(self) -> dict[str, Any]:
        # wall-clock lives in run_info.json so the manifest stays byte-stable
        return {
            "config": self.config,
            "samples": self.samples,
            "profiles": self.profiles,
            "ledger": self.ledger,
            "searches": self.searches,
            "artifacts": self.artifacts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def build_gateway(config: RunConfig, ledger: CallLedger | None = None) -> Gateway:
    if config.backend_kind == "http":
        backend = HttpBackend.from_env(
            config.backend_url, config.backend_model, config.backend_api_key_env or None, timeout_s=config.backend_timeout_s
        )
    else:
        script = load_script(config.backend_script) if config.backend_script else demo_script()
        backend = MockBackend(script, seed=config.seed)
    return Gateway(backend, ledger)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _rel(run_dir: Path, path: Path) -> str:
    return path.relative_to(run_dir).as_posix()


class _Run:
    """State shared by the samples of one run; read-only once set up."""

    def __init__(self, config: RunConfig, gateway: Gateway):
        self.config = config
        self.run_dir = Path(config.run_dir)
        self.gateway = gateway
        self.budget = config.budget
        self.samples, self.private = load_dataset(
            config.dataset_path, config.task, config.chunk_target_chars, config.chunk_overlap_chars
        )
        self.embedder = HashingEmbedder(config.embedding_dim)
        self.public: CorpusHandle | None = None
        self.public_idx: Index | None = None
        if config.public_corpus_path is not None and config.mode != "iterative_rag" and config.mode != "zero_shot":
            self.public = load_public_corpus(config.public_corpus_path, config.chunk_target_chars, config.chunk_overlap_chars)
            self.public_idx = index_build(self.public, self.embedder)
        self.users = list(dict.fromkeys(s.user_id for s in self.samples))
        self.private_idx: dict[str, Index] = {}
        if config.mode in ("pdr", "iterative_rag"):
            for user in self.users:
                self.private_idx[user] = index_build(self.private.for_user(user), self.embedder)
        self.profiles: dict[str, UserProfile] = {}
        self.profile_errors: dict[str, str] = {}

    def extract_profiles(self, ledger: CallLedger) -> dict[str, dict[str, Any]]:
        gw = self.gateway.with_ledger(ledger)
        out: dict[str, dict[str, Any]] = {}
        for user in self.users:
            try:
                prof = extract_profile(
                    self.private, user, gw, self.config.profile_max_docs, self.config.profile_max_chars
                )
            except PDRError as exc:
                log.error("profile extraction for %s failed: %s", user, exc)
                self.profile_errors[user] = f"{type(exc).__name__}: {exc}"
                out[user] = {"status": "failed", "error": self.profile_errors[user]}
                continue
            self.profiles[user] = prof
            path = write_profile(self.run_dir, prof)
            out[user] = {"status": "ok", "path": _rel(self.run_dir, path)}
        return out

    def process(self, sample: TaskSample, ledger: CallLedger) -> dict[str, Any]:
        mode = self.config.mode
        gw = self.gateway.with_ledger(ledger)
        if mode in PROFILE_MODES and sample.user_id in self.profile_errors:
            raise PDRError(f"no profile for user {sample.user_id}: {self.profile_errors[sample.user_id]}")
        profile = self.profiles.get(sample.user_id)
        query = ResearchQuery(sample.query, sample.task, sample.sample_id)
        single = SubQueryPlan(query, (SubQuery(f"{sample.sample_id}#0", 0, sample.query, "original query"),), 1)
        artifacts: dict[str, Any] = {}

        if mode == "pdr":
            plan = develop_subqueries(query, profile, gw, self.config.k_max)
            artifacts["plan"] = _rel(self.run_dir, write_plan(self.run_dir, plan))
            bundle = run_plan(
                plan, self.private_idx[sample.user_id], self.public_idx, self.budget, gw, self.config.workers
            )
            report = generate_report(bundle, profile, plan, gw)
        elif mode == "iterative_rag":
            plan = single
            bundle = run_plan(plan, self.private_idx[sample.user_id], None, self.budget, gw, 1, allow_external=False)
            report = generate_report(bundle, None, plan, gw)
        elif mode == "zero_shot":
            plan = single
            bundle = aggregate_evidence([], sample.sample_id)
            report = generate_report(bundle, None, plan, gw, include_plan=False, use_evidence=False)
        else:  # plus_search, profile_prompting
            plan = single
            hits = search(self.public_idx, sample.query, self.budget.top_k_external)
            ev = EvidenceSet(plan.sub_queries[0].sq_id, hits, 1, True)
            bundle = aggregate_evidence([ev], sample.sample_id)
            if mode == "plus_search":
                report = generate_report(bundle, None, plan, gw, include_plan=False)
            else:
                report = generate_report(bundle, profile, plan, gw, system_profile=True, include_plan=False)

        traces = [_rel(self.run_dir, write_trace(self.run_dir, s)) for s in bundle.per_subquery if s.trace]
        if traces:
            artifacts["traces"] = traces
        ev_path = self.run_dir / "evidence" / f"{sample.sample_id}.json"
        ev_path.parent.mkdir(parents=True, exist_ok=True)
        ev_path.write_text(bundle.to_json(), encoding="utf-8")
        artifacts["evidence"] = _rel(self.run_dir, ev_path)
        artifacts["report"] = _rel(self.run_dir, write_report(self.run_dir, report, ledger.snapshot()))
        return {
            "status": "ok",
            "task": sample.task,
            "user_id": sample.user_id,
            "citations": len(report.citations),
            "evidence_chunks": len(bundle.merged),
            "warnings": report.warnings,
            "ledger": ledger.snapshot(),
            "artifacts": artifacts,
        }


def run_pipeline(config: RunConfig, gateway: Gateway | None = None) -> RunManifest:
    """Execute every sample of the dataset under ``config.mode``.

    Sample failures are recorded and the run continues. The manifest is
    written last, atomically; a run directory without one is incomplete.
    """
    t0 = time.monotonic()
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / MANIFEST).unlink(missing_ok=True)
    gateway = gateway or build_gateway(config)
    ledger = gateway.ledger.child()
    gateway = gateway.with_ledger(ledger)
    run = _Run(config, gateway)

    profiles: dict[str, dict[str, Any]] = {}
    if config.mode in PROFILE_MODES:
        profiles = run.extract_profiles(ledger.child())

    def one(sample: TaskSample) -> tuple[str, dict[str, Any]]:
        sample_ledger = ledger.child()
        try:
            return sample.sample_id, run.process(sample, sample_ledger)
        except PDRError as exc:
            log.error("sample %s failed: %s", sample.sample_id, exc)
            return sample.sample_id, {
                "status": "failed",
                "task": sample.task,
                "user_id": sample.user_id,
                "error": f"{type(exc).__name__}: {exc}",
                "ledger": sample_ledger.snapshot(),
            }

    if config.workers > 1 and len(run.samples) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, run.samples))
    else:
        results = [one(s) for s in run.samples]

    searches = {
        "private": sum(idx.search_count for idx in run.private_idx.values()),
        "public": run.public_idx.search_count if run.public_idx is not None else 0,
    }
    samples = dict(results)
    artifacts = {
        "reports": [s["artifacts"]["report"] for s in samples.values() if s["status"] == "ok"],
        "profiles": [p["path"] for p in profiles.values() if p["status"] == "ok"],
    }
    manifest = RunManifest(config.snapshot(), samples, profiles, ledger.snapshot(), searches, artifacts)
    manifest.wall_clock_s = time.monotonic() - t0
    info = {"run_dir": str(run_dir.resolve()), "workers": config.workers, "wall_clock_s": round(manifest.wall_clock_s, 3)}
    (run_dir / RUN_INFO).write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    _atomic_write(run_dir / MANIFEST, manifest.to_json())
    return manifest


def read_manifest(run_dir: str | Path) -> dict[str, Any]:
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise IncompleteRun(f"{run_dir} has no {MANIFEST}; the run did not finish")
    return json.loads(path.read_text(encoding="utf-8"))


def run_eval(
    config: RunConfig | None,
    run_dir: str | Path,
    gateway: Gateway | None = None,
) -> EvalSummary:
    """Score a finished run directory and write ``eval/summary.{json,csv}``.

    Without ``config`` the settings recorded in the manifest are used.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    if config is None:
        config = config_from_snapshot(manifest["config"], run_dir)
    samples, _ = load_dataset(config.dataset_path, config.task, config.chunk_target_chars, config.chunk_overlap_chars)
    reports: dict[str, str] = {}
    for s in samples:
        path = run_dir / "reports" / f"{s.sample_id}.md"
        if path.is_file():
            reports[s.sample_id] = path.read_text(encoding="utf-8")
    profiles = {}
    for path in sorted((run_dir / "profiles").glob("*.json")):
        prof = UserProfile.from_json(path.read_text(encoding="utf-8"))
        profiles[prof.user_id] = prof
    gateway = gateway or build_gateway(config)
    summary = evaluate_run(reports, samples, profiles, gateway, config.workers)
    write_summary(run_dir, summary)
    return summary
