"""Personalized deep research: profile-aware planning, dual retrieval, report generation and scoring."""

from .corpus import Chunk, CorpusHandle, SourceDocument, TaskSample, chunk_document, load_dataset, parse_document
from .evaluation import EvalSummary, JudgeScore, evaluate_run, judge_pairwise
from .index import HashingEmbedder, Index, ScoredChunk, index_build, search
from .llm import CallLedger, ChatRequest, ChatResponse, Gateway, HttpBackend
from .metrics import MetricScore, lcs_length, meteor, rouge_l, rouge_n, tokenize
from .mock import MockBackend
from .pipeline import RunManifest, run_eval, run_pipeline
from .profile import UserProfile, extract_profile, validate_profile
from .questions import ResearchQuery, SubQuery, SubQueryPlan, develop_subqueries
from .report import Report, ReportSpec, derive_report_spec, generate_report
from .retrieval import (
    Budget,
    Decision,
    EvidenceBundle,
    EvidenceSet,
    aggregate_evidence,
    decide,
    evolve_query,
    filter_chunks,
    run_retrieval,
)

__version__ = "0.1.0"
