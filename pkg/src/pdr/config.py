"""Flat ``key = value`` run configuration with environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .corpus import DEFAULT_OVERLAP_CHARS, DEFAULT_TARGET_CHARS, TASKS
from .errors import ConfigError
from .index import DEFAULT_DIM
from .profile import MAX_DOC_CHARS, MAX_DOCS
from .questions import DEFAULT_K_MAX
from .retrieval import Budget

MODES = ("pdr", "zero_shot", "plus_search", "profile_prompting", "iterative_rag")
ENV_PREFIX = "PDR_"

# config key -> (attribute, type)
KEYS: dict[str, tuple[str, type]] = {
    "dataset_path": ("dataset_path", Path),
    "public_corpus_path": ("public_corpus_path", Path),
    "mode": ("mode", str),
    "task": ("task", str),
    "run_dir": ("run_dir", Path),
    "seed": ("seed", int),
    "workers": ("workers", int),
    "k_max": ("k_max", int),
    "budget.max_iterations": ("max_iterations", int),
    "budget.top_k_internal": ("top_k_internal", int),
    "budget.top_k_external": ("top_k_external", int),
    "budget.max_evidence_chunks": ("max_evidence_chunks", int),
    "backend.kind": ("backend_kind", str),
    "backend.url": ("backend_url", str),
    "backend.model": ("backend_model", str),
    "backend.api_key_env": ("backend_api_key_env", str),
    "backend.timeout_s": ("backend_timeout_s", float),
    "backend.script": ("backend_script", Path),
    "embedding.kind": ("embedding_kind", str),
    "embedding.dim": ("embedding_dim", int),
    "chunk.target_chars": ("chunk_target_chars", int),
    "chunk.overlap_chars": ("chunk_overlap_chars", int),
    "profile.max_docs": ("profile_max_docs", int),
    "profile.max_chars": ("profile_max_chars", int),
}
# execution details that must not influence any artifact
RUNTIME_KEYS = ("run_dir", "workers")


@dataclass
class RunConfig:
    dataset_path: Path
    run_dir: Path
    public_corpus_path: Path | None = None
    mode: str = "pdr"
    task: str | None = None
    seed: int = 0
    workers: int = 1
    k_max: int = DEFAULT_K_MAX
    max_iterations: int = 3
    top_k_internal: int = 5
    top_k_external: int = 5
    max_evidence_chunks: int = 24
    backend_kind: str = "mock"
    backend_url: str = ""
    backend_model: str = ""
    backend_api_key_env: str = ""
    backend_timeout_s: float = 120.0
    backend_script: Path | None = None
    embedding_kind: str = "hash"
    embedding_dim: int = DEFAULT_DIM
    chunk_target_chars: int = DEFAULT_TARGET_CHARS
    chunk_overlap_chars: int = DEFAULT_OVERLAP_CHARS
    profile_max_docs: int = MAX_DOCS
    profile_max_chars: int = MAX_DOC_CHARS
    extra: dict[str, str] = field(default_factory=dict, repr=False)

    @property
    def budget(self) -> Budget:
        return Budget(self.max_iterations, self.top_k_internal, self.top_k_external, self.max_evidence_chunks)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.task is not None and self.task not in TASKS:
            raise ConfigError(f"task must be one of {', '.join(TASKS)}")
        if self.backend_kind not in ("mock", "http"):
            raise ConfigError("backend.kind must be 'mock' or 'http'")
        if self.backend_kind == "http" and not (self.backend_url and self.backend_model):
            raise ConfigError("backend.kind=http needs backend.url and backend.model")
        if self.embedding_kind != "hash":
            raise ConfigError("embedding.kind must be 'hash'")
        if self.workers < 1 or self.k_max < 1 or self.embedding_dim < 1:
            raise ConfigError("workers, k_max and embedding.dim must be positive")
        if not 0 <= self.chunk_overlap_chars < self.chunk_target_chars:
            raise ConfigError("chunk.overlap_chars must be in [0, chunk.target_chars)")
        try:
            self.budget
        except ValueError as exc:
            raise ConfigError(f"budget: {exc}") from exc
        if not self.dataset_path.is_file():
            raise ConfigError(f"dataset_path {self.dataset_path} does not exist")
        if self.mode in ("plus_search", "profile_prompting") and self.public_corpus_path is None:
            raise ConfigError(f"mode {self.mode} needs public_corpus_path")
        if self.public_corpus_path is not None and not self.public_corpus_path.is_file():
            raise ConfigError(f"public_corpus_path {self.public_corpus_path} does not exist")
        if self.backend_script is not None and not self.backend_script.is_file():
            raise ConfigError(f"backend.script {self.backend_script} does not exist")

    def snapshot(self) -> dict[str, Any]:
        """Replay-relevant settings keyed by config name (run_dir and workers excluded)."""
        out: dict[str, Any] = {}
        for key, (attr, _) in KEYS.items():
            if attr in RUNTIME_KEYS:
                continue
            value = getattr(self, attr)
            out[key] = str(value) if isinstance(value, Path) else value
        return out


def _convert(key: str, raw: str, kind: type, base: Path) -> Any:
    raw = raw.strip()
    if kind is Path:
        p = Path(os.path.expanduser(raw))
        return p if p.is_absolute() else (base / p).resolve()
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config_text(text: str, base: Path, env: Mapping[str, str] | None = None) -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = raw
    env = os.environ if env is None else env
    for key in KEYS:
        name = ENV_PREFIX + key.upper().replace(".", "_")
        if name in env:
            values[key] = env[name]
    for required in ("dataset_path", "run_dir"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    kwargs = {KEYS[k][0]: _convert(k, v, KEYS[k][1], base) for k, v in values.items() if v.strip() != ""}
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, path.resolve().parent, env)


def config_from_snapshot(snapshot: Mapping[str, Any], run_dir: Path, workers: int = 1) -> RunConfig:
    """Rebuild a config from a manifest snapshot (paths there are absolute)."""
    kwargs: dict[str, Any] = {"run_dir": Path(run_dir), "workers": workers}
    for key, value in snapshot.items():
        if key not in KEYS or value is None:
            continue
        attr, kind = KEYS[key]
        kwargs[attr] = Path(value) if kind is Path else value
    names = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in kwargs.items() if k in names})
