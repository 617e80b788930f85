"""Document parsing, chunking and dataset loading.

Private documents are the user's own artifacts (drafts, notes, earlier
writing); public documents come from a static reference corpus such as a
Wikipedia passage dump. Both are normalized into :class:`SourceDocument`
and split into :class:`Chunk` objects, the unit of retrieval and citation.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import DanglingRef, DecodeError, EmptyDocument, SchemaError
from .text import normalize_whitespace

log = logging.getLogger(__name__)

ORIGINS = ("private", "public")
FORMATS = ("plain_text", "markdown", "csv", "pdf_text")
TASKS = ("abstract_gen", "topic_writing", "report_gen", "speech_script")

DEFAULT_TARGET_CHARS = 1200
DEFAULT_OVERLAP_CHARS = 200
BOUNDARY_FRACTION = 0.2
SENTENCE_ENDS = frozenset(".!?\n")


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    origin: str
    format: str
    title: str
    body: str
    metadata: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "origin": self.origin,
            "format": self.format,
            "title": self.title,
            "body": self.body,
            "metadata": dict(sorted(self.metadata.items())),
        }


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    text: str
    char_span: tuple[int, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "seq": self.seq,
            "text": self.text,
            "char_span": list(self.char_span),
        }


@dataclass(frozen=True)
class CorpusHandle:
    corpus_id: str
    kind: str
    documents: tuple[SourceDocument, ...]
    chunks: tuple[Chunk, ...]

    def __post_init__(self) -> None:
        ids = [d.doc_id for d in self.documents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate doc_id in corpus {self.corpus_id!r}")
        known = set(ids)
        for c in self.chunks:
            if c.doc_id not in known:
                raise DanglingRef(f"chunk {c.chunk_id} references unknown document {c.doc_id}")

    def document(self, doc_id: str) -> SourceDocument:
        for d in self.documents:
            if d.doc_id == doc_id:
                return d
        raise DanglingRef(doc_id)

    def for_user(self, user_id: str) -> "CorpusHandle":
        """Sub-corpus of documents tagged with ``metadata['user_id']``."""
        docs = tuple(d for d in self.documents if d.metadata.get("user_id") == user_id)
        keep = {d.doc_id for d in docs}
        chunks = tuple(c for c in self.chunks if c.doc_id in keep)
        return CorpusHandle(f"{self.corpus_id}/{user_id}", self.kind, docs, chunks)


@dataclass(frozen=True)
class TaskSample:
    sample_id: str
    task: str
    user_id: str
    query: str
    personal_file_refs: tuple[str, ...]
    reference_text: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "task": self.task,
            "user_id": self.user_id,
            "query": self.query,
            "personal_file_refs": list(self.personal_file_refs),
            "reference_text": self.reference_text,
        }


def parse_document(
    raw: bytes | str,
    format: str,
    doc_id: str,
    origin: str,
    title: str = "",
    metadata: dict[str, str] | None = None,
) -> SourceDocument:
    """Decode and normalize one text-bearing artifact.

    ``pdf_text`` expects text already extracted from the PDF. CSV bodies keep
    their delimiter structure; row and column counts land in the metadata.
    """
    if format not in FORMATS:
        raise ValueError(f"unsupported format {format!r}")
    if origin not in ORIGINS:
        raise ValueError(f"unknown origin {origin!r}")
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"{doc_id}: invalid UTF-8 at byte {exc.start}") from exc
    else:
        text = raw
    text = text.lstrip("﻿")

    meta = dict(metadata or {})
    if format == "csv":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        meta["rows"] = str(len(rows))
        meta["cols"] = str(max((len(r) for r in rows), default=0))
    body = normalize_whitespace(text)
    if not body:
        raise EmptyDocument(f"{doc_id}: empty body after normalization")
    if format == "markdown" and not title:
        for line in body.splitlines():
            if line.startswith("#"):
                title = line.lstrip("#").strip()
                break
    return SourceDocument(doc_id, origin, format, title, body, meta)


def _split_point(body: str, start: int, end: int, target: int, overlap: int) -> int:
    lookback = max(2, math.ceil(target * BOUNDARY_FRACTION))
    lo = max(start + 1, end - lookback)
    for cut in range(end, lo - 1, -1):
        if body[cut - 1] in SENTENCE_ENDS:
            # a boundary cut must still let the next window start past this one
            if cut - overlap > start:
                return cut
            break
    return end


def chunk_document(
    doc: SourceDocument,
    target_chars: int = DEFAULT_TARGET_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> list[Chunk]:
    """Split ``doc.body`` into overlapping windows of at most ``target_chars``.

    A window ends at the last sentence terminator (``.``, ``!``, ``?`` or a
    newline) found in its final fifth (never less than two characters) and
    is hard-cut at ``target_chars`` otherwise. Each window after the first
    starts exactly ``overlap_chars`` before the previous one ended.
    """
    if target_chars <= 0:
        raise ValueError("target_chars must be positive")
    if not 0 <= overlap_chars < target_chars:
        raise ValueError("overlap_chars must be in [0, target_chars)")
    body = doc.body
    n = len(body)
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + target_chars, n)
        if end < n:
            end = _split_point(body, start, end, target_chars, overlap_chars)
        seq = len(chunks)
        chunks.append(Chunk(f"{doc.doc_id}::{seq:04d}", doc.doc_id, seq, body[start:end], (start, end)))
        if end >= n:
            return chunks
        start = end - overlap_chars


def reassemble(chunks: Iterable[Chunk]) -> str:
    """Concatenate chunk texts, dropping each overlapping prefix."""
    out: list[str] = []
    prev_end = 0
    for c in chunks:
        start, end = c.char_span
        out.append(c.text[max(0, prev_end - start):])
        prev_end = end
    return "".join(out)


def build_corpus(
    corpus_id: str,
    kind: str,
    documents: Iterable[SourceDocument],
    target_chars: int = DEFAULT_TARGET_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> CorpusHandle:
    docs = tuple(documents)
    chunks = tuple(c for d in docs for c in chunk_document(d, target_chars, overlap_chars))
    return CorpusHandle(corpus_id, kind, docs, chunks)


def _require(obj: dict, key: str, kind: type, line: int) -> Any:
    if key not in obj:
        raise SchemaError(f"missing field {key!r}", line)
    value = obj[key]
    if not isinstance(value, kind):
        raise SchemaError(f"field {key!r} must be {kind.__name__}", line)
    return value


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(obj, dict):
                raise SchemaError("expected a JSON object", lineno)
            yield lineno, obj


def load_dataset(
    path: str | Path,
    task: str | None = None,
    target_chars: int = DEFAULT_TARGET_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> tuple[list[TaskSample], CorpusHandle]:
    """Read a dataset JSONL file into samples plus the private corpus.

    Samples keep file order. ``task`` restricts the result to one task type;
    ``None`` keeps all. A ``personal_files`` entry may carry a ``text`` body or
    only a ``doc_id`` that refers to a file defined on an earlier line.
    """
    if task is not None and task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    path = Path(path)
    samples: list[TaskSample] = []
    docs: dict[str, SourceDocument] = {}
    pending: list[tuple[int, str]] = []
    for lineno, obj in _read_jsonl(path):
        sample_id = _require(obj, "sample_id", str, lineno)
        sample_task = _require(obj, "task", str, lineno)
        if sample_task not in TASKS:
            raise SchemaError(f"unknown task {sample_task!r}", lineno)
        user_id = _require(obj, "user_id", str, lineno)
        query = _require(obj, "query", str, lineno)
        files = _require(obj, "personal_files", list, lineno)
        reference = _require(obj, "reference_text", str, lineno)
        if not reference.strip():
            raise SchemaError("reference_text is empty", lineno)
        if not query.strip():
            raise SchemaError("query is empty", lineno)
        refs: list[str] = []
        for f in files:
            if not isinstance(f, dict):
                raise SchemaError("personal_files entries must be objects", lineno)
            doc_id = _require(f, "doc_id", str, lineno)
            refs.append(doc_id)
            if "text" not in f:
                pending.append((lineno, doc_id))
                continue
            text = _require(f, "text", str, lineno)
            fmt = f.get("format", "plain_text")
            if fmt not in FORMATS:
                raise SchemaError(f"unknown format {fmt!r}", lineno)
            doc = parse_document(text, fmt, doc_id, "private", str(f.get("title", "")), {"user_id": user_id})
            seen = docs.get(doc_id)
            if seen is not None and seen != doc:
                raise SchemaError(f"document {doc_id!r} redefined with different content", lineno)
            docs[doc_id] = doc
        if sample_task == "abstract_gen" and len(reference) < 2000:
            log.warning("sample %s: abstract reference shorter than 2000 characters", sample_id)
        if task is None or sample_task == task:
            samples.append(TaskSample(sample_id, sample_task, user_id, query, tuple(refs), reference))
    for lineno, doc_id in pending:
        if doc_id not in docs:
            raise DanglingRef(f"line {lineno}: personal file {doc_id!r} is not defined")
    if len({s.sample_id for s in samples}) != len(samples):
        raise SchemaError("duplicate sample_id")
    corpus = build_corpus(path.stem, "private", docs.values(), target_chars, overlap_chars)
    return samples, corpus


def load_public_corpus(
    path: str | Path,
    target_chars: int = DEFAULT_TARGET_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> CorpusHandle:
    """Read ``{"doc_id", "title", "text"}`` lines into a public corpus."""
    path = Path(path)
    docs: list[SourceDocument] = []
    for lineno, obj in _read_jsonl(path):
        doc_id = _require(obj, "doc_id", str, lineno)
        text = _require(obj, "text", str, lineno)
        title = obj.get("title", "")
        if not isinstance(title, str):
            raise SchemaError("field 'title' must be str", lineno)
        docs.append(parse_document(text, "plain_text", doc_id, "public", title))
    return build_corpus(path.stem, "public", docs, target_chars, overlap_chars)
