"""Built-in mock script: plausible, deterministic answers for every stage.

The handlers read the rendered prompts, so offline runs produce reports that
actually cite retrieved passages and judges whose scores track overlap with
the reference. Used when ``backend.kind = mock`` and no script file is given.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter

from .llm import ChatRequest
from .metrics import rouge_n
from .text import tokenize

STOPWORDS = frozenset(
    "about after again also among because been before being between could does doing during every from have "
    "having into more most other over same should some such than that their them then there these they this "
    "those through under until very were what when where which while will with would your".split()
)

_DOC = re.compile(r"=== DOCUMENT (\S+)[^\n]*===\n(.*?)(?=\n\n=== )", re.DOTALL)
_CANDIDATE = re.compile(r"^\[(\d+)\] \S+ \(\w+\)\n(.*?)(?=\n\n\[\d+\] |\Z)", re.DOTALL | re.MULTILINE)
_EVIDENCE = re.compile(r"^\(\d+\) \[(\S+)\] \([^)]*\)\n(.*?)(?=\n\n\(\d+\) \[|\Z)", re.DOTALL | re.MULTILINE)


def _section(prompt: str, name: str) -> str:
    m = re.search(rf"^{name}:\n(.*?)(?=\n\n[A-Z][A-Z ]+:|\Z)", prompt, re.DOTALL | re.MULTILINE)
    return m.group(1).strip() if m else ""


def _line(prompt: str, name: str) -> str:
    m = re.search(rf"^{name}: (.*)$", prompt, re.MULTILINE)
    return m.group(1).strip() if m else ""


def _content_words(text: str) -> list[str]:
    return [t for t in tokenize(text) if len(t) > 3 and t not in STOPWORDS and not t.isdigit()]


def profile(request: ChatRequest, index: int, rng: random.Random) -> str:
    docs = _DOC.findall(request.user_prompt)
    bodies = [b for _, b in docs]
    words = Counter(w for b in bodies for w in _content_words(b))
    interests = [w for w, _ in sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:3]]
    exemplars = []
    for b in bodies[:2]:
        end = b.find(". ")
        exemplars.append(b[: end + 1] if 0 < end < 300 else b[:200])
    lengths = [len(t) for b in bodies for t in tokenize(b)] or [0]
    depth = "expert" if sum(lengths) / len(lengths) > 5.5 else "standard"
    return json.dumps(
        {
            "demographics": {"role": "writer", "documents_seen": str(len(docs))},
            "learning_interests": interests,
            "response_preferences": {
                "tone": "formal" if depth == "expert" else "conversational",
                "structure": "headed sections",
                "depth": depth,
                "formatting": ["markdown headings", "short paragraphs"],
            },
            "interaction_tendencies": ["states goals up front"],
            "style_exemplars": exemplars,
        }
    )


def decompose(request: ChatRequest, index: int, rng: random.Random) -> str:
    query = _section(request.user_prompt, "QUERY") or "research topic"
    subs = [{"text": query, "rationale": "the request as stated"}]
    subs.append({"text": f"{query} background", "rationale": "context the user builds on"})
    m = re.search(r'"learning_interests": \[\s*"([^"]+)"', request.user_prompt)
    if m:
        subs.append({"text": f"{query} {m.group(1)}", "rationale": "ties to a stated interest"})
    return json.dumps({"sub_queries": subs})


def filter_(request: ChatRequest, index: int, rng: random.Random) -> str:
    wanted = set(_content_words(_line(request.user_prompt, "SUB-QUERY")))
    keep = [int(i) for i, text in _CANDIDATE.findall(request.user_prompt) if wanted & set(tokenize(text))]
    return json.dumps({"keep": keep or [0]})


def decide(request: ChatRequest, index: int, rng: random.Random) -> str:
    sq = _line(request.user_prompt, "SUB-QUERY")
    if index == 0:
        return json.dumps({"sufficient": False, "need_external": True, "gap_query": f"{sq} evidence"})
    return json.dumps({"sufficient": True, "need_external": False, "gap_query": None})


def generate(request: ChatRequest, index: int, rng: random.Random) -> str:
    prompt = request.user_prompt
    sections = [s.strip() for s in _line(prompt, "SECTIONS").split("|") if s.strip()] or ["Report"]
    query = _section(prompt, "QUERY")
    evidence = _EVIDENCE.findall(prompt)
    out = []
    for i, name in enumerate(sections):
        out.append(f"## {name}")
        if i == 0:
            out.append(query)
        picked = evidence[i :: len(sections)][:2]
        for cid, text in picked:
            sentence = " ".join(text.split())[:240]
            out.append(f"{sentence} [{cid}]")
    if "EVIDENCE: none" in prompt:
        out.append("Note: insufficient evidence was retrieved for this request.")
    return "\n\n".join(out)


def judge(request: ChatRequest, index: int, rng: random.Random) -> str:
    prompt = request.user_prompt
    ref = prompt.split("REFERENCE:\n", 1)[-1].split("\n\nCANDIDATE:\n", 1)[0]
    cand = prompt.split("\n\nCANDIDATE:\n", 1)[-1]
    overlap = rouge_n(tokenize(cand), tokenize(ref)).f
    score = min(10.0, max(1.0, 1 + 9 * overlap + rng.uniform(-0.25, 0.25)))
    return json.dumps({"score": round(score, 1), "justification": f"unigram overlap {overlap:.2f}"})


def demo_script() -> dict:
    return {
        "profile": profile,
        "decompose": decompose,
        "filter": filter_,
        "decide": decide,
        "generate": generate,
        "judge": judge,
    }
