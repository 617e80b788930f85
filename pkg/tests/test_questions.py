import json

import pytest

from pdr.errors import MalformedOutput
from pdr.profile import ResponsePreferences, UserProfile, empty_profile
from pdr.questions import ResearchQuery, develop_subqueries, render_decompose_prompt, write_plan

from .conftest import mock_gateway

Q = ResearchQuery("How should I benchmark vector search latency?", "report_gen", "s1")
PROFILE = UserProfile(
    "u1",
    {"role": "engineer"},
    ("retrieval",),
    ResponsePreferences("direct", "bullets", "expert", ()),
)


def reply(*texts):
    return json.dumps({"sub_queries": [{"text": t, "rationale": f"why {t}"} for t in texts]})


def test_three_distinct():
    gw = mock_gateway({"decompose": reply("a", "b", "c")})
    plan = develop_subqueries(Q, PROFILE, gw, k_max=5)
    assert [sq.text for sq in plan.sub_queries] == ["a", "b", "c"]
    assert [sq.sq_id for sq in plan.sub_queries] == ["s1#0", "s1#1", "s1#2"]
    assert all(sq.generation == 0 for sq in plan.sub_queries)
    assert gw.ledger.count("calls", "decompose") == 1
    assert gw.ledger.count("calls") == 1


def test_truncates_to_k_max():
    gw = mock_gateway({"decompose": reply(*"abcdefg")})
    plan = develop_subqueries(Q, PROFILE, gw, k_max=5)
    assert [sq.text for sq in plan.sub_queries] == list("abcde")
    assert [sq.index for sq in plan.sub_queries] == list(range(5))


def test_empty_falls_back_to_query():
    plan = develop_subqueries(Q, PROFILE, mock_gateway({"decompose": '{"sub_queries": []}'}), k_max=5)
    assert len(plan.sub_queries) == 1
    sq = plan.sub_queries[0]
    assert (sq.text, sq.generation, sq.rationale) == (Q.text, 0, "fallback")


def test_case_insensitive_dedup_before_truncation():
    plan = develop_subqueries(Q, PROFILE, mock_gateway({"decompose": reply("Alpha", "alpha", "ALPHA ", "beta")}), k_max=2)
    assert [sq.text for sq in plan.sub_queries] == ["Alpha", "beta"]


def test_plain_string_items_accepted():
    gw = mock_gateway({"decompose": '{"sub_queries": ["one", "two"]}'})
    plan = develop_subqueries(Q, None, gw)
    assert [sq.text for sq in plan.sub_queries] == ["one", "two"]


def test_malformed_after_repair():
    gw = mock_gateway({"decompose": '{"sub_queries": [{"nope": 1}]}'})
    with pytest.raises(MalformedOutput):
        develop_subqueries(Q, PROFILE, gw)
    assert gw.ledger.count("calls", "decompose") == 2


def test_profile_changes_prompt():
    with_profile = render_decompose_prompt(Q, PROFILE)
    assert with_profile != render_decompose_prompt(Q, empty_profile("u1"))
    assert with_profile != render_decompose_prompt(Q, None)
    assert '"role": "engineer"' in with_profile


def test_prompt_sent_matches_render():
    gw = mock_gateway({"decompose": reply("a")})
    develop_subqueries(Q, PROFILE, gw)
    sent = gw.backend.requests("decompose")[0]
    assert sent.user_prompt == render_decompose_prompt(Q, PROFILE)
    assert sent.scope == "s1"
    assert sent.temperature == 0.0


def test_deterministic_and_persisted(tmp_path):
    a = develop_subqueries(Q, PROFILE, mock_gateway({"decompose": reply("a", "b")}))
    b = develop_subqueries(Q, PROFILE, mock_gateway({"decompose": reply("a", "b")}))
    assert a.to_json() == b.to_json()
    path = write_plan(tmp_path, a)
    assert path == tmp_path / "plans" / "s1.json"
    assert json.loads(path.read_text())["sub_queries"][1]["sq_id"] == "s1#1"


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ResearchQuery("  ", "report_gen", "s")
    with pytest.raises(ValueError):
        develop_subqueries(Q, PROFILE, mock_gateway({}), k_max=0)
