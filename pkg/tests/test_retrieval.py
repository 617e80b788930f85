import json
import re
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdr.corpus import Chunk, SourceDocument, build_corpus
from pdr.errors import MissingGapQuery
from pdr.index import ScoredChunk, index_build
from pdr.questions import ResearchQuery, SubQuery, SubQueryPlan
from pdr.retrieval import (
    FAIL_STOP,
    Budget,
    Decision,
    EvidenceSet,
    aggregate_evidence,
    decide,
    evolve_query,
    filter_chunks,
    read_trace,
    replay_trace,
    run_plan,
    run_retrieval,
    write_trace,
)

from .conftest import mock_gateway

PRIVATE_TEXTS = [
    "vector search latency benchmarks",
    "my notes on query latency at p99",
    "team offsite planning",
    "index build times for large corpora",
    "benchmark harness design",
    "coffee preferences",
]
PUBLIC_TEXTS = [f"public article {i} about search systems and latency topic {i % 4}" for i in range(20)]


def make_index(texts, kind, prefix):
    docs = [SourceDocument(f"{prefix}{i:02d}", kind, "plain_text", "", t) for i, t in enumerate(texts)]
    return index_build(build_corpus(prefix, kind, docs, target_chars=10_000, overlap_chars=0))


PRIVATE = make_index(PRIVATE_TEXTS, "private", "p")
PUBLIC = make_index(PUBLIC_TEXTS, "public", "w")
SQ = SubQuery("s1#0", 0, "vector search latency benchmarks")


def keep_all(request, index, rng):
    n = int(re.search(r"CANDIDATES: (\d+)", request.user_prompt).group(1))
    return json.dumps({"keep": list(range(n))})


def decision(sufficient, external=False, gap=None):
    return json.dumps({"sufficient": sufficient, "need_external": external, "gap_query": gap})


STOP = decision(True)


def never_sufficient(request, index, rng):
    return decision(False, False, f"refined query {index + 1}")


def external_once(request, index, rng):
    return decision(False, True, "public latency data") if index == 0 else STOP


def cand(cid, score=0.5, origin="private"):
    doc = cid.split("::")[0]
    return ScoredChunk(Chunk(cid, doc, 0, f"text {cid}", (0, 1)), score, origin)


class TestFilter:
    def test_keeps_selected_in_order(self):
        cs = [cand("a::0000"), cand("b::0000"), cand("c::0000")]
        kept = filter_chunks(SQ, cs, mock_gateway({"filter": '{"keep": [2, 0]}'}))
        assert [c.chunk_id for c in kept] == ["a::0000", "c::0000"]

    def test_out_of_range_ignored(self):
        cs = [cand("a::0000"), cand("b::0000"), cand("c::0000")]
        kept = filter_chunks(SQ, cs, mock_gateway({"filter": '{"keep": [1, 9, -1, true, "0"]}'}))
        assert [c.chunk_id for c in kept] == ["b::0000"]

    def test_fail_open(self):
        cs = [cand("a::0000"), cand("b::0000"), cand("c::0000")]
        flags = {}
        gw = mock_gateway({"filter": "all of them look fine"})
        assert filter_chunks(SQ, cs, gw, flags) == cs
        assert flags == {"filter_fail_open": True}
        assert gw.ledger.count("calls", "filter") == 2

    def test_no_candidates_no_call(self):
        gw = mock_gateway({})
        assert filter_chunks(SQ, [], gw) == []
        assert gw.ledger.count("calls") == 0


class TestDecide:
    def test_stop_immediately(self):
        assert decide(SQ, EvidenceSet("s1#0"), mock_gateway({"decide": STOP})) == Decision(True, False, None)

    def test_external_once_at_first_iteration(self):
        d = decide(SQ, EvidenceSet("s1#0"), mock_gateway({"decide": external_once}))
        assert d == Decision(False, True, "public latency data")

    def test_fail_stop(self):
        flags = {}
        assert decide(SQ, EvidenceSet("s1#0"), mock_gateway({"decide": "hmm"}), flags=flags) == FAIL_STOP
        assert flags == {"decide_fail_stop": True}

    def test_external_pinned_off_when_disallowed(self):
        gw = mock_gateway({"decide": decision(False, True, "x")})
        d = decide(SQ, EvidenceSet("s1#0"), gw, allow_external=False)
        assert not d.need_external
        assert "need_external must be false" in gw.backend.requests("decide")[0].user_prompt

    def test_blank_gap_becomes_none(self):
        d = decide(SQ, EvidenceSet("s1#0"), mock_gateway({"decide": decision(False, False, "   ")}))
        assert d.gap_query is None


class TestEvolve:
    def test_gap_becomes_text(self):
        nxt = evolve_query(SQ, Decision(False, False, "latency benchmarks"))
        assert (nxt.text, nxt.generation, nxt.sq_id) == ("latency benchmarks", 1, SQ.sq_id)

    def test_sufficient_rejected(self):
        with pytest.raises(MissingGapQuery):
            evolve_query(SQ, Decision(True, False, "ignored"))

    def test_missing_gap_rejected(self):
        with pytest.raises(MissingGapQuery):
            evolve_query(SQ, Decision(False, False, None))

    def test_two_evolutions(self):
        sq = evolve_query(evolve_query(SQ, Decision(False, False, "a")), Decision(False, False, "b"))
        assert sq.generation == 2


class TestRunRetrieval:
    def test_stop_immediately(self):
        gw = mock_gateway({"filter": keep_all, "decide": STOP})
        ev = run_retrieval(SQ, PRIVATE, PUBLIC, Budget(), gw)
        assert ev.items[0].chunk.text == SQ.text
        assert ev.items[0].score == pytest.approx(1.0)
        assert ev.iterations_used == 1
        assert not ev.external_used
        assert [r.state for r in ev.trace] == ["internal", "decide", "stop"]
        assert ev.trace[-1].flags == {"reason": "sufficient"}

    def test_never_sufficient_hand_simulation(self):
        # iter 0: search(gen 0) filter decide evolve; iter 1: same at gen 1; iter 2: budget stop at gen 2
        gw = mock_gateway({"filter": keep_all, "decide": never_sufficient})
        ev = run_retrieval(SQ, PRIVATE, PUBLIC, Budget(max_iterations=3), gw)
        assert ev.iterations_used == 3
        assert ev.final_query.generation == 2
        assert ev.final_query.text == "refined query 2"
        assert [r.state for r in ev.trace] == ["internal", "decide", "evolve"] * 2 + ["internal", "decide", "stop"]
        assert [r.query_text for r in ev.trace if r.state == "internal"] == [SQ.text, "refined query 1", "refined query 2"]
        assert ev.trace[-1].flags == {"reason": "budget"}
        assert gw.ledger.count("calls") == 2 * 3
        assert not ev.external_used

    def test_external_once(self):
        gw = mock_gateway({"filter": keep_all, "decide": external_once})
        ev = run_retrieval(SQ, PRIVATE, PUBLIC, Budget(), gw)
        # iteration 0 goes external and evolves; iteration 1 stops
        assert ev.external_used
        assert ev.iterations_used == 2
        assert any(sc.origin == "public" for sc in ev.items)
        assert [r.state for r in ev.trace][:4] == ["internal", "decide", "external", "evolve"]
        assert PUBLIC.search_count >= 1

    def test_no_public_index_never_external(self):
        gw = mock_gateway({"filter": keep_all, "decide": external_once})
        ev = run_retrieval(SQ, PRIVATE, None, Budget(), gw)
        assert not ev.external_used
        assert all(sc.origin == "private" for sc in ev.items)

    def test_no_gap_query_stops(self):
        gw = mock_gateway({"filter": keep_all, "decide": decision(False, False, None)})
        ev = run_retrieval(SQ, PRIVATE, PUBLIC, Budget(), gw)
        assert ev.iterations_used == 1
        assert ev.trace[-1].flags == {"reason": "no_gap_query"}

    def test_evidence_cap_flag(self):
        budget = Budget(max_iterations=3, top_k_internal=2, top_k_external=5, max_evidence_chunks=3)
        gw = mock_gateway({"filter": keep_all, "decide": decision(False, True, "other words")})
        ev = run_retrieval(SQ, PRIVATE, PUBLIC, budget, gw)
        assert len(ev.items) == 3
        assert any(r.flags.get("evidence_capped") for r in ev.trace)

    def test_trace_file_round_trip(self, tmp_path):
        gw = mock_gateway({"filter": keep_all, "decide": external_once})
        ev = run_retrieval(SQ, PRIVATE, PUBLIC, Budget(), gw)
        path = write_trace(tmp_path, ev)
        assert path.name == "s1#0.jsonl"
        first = json.loads(path.read_text().splitlines()[0])
        assert {"iter", "state", "query_text", "generation", "added_chunk_ids", "decision", "flags"} <= set(first)
        assert read_trace(path) == ev.trace


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget(max_iterations=0)
    with pytest.raises(ValueError):
        Budget(top_k_internal=5, max_evidence_chunks=4)


filter_replies = st.one_of(
    st.just("garbage"),
    st.lists(st.integers(-2, 8), max_size=6).map(lambda k: json.dumps({"keep": k})),
)
decide_replies = st.one_of(
    st.just("garbage"),
    st.builds(
        lambda s, e, g: decision(s, e, g),
        st.booleans(),
        st.booleans(),
        st.one_of(st.none(), st.sampled_from(["latency", "benchmarks p99", "index build", "coffee"])),
    ),
)


@settings(max_examples=60, deadline=None)
@given(
    filters=st.lists(filter_replies, min_size=1, max_size=8),
    decides=st.lists(decide_replies, min_size=1, max_size=8),
    max_iter=st.integers(1, 4),
    cap=st.integers(5, 9),
)
def test_termination_ceiling_cap_and_replay(filters, decides, max_iter, cap):
    budget = Budget(max_iterations=max_iter, top_k_internal=5, top_k_external=4, max_evidence_chunks=cap)
    gw = mock_gateway({"filter": filters, "decide": decides})
    ev = run_retrieval(SQ, PRIVATE, PUBLIC, budget, gw)
    assert 1 <= ev.iterations_used <= max_iter
    # per iteration: internal filter, decide, external filter; each with at most one repair
    assert gw.ledger.count("calls") <= 3 * 2 * max_iter
    if not ev.external_used:
        assert gw.ledger.count("calls") <= 2 * 2 * max_iter
    assert len(ev.items) <= cap
    assert len({sc.chunk_id for sc in ev.items}) == len(ev.items)
    replayed = replay_trace(ev.sq_id, ev.trace, PRIVATE, PUBLIC, budget)
    assert [sc.to_dict() for sc in replayed.items] == [sc.to_dict() for sc in ev.items]
    assert (replayed.iterations_used, replayed.external_used) == (ev.iterations_used, ev.external_used)


def test_replay_detects_tampering():
    gw = mock_gateway({"filter": keep_all, "decide": STOP})
    ev = run_retrieval(SQ, PRIVATE, PUBLIC, Budget(), gw)
    bad = [replace(ev.trace[0], kept_chunk_ids=("nope::0000",))]
    with pytest.raises(ValueError):
        replay_trace(ev.sq_id, bad, PRIVATE, PUBLIC, Budget())


class TestAggregate:
    def _set(self, sq_id, *items):
        return EvidenceSet(sq_id, list(items))

    def test_disjoint_concatenates(self):
        b = aggregate_evidence([self._set("a", cand("x::0")), self._set("b", cand("y::0"), cand("z::0"))], "s")
        assert b.chunk_ids() == ["x::0", "y::0", "z::0"]

    def test_max_score_first_position(self):
        b = aggregate_evidence(
            [self._set("a", cand("x::0", 0.7), cand("y::0", 0.2)), self._set("b", cand("z::0", 0.3), cand("x::0", 0.9))]
        )
        assert b.chunk_ids() == ["x::0", "y::0", "z::0"]
        assert b.merged[0].score == 0.9

    def test_empty(self):
        b = aggregate_evidence([], "s")
        assert b.merged == [] and b.per_subquery == []


def test_parallel_equivalence():
    q = ResearchQuery("latency", "report_gen", "s1")
    subs = tuple(SubQuery(f"s1#{i}", i, t) for i, t in enumerate(["latency benchmarks", "index build", "notes p99", "harness"]))
    plan = SubQueryPlan(q, subs, 4)
    script = {"filter": keep_all, "decide": external_once}
    seq = run_plan(plan, PRIVATE, PUBLIC, Budget(), mock_gateway(script), workers=1)
    par = run_plan(plan, PRIVATE, PUBLIC, Budget(), mock_gateway(script), workers=4)
    assert seq.to_json() == par.to_json()
    assert [s.sq_id for s in par.per_subquery] == [sq.sq_id for sq in subs]
