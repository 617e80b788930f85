import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdr.corpus import CorpusHandle, SourceDocument, build_corpus
from pdr.errors import BackendUnavailable, EmptyCorpus, ProfileSchemaError
from pdr.profile import ResponsePreferences, UserProfile, extract_profile, validate_profile, write_profile

from .conftest import mock_gateway

DOCS = [
    ("n1", "I write about retrieval systems. Latency matters most to me."),
    ("n2", "Our team ships search products. We measure p99 under load."),
]


def corpus(docs=DOCS, user="u1"):
    return build_corpus(
        "c", "private", [SourceDocument(i, "private", "plain_text", "", b, {"user_id": user}) for i, b in docs]
    )


FIXTURE = {
    "demographics": {"role": "engineer", "field": "search"},
    "learning_interests": ["retrieval", "latency"],
    "response_preferences": {"tone": "direct", "structure": "bullets", "depth": "expert", "formatting": ["tables"]},
    "interaction_tendencies": ["asks for numbers"],
    "style_exemplars": ["Latency matters most to me."],
}


def expected_profile():
    return UserProfile(
        user_id="u1",
        demographics={"role": "engineer", "field": "search"},
        learning_interests=("retrieval", "latency"),
        response_preferences=ResponsePreferences("direct", "bullets", "expert", ("tables",)),
        interaction_tendencies=("asks for numbers",),
        style_exemplars=("Latency matters most to me.",),
        provenance=("n2", "n1"),
    )


class TestExtract:
    def test_fixture_parses(self):
        gw = mock_gateway({"profile": json.dumps(FIXTURE)})
        p = extract_profile(corpus(), "u1", gw)
        assert p == expected_profile()
        assert validate_profile(p, corpus()) == []
        assert gw.ledger.count("calls", "profile") == 1
        assert gw.ledger.count("calls") == 1

    def test_ungrounded_exemplar_dropped(self):
        bad = dict(FIXTURE, style_exemplars=["Latency matters most to me.", "I never wrote this sentence."])
        p = extract_profile(corpus(), "u1", mock_gateway({"profile": json.dumps(bad)}))
        assert p.style_exemplars == ("Latency matters most to me.",)

    def test_interests_deduplicated_and_clipped(self):
        bad = dict(FIXTURE, learning_interests=["nlp", "nlp", "x" * 120])
        p = extract_profile(corpus(), "u1", mock_gateway({"profile": json.dumps(bad)}))
        assert p.learning_interests == ("nlp", "x" * 80)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            extract_profile(CorpusHandle("c", "private", (), ()), "u1", mock_gateway({"profile": "{}"}))

    def test_other_users_documents_excluded(self):
        mixed = build_corpus(
            "c",
            "private",
            [
                SourceDocument("a", "private", "plain_text", "", "mine", {"user_id": "u1"}),
                SourceDocument("b", "private", "plain_text", "", "theirs", {"user_id": "u2"}),
            ],
        )
        gw = mock_gateway({"profile": json.dumps(dict(FIXTURE, style_exemplars=[]))})
        p = extract_profile(mixed, "u1", gw)
        assert p.provenance == ("a",)
        assert "theirs" not in gw.backend.requests("profile")[0].user_prompt

    def test_document_budget(self):
        docs = [(f"d{i:02d}", f"document {i} " + "y" * 5000) for i in range(12)]
        gw = mock_gateway({"profile": json.dumps(dict(FIXTURE, style_exemplars=[]))})
        p = extract_profile(corpus(docs), "u1", gw)
        # most recent first, capped at ten
        assert p.provenance == tuple(f"d{i:02d}" for i in range(11, 1, -1))
        prompt = gw.backend.requests("profile")[0].user_prompt
        assert all(len(block) <= 4000 + 200 for block in prompt.split("=== DOCUMENT")[1:])

    def test_repair_then_schema_error(self):
        gw = mock_gateway({"profile": "not json"})
        with pytest.raises(ProfileSchemaError):
            extract_profile(corpus(), "u1", gw)
        assert gw.ledger.count("calls", "profile") == 2

    def test_invalid_depth_is_schema_error(self):
        bad = dict(FIXTURE, response_preferences={"depth": "galaxy-brain"})
        with pytest.raises(ProfileSchemaError):
            extract_profile(corpus(), "u1", mock_gateway({"profile": json.dumps(bad)}))

    def test_backend_error_propagates(self):
        with pytest.raises(BackendUnavailable):
            extract_profile(corpus(), "u1", mock_gateway({}))

    def test_deterministic_bytes(self):
        a = extract_profile(corpus(), "u1", mock_gateway({"profile": json.dumps(FIXTURE)}))
        b = extract_profile(corpus(), "u1", mock_gateway({"profile": json.dumps(FIXTURE)}))
        assert a.to_json() == b.to_json()


class TestValidate:
    def test_valid(self):
        assert validate_profile(expected_profile(), corpus()) == []

    def test_duplicate_interest(self):
        p = UserProfile("u1", learning_interests=("nlp", "nlp"))
        assert [v.code for v in validate_profile(p)] == ["DuplicateInterest"]

    def test_ungrounded(self):
        p = UserProfile("u1", style_exemplars=("made up",), provenance=("n1",))
        assert [v.code for v in validate_profile(p, corpus())] == ["ExemplarNotGrounded"]

    def test_multiple_codes(self):
        p = UserProfile(
            "",
            learning_interests=("z" * 81,),
            response_preferences=ResponsePreferences(depth="deep"),
            style_exemplars=("a", "b", "c", "d"),
        )
        codes = {v.code for v in validate_profile(p)}
        assert codes == {"EmptyUserId", "InterestTooLong", "InvalidDepth", "TooManyExemplars"}


def test_canonical_file(tmp_path):
    path = write_profile(tmp_path, expected_profile())
    assert path == tmp_path / "profiles" / "u1.json"
    text = path.read_text(encoding="utf-8")
    assert list(json.loads(text)) == [
        "schema_version",
        "user_id",
        "demographics",
        "learning_interests",
        "response_preferences",
        "interaction_tendencies",
        "style_exemplars",
        "provenance",
    ]
    assert text.startswith('{\n  "schema_version": 1,')


words = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20)


@given(
    user=words.filter(bool),
    demo=st.dictionaries(words, words, max_size=3),
    interests=st.lists(words, max_size=4, unique=True),
    depth=st.sampled_from(["overview", "standard", "expert"]),
    fmt=st.lists(words, max_size=3),
    ex=st.lists(words, max_size=3),
)
def test_json_round_trip(user, demo, interests, depth, fmt, ex):
    p = UserProfile(
        user,
        demo,
        tuple(interests),
        ResponsePreferences("t", "s", depth, tuple(fmt)),
        ("x",),
        tuple(ex),
        ("d1",),
    )
    assert UserProfile.from_json(p.to_json()) == p
