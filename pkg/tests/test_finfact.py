import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from finrag.docstore import Document
from finrag.finfact import (
    A_WINS,
    B_WINS,
    DIMENSIONS,
    TIE,
    FactQA,
    JudgeVerdict,
    NoVerdicts,
    UnparseableGeneration,
    build_manifest,
    generate_factqa,
    judge_pairwise,
    validate_manifest,
    win_rate,
    win_rate_csv,
    win_rate_report,
)
from finrag.gateway import Gateway

from .conftest import chat_handle

NOW = 1_700_000_000.0


def article(doc_id="art-1", body="央行宣布降准0.5个百分点。\n分析认为有助于降低融资成本。"):
    return Document(
        id=doc_id,
        source_type="news",
        title="降准新闻",
        summary="央行降准",
        body=body,
        published_at=NOW,
    )


def qa(qa_id="qa-1", kind="structural", gold="降准0.5个百分点"):
    return FactQA(
        id=qa_id,
        kind=kind,
        category="financial",
        year=2023,
        question="央行此次降准了多少？",
        source_article_id="art-1",
        gold_answer=gold if kind == "structural" else None,
    )


class TestGenerate:
    def test_scripted_generation_parsed(self):
        payload = [
            {"question": "降准了多少？", "answer": "0.5个百分点"},
            {"question": "对融资成本有何影响？", "answer": "有助于降低融资成本"},
        ]
        gateway = Gateway([chat_handle("m", "scripted", table={"央行宣布降准": json.dumps(payload, ensure_ascii=False)})])
        items = generate_factqa(article(), "structural", gateway, "m", category="financial", year=2023)
        assert len(items) == 2
        assert items[0].gold_answer == "0.5个百分点"
        assert all(i.source_article_id == "art-1" for i in items)

    def test_structural_item_without_answer_skipped(self):
        payload = [{"question": "q1", "answer": "a1"}, {"question": "q2"}]
        gateway = Gateway([chat_handle("m", "scripted", table={"央行": json.dumps(payload, ensure_ascii=False)})])
        items = generate_factqa(article(), "structural", gateway, "m")
        assert len(items) == 1

    def test_conversational_needs_no_answer(self):
        payload = [{"question": "这篇报道的立场如何？"}]
        gateway = Gateway([chat_handle("m", "scripted", table={"央行": json.dumps(payload, ensure_ascii=False)})])
        items = generate_factqa(article(), "conversational", gateway, "m")
        assert items[0].gold_answer is None

    def test_unparseable_generation(self):
        gateway = Gateway([chat_handle("m", "scripted", table={}, default="plain text")])
        with pytest.raises(UnparseableGeneration):
            generate_factqa(article(), "structural", gateway, "m")

    def test_structural_invariant(self):
        with pytest.raises(ValueError):
            FactQA(
                id="x",
                kind="structural",
                category="financial",
                year=2023,
                question="q",
                source_article_id="a",
                gold_answer=None,
            )


def judge_gateway(forward: dict, backward: dict | None = None):
    """Scripted judge: 'Answer 1:\\nX' identifies the ordering."""
    backward = backward or forward
    table = {
        "Answer 1:\nresp-a": json.dumps(forward),
        "Answer 1:\nresp-b": json.dumps(backward),
    }
    return Gateway([chat_handle("judge", "scripted", table=table)])


class TestJudge:
    def test_consistent_preference_wins(self):
        # judge prefers position of resp_a in both orderings
        gateway = judge_gateway(
            forward={"factual": "1", "relevant": "1", "informational": "tie"},
            backward={"factual": "2", "relevant": "2", "informational": "tie"},
        )
        verdict = judge_pairwise(qa(), "resp-a", "resp-b", gateway, "judge", system_a="sysA", system_b="sysB")
        assert verdict.per_dimension["factual"] == A_WINS
        assert verdict.per_dimension["relevant"] == A_WINS
        assert verdict.per_dimension["informational"] == TIE

    def test_position_flipping_judge_reconciles_to_tie(self):
        # always prefers whatever sits first: forward says 1, backward says 1
        gateway = judge_gateway(forward={d: "1" for d in DIMENSIONS})
        verdict = judge_pairwise(qa(), "resp-a", "resp-b", gateway, "judge")
        assert all(v == TIE for v in verdict.per_dimension.values())

    def test_identical_responses_tie_under_consistent_judge(self):
        gateway = Gateway(
            [chat_handle("judge", "scripted", table={"Answer 1:": json.dumps({d: "tie" for d in DIMENSIONS})})]
        )
        verdict = judge_pairwise(qa(), "same text", "same text", gateway, "judge")
        assert all(v == TIE for v in verdict.per_dimension.values())

    def test_unparseable_verdict_flagged_tie(self):
        gateway = Gateway([chat_handle("judge", "scripted", table={}, default="garbage")])
        verdict = judge_pairwise(qa(), "resp-a", "resp-b", gateway, "judge")
        assert verdict.flagged
        assert all(v == TIE for v in verdict.per_dimension.values())

    def test_conversational_requires_article(self):
        gateway = judge_gateway(forward={d: "tie" for d in DIMENSIONS})
        with pytest.raises(ValueError):
            judge_pairwise(qa(kind="conversational"), "a", "b", gateway, "judge")

    def test_deterministic(self):
        gateway = judge_gateway(
            forward={"factual": "1", "relevant": "tie", "informational": "2"},
            backward={"factual": "2", "relevant": "tie", "informational": "1"},
        )
        first = judge_pairwise(qa(), "resp-a", "resp-b", gateway, "judge")
        second = judge_pairwise(qa(), "resp-a", "resp-b", gateway, "judge")
        assert first == second


def verdict(i, a="ours", b="baseline", factual=A_WINS):
    return JudgeVerdict(
        qa_id=f"q{i}",
        system_a=a,
        system_b=b,
        per_dimension={"factual": factual, "relevant": TIE, "informational": B_WINS},
    )


class TestWinRate:
    def test_seventy_percent_headline_shape(self):
        verdicts = [verdict(i, factual=A_WINS) for i in range(7)]
        verdicts += [verdict(7 + i, factual=B_WINS) for i in range(3)]
        rates = win_rate(verdicts, "ours", "factual")
        assert rates["win"] == pytest.approx(0.70)
        assert rates["loss"] == pytest.approx(0.30)

    def test_all_ties(self):
        verdicts = [verdict(i, factual=TIE) for i in range(5)]
        rates = win_rate(verdicts, "ours", "factual")
        assert (rates["win"], rates["tie"], rates["loss"]) == (0.0, 1.0, 0.0)

    def test_empty_raises(self):
        with pytest.raises(NoVerdicts):
            win_rate([], "ours", "factual")

    def test_fractions_sum_to_one(self):
        verdicts = [verdict(i, factual=[A_WINS, B_WINS, TIE][i % 3]) for i in range(9)]
        rates = win_rate(verdicts, "ours", "factual")
        assert rates["win"] + rates["tie"] + rates["loss"] == pytest.approx(1.0, abs=1e-9)

    @given(st.lists(st.sampled_from([A_WINS, B_WINS, TIE]), min_size=1, max_size=60))
    def test_antisymmetry(self, outcomes):
        verdicts = [
            JudgeVerdict(
                qa_id=f"q{i}",
                system_a="ours",
                system_b="baseline",
                per_dimension={"factual": o, "relevant": o, "informational": TIE},
            )
            for i, o in enumerate(outcomes)
        ]
        for dim in ("factual", "relevant"):
            ours = win_rate(verdicts, "ours", dim)
            theirs = win_rate(verdicts, "baseline", dim)
            assert ours["win"] == pytest.approx(theirs["loss"], abs=1e-9)
            assert ours["loss"] == pytest.approx(theirs["win"], abs=1e-9)
            assert ours["tie"] == pytest.approx(theirs["tie"], abs=1e-9)

    def test_per_opponent_split(self):
        verdicts = [verdict(0, b="gpt", factual=A_WINS), verdict(1, b="qwen", factual=B_WINS)]
        report = win_rate_report(verdicts, "ours")
        assert report["per_opponent"]["gpt"]["factual"]["win"] == 1.0
        assert report["per_opponent"]["qwen"]["factual"]["loss"] == 1.0
        assert report["pooled"]["factual"]["win"] == 0.5

    def test_csv_shape(self):
        verdicts = [verdict(0, b="gpt")]
        csv_text = win_rate_csv(verdicts, "ours")
        lines = csv_text.strip().splitlines()
        assert lines[0] == "opponent,dimension,win,tie,loss"
        assert len(lines) == 1 + len(DIMENSIONS)


class TestManifest:
    def _items(self):
        items = [
            FactQA(
                id=f"s{i}",
                kind="structural",
                category="financial",
                year=2023,
                question="q",
                source_article_id="art-1",
                gold_answer="a",
            )
            for i in range(3)
        ]
        items.append(
            FactQA(
                id="c0",
                kind="conversational",
                category="financial",
                year=2023,
                question="q",
                source_article_id="art-1",
            )
        )
        return items

    def test_build_and_validate(self):
        items = self._items()
        manifest = build_manifest(items)
        validate_manifest(items, manifest, article_ids=["art-1"])

    def test_count_mismatch_detected(self):
        items = self._items()
        manifest = build_manifest(items)
        manifest["questions"]["structural"] += 1
        with pytest.raises(Exception):
            validate_manifest(items, manifest, article_ids=["art-1"])

    def test_unknown_article_detected(self):
        items = self._items()
        with pytest.raises(Exception):
            validate_manifest(items, build_manifest(items), article_ids=["other"])

    def test_reference_statistics_schema(self):
        # the published dataset's headline counts, validated as a manifest
        manifest = {
            "questions": {"structural": 877, "conversational": 637, "total": 1514},
            "articles": {"category": {"financial": 120, "political": 30, "technical": 30, "sports": 30}},
        }
        assert manifest["questions"]["structural"] + manifest["questions"]["conversational"] == manifest["questions"]["total"]
        assert manifest["articles"]["category"]["financial"] == 120
