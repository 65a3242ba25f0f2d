"""Acceptance suite: one test per release criterion, at its stated tolerance.

Each test prints a `[ACCEPTANCE] <name>: PASS` line on success (visible with
``pytest -s`` or in failure output).  Everything runs offline on the
deterministic stub backends.
"""

import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from finrag.corpus import STAT_METRICS, clean_corpus, corpus_stats
from finrag.gateway import Gateway, ModelHandle
from finrag.harness import REPORT_JSON, RunConfig, read_records, resume_run, run_benchmark
from finrag.prompts import MODE_ANSWER_ONLY, MODE_COT, Demonstration, DemonstrationSet, build_prompt
from finrag.rbfl import RbflConfig, answer_with_rbfl, build_pool, retrieve_shots, retrieve_shots_destructive
from finrag.scoring import enumerate_combinations, select_multi
from finrag.synth import (
    DEMO_QUERIES,
    build_demo_pipeline,
    golden_prompt_fixture,
    write_synthetic_dataset,
)
from finrag.textindex import TextIndex
from finrag.vectors import VectorIndex, build_index

from .conftest import embed_handle, make_question, scored_handle
from .test_scoring import brute_force_multi
from .test_textindex import brute_force_search, doc as make_doc
from .test_vectors import brute_force_top_k

GOLDEN_DIR = Path(__file__).parent / "goldens" / "prompts"


def _ok(name: str) -> None:
    print(f"[ACCEPTANCE] {name}: PASS")


def test_scorer_oracle_equivalence():
    """select_multi matches an independent brute-force subset maximizer on
    1,000 random score maps for each n in {3,4,5}, in under 5 seconds."""
    rng = random.Random(7)
    started = time.perf_counter()
    mismatches = 0
    for n in (3, 4, 5):
        letters = "ABCDE"[:n]
        for _ in range(1000):
            scores = {l: rng.uniform(-8.0, 3.0) for l in letters}
            if select_multi(scores) != brute_force_multi(scores):
                mismatches += 1
    elapsed = time.perf_counter() - started
    assert mismatches == 0
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    _ok(f"scorer oracle equivalence (3x1000 maps, {elapsed:.2f}s)")


def test_combination_count_formula():
    expected = {2: 1, 3: 4, 4: 11, 5: 26}
    for n, count in expected.items():
        combos = enumerate_combinations(n)
        assert len(combos) == count == 2**n - n - 1
        assert len(set(combos)) == count
    _ok("combination count 2^n-n-1 = 1/4/11/26")


def test_random_baseline_statistics(tmp_path):
    """Uniform single-option stub: accuracy 0.25 +/- 0.02 on N=2000;
    uniform-over-combinations stub: 1/11 +/- 0.015; the 9.09%-vs-10% note is
    carried in the report."""
    root = tmp_path / "data"
    write_synthetic_dataset(root, "sa", 2000, option_count=4, multi=False, seed=101)
    gateway = Gateway(
        [ModelHandle(id="m", kind="scored_completion", endpoint="stub:random_choice", options={"seed": 0})]
    )
    cfg = RunConfig(
        dataset_root=str(root),
        subjects=("sa",),
        categories={"sa": "CPA-SA"},
        model_handle_id="m",
        output_dir=str(tmp_path / "out-sa"),
        workers=4,
    )
    report_sa = run_benchmark(cfg, gateway)
    assert abs(report_sa.total.accuracy - 0.25) <= 0.02, report_sa.total.accuracy

    write_synthetic_dataset(root, "ma", 2000, option_count=4, multi=True, seed=202)
    gateway = Gateway(
        [ModelHandle(id="m", kind="scored_completion", endpoint="stub:random_combo", options={"seed": 1})]
    )
    cfg_ma = RunConfig(
        dataset_root=str(root),
        subjects=("ma",),
        categories={"ma": "CPA-MA"},
        model_handle_id="m",
        output_dir=str(tmp_path / "out-ma"),
        workers=4,
    )
    report_ma = run_benchmark(cfg_ma, gateway)
    assert abs(report_ma.total.accuracy - 1 / 11) <= 0.015, report_ma.total.accuracy

    payload = json.loads((tmp_path / "out-ma" / REPORT_JSON).read_text(encoding="utf-8"))
    note = payload["baselines"]["CPA-MA"]["note"]
    assert "9.09%" in note and "10%" in note
    _ok(
        f"random baselines (single {report_sa.total.accuracy:.4f} ~ 0.25, "
        f"multi {report_ma.total.accuracy:.4f} ~ {1 / 11:.4f}, discrepancy noted)"
    )


def test_embedding_index_exactness(tmp_path):
    """top_k equals a brute-force cosine scan on 100 random fixtures
    (n <= 500, d <= 64); save/load preserves scores to 1e-12."""
    rng = np.random.default_rng(12345)
    for trial in range(100):
        n = int(rng.integers(1, 501))
        d = int(rng.integers(2, 65))
        records = [(f"v{trial}-{i}", rng.standard_normal(d)) for i in range(n)]
        query = rng.standard_normal(d)
        k = int(rng.integers(1, min(n, 20) + 1))
        index = build_index(records)
        hits = index.top_k(query, k=k)
        expected = brute_force_top_k(records, query, k)
        assert [h.ref_id for h in hits] == [ref for _, ref in expected], f"trial {trial}"
        for hit, (score, _) in zip(hits, expected):
            assert abs(hit.score - score) <= 1e-6

        path = tmp_path / "trial.idx"
        index.save(path)
        loaded = VectorIndex.load(path)
        for before, after in zip(hits, loaded.top_k(query, k=k)):
            assert before.ref_id == after.ref_id
            assert abs(before.score - after.score) <= 1e-12
    _ok("embedding index exact vs brute force (100 fixtures) + 1e-12 round trip")


def test_rbfl_fidelity():
    """Exclude-set retrieval equals literal destructive removal on every
    fixture; K=5 shots are pairwise distinct and never include the target."""
    from .test_rbfl import QUESTIONS, corpus_item

    gateway = Gateway([embed_handle("embed", seed=5, dim=16), scored_handle("answer", "scripted_scores", table={"": "A"})])
    items = [corpus_item(i, q) for i, q in enumerate(QUESTIONS)]
    pool = build_pool(items, gateway, "embed")
    problems = [f"{q}的考点" for q in QUESTIONS] + ["完全无关的问题"]
    for k in (1, 2, 3, 5, 8):
        for problem in problems:
            cfg = RbflConfig(k_shots=k, pool=pool, embedder="embed", answer_model="answer")
            a = retrieve_shots(cfg, gateway, problem)
            b = retrieve_shots_destructive(cfg, gateway, problem)
            assert [(i.id, round(s, 12)) for i, s in a] == [(i.id, round(s, 12)) for i, s in b]

    # K=5 with the target present in the pool (same id and same dedup key)
    target = make_question(
        "c0",
        stem=f"{QUESTIONS[0]} A.甲 B.乙 C.丙 D.丁",
        options={"A": "甲", "B": "乙", "C": "丙", "D": "丁"},
        answer="A",
    )
    cfg = RbflConfig(k_shots=5, pool=pool, embedder="embed", answer_model="answer")
    prediction, shots, _prompt = answer_with_rbfl(cfg, gateway, target)
    ids = [item.id for item, _ in shots]
    assert len(ids) == 5
    assert len(set(ids)) == 5
    assert "c0" not in ids
    assert prediction.predicted_set
    _ok("rbfl exclude-set == destructive removal; 5 distinct shots, self excluded")


def _zh_number(i: int) -> str:
    digits = "零一二三四五六七八九"
    return "".join(digits[int(ch)] for ch in str(i))


def test_corpus_pipeline_dedup_and_stats():
    """200-item fixture with 37 known duplicates keeps exactly 163; cleaning
    is idempotent; statistics match independent hand tallies and carry every
    required metric name."""
    questions = [f"第{_zh_number(i)}号问题？请解释指标{_zh_number(i)}的含义" for i in range(163)]
    answers = [f"指标{_zh_number(i)}的解释文本。" for i in range(163)]
    rows = [{"id": f"u{i}", "text": f"{q}答案：{a}"} for i, (q, a) in enumerate(zip(questions, answers))]
    # 37 duplicates of the first 37 questions, differing only in punctuation
    for i in range(37):
        rows.append({"id": f"dup{i}", "text": f"{questions[i]}！！ 答案：重复回答。"})
    assert len(rows) == 200

    result = clean_corpus(rows)
    assert len(result.kept) == 163
    assert len(result.duplicates) == 37
    assert result.rejected == []

    second = clean_corpus([item.as_raw_record() for item in result.kept])
    assert [(i.question, i.answer_text) for i in second.kept] == [
        (i.question, i.answer_text) for i in result.kept
    ]
    assert not second.duplicates and not second.rejected

    stats = corpus_stats(result.kept + result.duplicates)
    # independent tallies from the constructed strings
    all_texts = [f"{q}答案：{a}" for q, a in zip(questions, answers)]
    all_texts += [f"{questions[i]}！！ 答案：重复回答。" for i in range(37)]
    expected_avg_text = round(sum(len(t) for t in all_texts) / 200, 2)
    expected_questions = questions + [questions[i] + "！！" for i in range(37)]
    expected_avg_q = round(sum(len(q) for q in expected_questions) / 200, 2)
    expected_answers = answers + ["重复回答。"] * 37
    expected_avg_a = round(sum(len(a) for a in expected_answers) / 200, 2)
    assert stats["Total items"] == 200
    assert stats["Unique items"] == 163
    assert stats["Average text length"] == expected_avg_text
    assert stats["Minimum text length"] == min(len(t) for t in all_texts)
    assert stats["Maximum text length"] == max(len(t) for t in all_texts)
    assert stats["Average question length"] == expected_avg_q
    assert stats["Average answer length"] == expected_avg_a
    assert stats["Others"] == 200  # fixture has no inline options
    for name in STAT_METRICS:
        assert name in stats
    _ok("corpus dedup 200->163, idempotent, stats == hand tallies, all metric names")


def test_text_index_oracle_and_half_life():
    """search_text matches brute-force weighted tf-idf with decay on a
    fixture of up to 200 documents; a 30-day-old document scores exactly
    half its fresh twin."""
    rng = random.Random(99)
    companies = ["贵州茅台", "五粮液", "比亚迪", "宁德时代", "招商银行"]
    topics = ["研究报告", "行情快讯", "宏观点评", "业绩预告", "批价跟踪", "销量数据"]
    words = ["增长", "下滑", "稳定", "波动", "回暖", "承压", "突破", "回落"]
    docs = []
    for i in range(180):
        company = rng.choice(companies)
        title = f"{company}{rng.choice(topics)}{_zh_number(i)}"
        summary = " ".join(rng.sample(words, 3)) + f" quarter{i % 7}"
        docs.append(
            make_doc(
                f"doc{i}",
                title,
                summary=summary,
                companies=[company] if rng.random() < 0.7 else [],
                age_days=rng.uniform(0, 120),
            )
        )
    index = TextIndex()
    for d in docs:
        index.index_document(d)
    now = 1_700_000_000.0
    queries = ["茅台 研究", "比亚迪 销量", "宏观 回暖", "批价", "quarter3", "宁德时代 业绩", "增长 突破"]
    for query in queries:
        expected = brute_force_search(docs, query, k=25, now=now)
        hits = index.search(query, k=25, now=now)
        assert [h.doc_id for h in hits] == [e[2] for e in expected], query
        for hit, exp in zip(hits, expected):
            assert hit.final_score == pytest.approx(exp[0], rel=1e-12)

    fresh = TextIndex()
    fresh.index_document(make_doc("now", "白酒批价观察", age_days=0.0))
    fresh.index_document(make_doc("old", "白酒批价观察", age_days=30.0))
    pair = {h.doc_id: h for h in fresh.search("白酒 批价", k=2, now=now)}
    assert pair["old"].recency_factor == 0.5
    assert pair["old"].final_score == pair["now"].final_score * 0.5
    _ok("text index == brute force on 180-doc fixture; 30-day half-life exact")


def test_harness_determinism_and_resume(tmp_path):
    """workers=1 and workers=8 produce byte-identical report.json under stub
    backends; an interrupted run, resumed, equals the uninterrupted run."""

    def run(workdir, workers, limit=None):
        root = workdir / "data"
        write_synthetic_dataset(root, "synth", 400, seed=11)
        gateway = Gateway(
            [ModelHandle(id="m", kind="scored_completion", endpoint="stub:random_choice", options={"seed": 3})]
        )
        cfg = RunConfig(
            dataset_root=str(root),
            subjects=("synth",),
            categories={"synth": "CPA-SA"},
            model_handle_id="m",
            output_dir=str(workdir / "out"),
            workers=workers,
            seed=11,
        )
        run_benchmark(cfg, gateway, limit=limit)
        return (workdir / "out" / REPORT_JSON).read_bytes(), cfg

    report1, _ = run(tmp_path / "w1", workers=1)
    report8, _ = run(tmp_path / "w8", workers=8)
    assert report1 == report8

    _, cfg = run(tmp_path / "interrupted", workers=8, limit=170)
    assert len(read_records(cfg.output_dir)) == 170
    resume_run(cfg.output_dir)
    assert len(read_records(cfg.output_dir)) == 400
    resumed = (tmp_path / "interrupted" / "out" / REPORT_JSON).read_bytes()
    assert resumed == report1
    _ok("harness workers-invariant report bytes; resume == uninterrupted")


def test_end_to_end_citation_soundness():
    """All 25 fixture queries through the pipeline: every citation index
    resolves to a stored paragraph; empty-retrieval queries produce the
    insufficient-knowledge turn."""
    from finrag.agents import INSUFFICIENT_EN, INSUFFICIENT_ZH

    pipeline = build_demo_pipeline()
    assert len(DEMO_QUERIES) == 25
    answered_with_citations = 0
    insufficient = 0
    for row in DEMO_QUERIES:
        turn, trace = pipeline.answer([], row["query"])
        if row["answer"] is None:
            assert turn.text in (INSUFFICIENT_ZH, INSUFFICIENT_EN), row["query"]
            assert turn.citations == ()
            insufficient += 1
            continue
        assert turn.citations, f"no citations for {row['query']}"
        bundle_refs = {e["paragraph_ref"] for e in trace["stages"]["bundle"]}
        for citation in turn.citations:
            paragraph = pipeline.store.get_paragraph(citation.paragraph_ref)
            assert paragraph.text
            assert citation.paragraph_ref in bundle_refs
        answered_with_citations += 1
    assert answered_with_citations == 22
    assert insufficient == 3
    _ok("citation soundness: 22/22 cited answers resolve, 3/3 insufficient turns")


def test_finfact_win_rate_math():
    """Antisymmetry on randomized verdict sets; the 7-win/3-loss fixture
    reports 0.70; a position-flipping judge reconciles to ties."""
    from finrag.finfact import (
        A_WINS,
        B_WINS,
        DIMENSIONS,
        TIE,
        JudgeVerdict,
        judge_pairwise,
        win_rate,
    )
    from finrag.gateway import Gateway as G

    rng = random.Random(5)
    verdicts = [
        JudgeVerdict(
            qa_id=f"q{i}",
            system_a="ours",
            system_b="baseline",
            per_dimension={d: rng.choice([A_WINS, B_WINS, TIE]) for d in DIMENSIONS},
        )
        for i in range(300)
    ]
    for dim in DIMENSIONS:
        ours = win_rate(verdicts, "ours", dim)
        other = win_rate(verdicts, "baseline", dim)
        assert ours["win"] == pytest.approx(other["loss"], abs=1e-9)
        assert ours["loss"] == pytest.approx(other["win"], abs=1e-9)
        assert ours["win"] + ours["tie"] + ours["loss"] == pytest.approx(1.0, abs=1e-9)

    headline = [
        JudgeVerdict(
            qa_id=f"h{i}",
            system_a="ours",
            system_b="baseline",
            per_dimension={"factual": A_WINS if i < 7 else B_WINS, "relevant": TIE, "informational": TIE},
        )
        for i in range(10)
    ]
    assert win_rate(headline, "ours", "factual")["win"] == pytest.approx(0.70)

    from .conftest import chat_handle
    from .test_finfact import qa

    flip_gateway = G(
        [chat_handle("judge", "scripted", table={"Answer 1:": json.dumps({d: "1" for d in DIMENSIONS})})]
    )
    verdict = judge_pairwise(qa(), "resp-a", "resp-b", flip_gateway, "judge")
    assert all(v == TIE for v in verdict.per_dimension.values())
    _ok("finfact antisymmetry, 0.70 headline fixture, flip-judge ties")


def test_prompt_golden_files():
    """build_prompt output is byte-identical to the committed goldens for
    (zh,en) x (answer-only, chain-of-thought) x k in {0,5}."""
    checked = 0
    for language in ("zh", "en"):
        demos, target = golden_prompt_fixture(language)
        for mode in (MODE_ANSWER_ONLY, MODE_COT):
            for k in (0, 5):
                dset = DemonstrationSet(
                    examples=[Demonstration.from_question(q) for q in demos[:k]],
                    language=language,
                    mode=mode,
                )
                prompt = build_prompt(dset, target).encode("utf-8")
                golden = (GOLDEN_DIR / f"{language}_{mode}_k{k}.txt").read_bytes()
                assert prompt == golden, f"{language}/{mode}/k={k}"
                checked += 1
    assert checked == 8
    _ok("prompt goldens byte-identical (8 files)")
