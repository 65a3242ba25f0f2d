"""Synthetic datasets and fixture corpora shared by tests and scripts.

Everything here is deterministic given its seed: exam CSV trees for harness
runs, the prompt-golden fixture questions, a small bilingual document corpus
for the QA pipeline, and the scripted stub tables that drive it offline.
"""

from __future__ import annotations

import datetime as _dt
import json
from pathlib import Path

import numpy as np

from .docstore import Document
from .exam import ExamQuestion, write_dataset
from .scoring import enumerate_combinations

OPTION_TEXT = {
    "zh": ("甲方案", "乙方案", "丙方案", "丁方案", "戊方案"),
    "en": ("plan alpha", "plan beta", "plan gamma", "plan delta", "plan epsilon"),
}


def _ts(date: str) -> float:
    return _dt.datetime.fromisoformat(date + "+00:00").timestamp()


def build_synthetic_questions(
    subject: str,
    split: str,
    n: int,
    option_count: int = 4,
    multi: bool = False,
    seed: int = 0,
    language: str = "zh",
    gold_cycle: bool = False,
) -> list[ExamQuestion]:
    """Deterministic synthetic questions with unique stems.

    ``gold_cycle`` assigns golds round-robin over the letters (exact
    proportions); otherwise golds are drawn uniformly from the seeded RNG,
    over single letters or over all size>=2 combinations when ``multi``.
    """
    rng = np.random.default_rng(seed)
    letters = "ABCDE"[:option_count]
    combos = enumerate_combinations(option_count) if multi else None
    texts = OPTION_TEXT[language]
    questions = []
    for i in range(n):
        if multi:
            assert combos is not None
            gold = combos[i % len(combos)] if gold_cycle else combos[int(rng.integers(len(combos)))]
        else:
            gold = frozenset(letters[i % option_count] if gold_cycle else letters[int(rng.integers(option_count))])
        stem = (
            f"第{i}题（{subject}·{split}）：在情形{i}下，应当选择哪一项？"
            if language == "zh"
            else f"Item {i} ({subject}/{split}): which choice applies in scenario {i}?"
        )
        questions.append(
            ExamQuestion(
                id=f"{subject}-{split}-{i}",
                subject=subject,
                language=language,
                stem=stem,
                options={letter: f"{texts[j]}{i}" for j, letter in enumerate(letters)},
                answer_set=gold,
                explanation=(f"情形{i}的依据是条款{i}。" if language == "zh" else f"Scenario {i} follows rule {i}.")
                if split == "dev"
                else None,
                split=split,
            )
        )
    return questions


def write_synthetic_dataset(
    root: str | Path,
    subject: str,
    n_test: int,
    option_count: int = 4,
    multi: bool = False,
    seed: int = 0,
    language: str = "zh",
    gold_cycle: bool = False,
) -> list[ExamQuestion]:
    """Write dev (5 questions) and test splits; returns the test questions."""
    dev = build_synthetic_questions(subject, "dev", 5, option_count, multi, seed + 1, language, gold_cycle)
    test = build_synthetic_questions(subject, "test", n_test, option_count, multi, seed, language, gold_cycle)
    write_dataset(root, subject, "dev", dev)
    write_dataset(root, subject, "test", test)
    return test


# Prompt golden fixture ---------------------------------------------------------

_GOLDEN_ZH = [
    ("企业收到投资者投入的设备，应借记的科目是？", {"A": "固定资产", "B": "实收资本", "C": "营业外收入", "D": "资本公积"}, "A", "投入设备属于固定资产，按公允价值入账。"),
    ("增值税一般纳税人销售货物适用的基本税率是？", {"A": "6%", "B": "9%", "C": "13%", "D": "17%"}, "C", "自2019年4月起基本税率为13%。"),
    ("下列属于流动负债的是？", {"A": "长期借款", "B": "应付票据", "C": "实收资本", "D": "无形资产"}, "B", "应付票据通常在一年内到期，属于流动负债。"),
    ("计算净现值时使用的折现率通常是？", {"A": "票面利率", "B": "通货膨胀率", "C": "资本成本", "D": "名义利率"}, "C", "净现值以资本成本作为折现率衡量项目价值。"),
    ("审计证据的充分性主要与什么有关？", {"A": "证据数量", "B": "证据来源", "C": "证据形式", "D": "证据时效"}, "A", "充分性是对证据数量的衡量。"),
]

_GOLDEN_EN = [
    ("Which ratio measures a firm's short-term liquidity?", {"A": "Current ratio", "B": "Debt-to-equity", "C": "Dividend yield", "D": "P/E ratio"}, "A", "The current ratio compares current assets with current liabilities."),
    ("A bond selling below par is said to trade at a:", {"A": "Premium", "B": "Discount", "C": "Coupon", "D": "Spread"}, "B", "Below-par prices are discounts to face value."),
    ("Diversification primarily reduces which risk?", {"A": "Systematic", "B": "Inflation", "C": "Unsystematic", "D": "Currency"}, "C", "Idiosyncratic risk diversifies away across holdings."),
    ("The payback period ignores:", {"A": "Initial outlay", "B": "Time value of money", "C": "Cash inflows", "D": "Project life"}, "B", "Payback sums undiscounted cash flows, ignoring discounting."),
    ("Under accrual accounting, revenue is recognized when:", {"A": "Cash is received", "B": "Contracts are signed", "C": "It is earned", "D": "Dividends are paid"}, "C", "Accrual accounting recognizes revenue when earned."),
]


def golden_prompt_fixture(language: str) -> tuple[list[ExamQuestion], ExamQuestion]:
    """Five dev demonstrations plus one target question, fixed wording."""
    rows = _GOLDEN_ZH if language == "zh" else _GOLDEN_EN
    demos = [
        ExamQuestion(
            id=f"golden-{language}-dev-{i}",
            subject="golden",
            language=language,
            stem=stem,
            options=options,
            answer_set=frozenset(answer),
            explanation=explanation,
            split="dev",
        )
        for i, (stem, options, answer, explanation) in enumerate(rows)
    ]
    if language == "zh":
        target = ExamQuestion(
            id="golden-zh-target",
            subject="golden",
            language="zh",
            stem="企业计提坏账准备应借记的科目是？",
            options={"A": "信用减值损失", "B": "应收账款", "C": "坏账准备", "D": "管理费用"},
            answer_set=frozenset("A"),
            split="val",
        )
    else:
        target = ExamQuestion(
            id="golden-en-target",
            subject="golden",
            language="en",
            stem="Which statement reports a firm's financial position at a point in time?",
            options={"A": "Income statement", "B": "Balance sheet", "C": "Cash flow statement", "D": "Equity statement"},
            answer_set=frozenset("B"),
            split="val",
        )
    return demos, target


# QA fixture corpus -------------------------------------------------------------


def demo_documents() -> list[Document]:
    """Small bilingual corpus: reports, news, market and macro documents.

    Every document has at least two paragraphs so any recalled document can
    support two citation entries.
    """
    return [
        Document(
            id="rep-moutai",
            source_type="report",
            title="贵州茅台研究报告",
            summary="白酒龙头贵州茅台 2023 年业绩点评与估值分析。",
            body=(
                "贵州茅台2023年实现营业收入约1477亿元，同比增长约18%。\n"
                "公司毛利率保持在91%以上，批价体系稳定。\n"
                "机构普遍认为茅台品牌护城河深厚，长期竞争力稳固，维持买入评级。"
            ),
            company_names=("贵州茅台",),
            published_at=_ts("2024-03-10T08:00:00"),
            pdf_link="https://example.com/reports/moutai-2023.pdf",
        ),
        Document(
            id="news-baijiu",
            source_type="news",
            title="白酒行业淡季动销平稳",
            summary="白酒行业淡季动销平稳，高端酒批价小幅波动。",
            body=(
                "进入二季度，白酒行业整体动销平稳，渠道库存处于合理水平。\n"
                "高端白酒批价小幅波动，飞天茅台批价维持在2600元左右。"
            ),
            company_names=("贵州茅台", "五粮液"),
            published_at=_ts("2024-04-02T09:30:00"),
            url="https://example.com/news/baijiu-q2",
        ),
        Document(
            id="mkt-moutai",
            source_type="market",
            title="贵州茅台行情数据",
            summary="贵州茅台近一周K线行情。",
            body=(
                "贵州茅台近期行情：\n"
                "2024-04-01：开盘 1680.0，收盘 1702.5，最高 1710.0，最低 1675.0\n"
                "2024-04-02：开盘 1702.0，收盘 1695.0，最高 1708.0，最低 1690.0"
            ),
            company_names=("贵州茅台",),
            published_at=_ts("2024-04-02T16:00:00"),
        ),
        Document(
            id="rep-catl",
            source_type="report",
            title="宁德时代研究报告",
            summary="动力电池龙头宁德时代市场份额与盈利能力分析。",
            body=(
                "宁德时代2023年全球动力电池装机市占率约37%，连续多年位居第一。\n"
                "公司单位盈利能力随碳酸锂价格回落而修复，海外产能持续扩张。"
            ),
            company_names=("宁德时代",),
            published_at=_ts("2024-03-20T08:00:00"),
            pdf_link="https://example.com/reports/catl-2023.pdf",
        ),
        Document(
            id="news-ev",
            source_type="news",
            title="新能源汽车销量创新高",
            summary="3月新能源汽车销量同比增长35%，渗透率突破40%。",
            body=(
                "3月国内新能源汽车销量约88万辆，同比增长35%。\n"
                "新能源渗透率首次突破40%，插电混动车型增速快于纯电。"
            ),
            company_names=("比亚迪", "宁德时代"),
            published_at=_ts("2024-04-05T10:00:00"),
            url="https://example.com/news/ev-march",
        ),
        Document(
            id="macro-gdp",
            source_type="macro",
            title="一季度宏观经济数据点评",
            summary="一季度GDP同比增长5.3%，好于市场预期。",
            body=(
                "一季度国内生产总值同比增长5.3%，高于市场预期的4.9%。\n"
                "制造业投资与出口回暖是主要拉动项，消费恢复仍然偏缓。"
            ),
            company_names=(),
            published_at=_ts("2024-04-16T11:00:00"),
        ),
        Document(
            id="news-pboc",
            source_type="news",
            title="央行宣布降准0.5个百分点",
            summary="中国人民银行宣布全面降准0.5个百分点，释放长期资金约1万亿元。",
            body=(
                "中国人民银行宣布下调金融机构存款准备金率0.5个百分点。\n"
                "此次降准预计释放长期资金约1万亿元，有助于降低社会综合融资成本。"
            ),
            company_names=(),
            published_at=_ts("2024-02-05T09:00:00"),
            url="https://example.com/news/pboc-rrr",
        ),
        Document(
            id="rep-byd",
            source_type="report",
            title="比亚迪研究报告",
            summary="比亚迪销量结构与出海进展跟踪。",
            body=(
                "比亚迪2023年销售新能源汽车302万辆，同比增长62%。\n"
                "出口业务成为新的增长引擎，全年出口约24万辆。"
            ),
            company_names=("比亚迪",),
            published_at=_ts("2024-03-25T08:00:00"),
            pdf_link="https://example.com/reports/byd-2023.pdf",
        ),
        Document(
            id="news-ashare",
            source_type="news",
            title="A股三大指数集体收涨",
            summary="A股三大指数集体收涨，成交额重回万亿元上方。",
            body=(
                "周二A股三大指数集体收涨，沪指涨1.2%重回3100点上方。\n"
                "两市成交额约1.05万亿元，北向资金净买入超过80亿元。"
            ),
            company_names=(),
            published_at=_ts("2024-04-09T15:30:00"),
            url="https://example.com/news/ashare-up",
        ),
        Document(
            id="news-fed",
            source_type="news",
            title="Federal Reserve holds rates steady",
            summary="The Federal Reserve kept its policy rate at 5.25%-5.50% and signaled patience on cuts.",
            body=(
                "The Federal Reserve held its benchmark rate in the 5.25% to 5.50% range for a fifth straight meeting.\n"
                "Chair remarks emphasized that the committee wants more confidence that inflation is moving toward 2% before cutting."
            ),
            company_names=(),
            published_at=_ts("2024-03-21T02:00:00"),
            url="https://example.com/news/fed-hold",
        ),
        Document(
            id="rep-cmb",
            source_type="report",
            title="招商银行研究报告",
            summary="招商银行资产质量与零售业务竞争力分析。",
            body=(
                "招商银行2023年不良贷款率为0.95%，拨备覆盖率超过430%。\n"
                "零售客户数与财富管理规模继续领跑股份制银行。"
            ),
            company_names=("招商银行",),
            published_at=_ts("2024-03-28T08:00:00"),
            pdf_link="https://example.com/reports/cmb-2023.pdf",
        ),
        Document(
            id="news-aichip",
            source_type="news",
            title="人工智能芯片需求旺盛",
            summary="AI服务器出货量带动高端芯片与存储需求大幅增长。",
            body=(
                "人工智能训练需求带动AI服务器出货量同比增长约四成。\n"
                "高带宽存储供不应求，上游封装产能排期已到明年。"
            ),
            company_names=(),
            published_at=_ts("2024-04-11T13:00:00"),
            url="https://example.com/news/ai-chip",
        ),
    ]


def rewrite_key(query: str) -> str:
    """Substring unique to the rewrite prompt for this query."""
    return f"Current query: {query}"


def intention_key(rewritten: str) -> str:
    """Substring unique to the intention prompt for this rewritten query."""
    return f'Question: {rewritten}\nRespond with JSON only, in the form {{"sources"'


def generate_key(question: str) -> str:
    """Substring unique to the generation prompt for this question."""
    return f"Question: {question}\nAnswer:"


# (query, keywords, cited answer) rows; queries 23-25 retrieve nothing.
DEMO_QUERIES: list[dict] = [
    {"query": "贵州茅台2023年营收是多少？", "keywords": ["贵州茅台", "营业收入"], "answer": "根据研报，贵州茅台2023年实现营业收入约1477亿元，同比增长约18%[1]。"},
    {"query": "茅台的毛利率水平怎么样？", "keywords": ["贵州茅台", "毛利率"], "answer": "贵州茅台毛利率保持在91%以上，盈利能力突出[1]。"},
    {"query": "贵州茅台值得长期持有吗？", "keywords": ["贵州茅台", "研究报告"], "answer": "机构认为茅台品牌护城河深厚，长期竞争力稳固[1]，批价体系亦保持稳定[2]。"},
    {"query": "飞天茅台现在的批价是多少？", "keywords": ["飞天茅台", "批价"], "answer": "近期飞天茅台批价维持在2600元左右[1]。"},
    {"query": "白酒行业最近动销情况如何？", "keywords": ["白酒", "动销"], "answer": "白酒行业整体动销平稳，渠道库存处于合理水平[1]，高端酒批价小幅波动[2]。"},
    {"query": "宁德时代的市占率是多少？", "keywords": ["宁德时代", "市占率"], "answer": "宁德时代2023年全球动力电池装机市占率约37%，连续多年位居第一[1]。"},
    {"query": "宁德时代盈利能力有变化吗？", "keywords": ["宁德时代", "盈利"], "answer": "随着碳酸锂价格回落，宁德时代单位盈利能力有所修复[1]。"},
    {"query": "3月新能源汽车卖了多少辆？", "keywords": ["新能源汽车", "销量"], "answer": "3月国内新能源汽车销量约88万辆，同比增长35%[1]。"},
    {"query": "新能源渗透率到多少了？", "keywords": ["新能源", "渗透率"], "answer": "新能源渗透率首次突破40%[1]，插电混动增速快于纯电[2]。"},
    {"query": "比亚迪去年卖了多少车？", "keywords": ["比亚迪", "销量"], "answer": "比亚迪2023年销售新能源汽车302万辆，同比增长62%[1]。"},
    {"query": "比亚迪出口情况怎么样？", "keywords": ["比亚迪", "出口"], "answer": "比亚迪全年出口约24万辆，出口成为新的增长引擎[1]。"},
    {"query": "一季度GDP增速是多少？", "keywords": ["GDP", "一季度"], "answer": "一季度国内生产总值同比增长5.3%，好于市场预期[1]。"},
    {"query": "一季度经济主要靠什么拉动？", "keywords": ["制造业", "出口"], "answer": "制造业投资与出口回暖是主要拉动项[1]，消费恢复仍然偏缓[2]。"},
    {"query": "央行降准了多少？", "keywords": ["央行", "降准"], "answer": "央行下调存款准备金率0.5个百分点[1]，预计释放长期资金约1万亿元[2]。"},
    {"query": "这次降准释放多少资金？", "keywords": ["降准", "资金"], "answer": "此次降准预计释放长期资金约1万亿元[1]。"},
    {"query": "昨天A股表现如何？", "keywords": ["A股", "指数"], "answer": "A股三大指数集体收涨，沪指涨1.2%[1]，两市成交额约1.05万亿元[2]。"},
    {"query": "北向资金最近买了多少？", "keywords": ["北向资金"], "answer": "北向资金净买入超过80亿元[1]。"},
    {"query": "美联储最新的利率决议是什么？", "keywords": ["Federal", "Reserve"], "answer": "The Federal Reserve held its benchmark rate in the 5.25% to 5.50% range[1] and wants more confidence on inflation before cutting[2]."},
    {"query": "招商银行的不良率是多少？", "keywords": ["招商银行", "不良贷款率"], "answer": "招商银行2023年不良贷款率为0.95%，拨备覆盖率超过430%[1]。"},
    {"query": "招行零售业务怎么样？", "keywords": ["招商银行", "零售"], "answer": "招商银行零售客户数与财富管理规模继续领跑股份制银行[1]。"},
    {"query": "AI芯片需求怎么样？", "keywords": ["人工智能", "芯片"], "answer": "AI服务器出货量同比增长约四成[1]，高带宽存储供不应求[2]。"},
    {"query": "茅台最近股价走势如何？", "keywords": ["贵州茅台", "行情"], "answer": "贵州茅台近期股价在1675元至1710元之间波动[1][2]。"},
    {"query": "量子泡面的口味有哪些？", "keywords": [], "answer": None},
    {"query": "请问独角兽的饲养方法？", "keywords": [], "answer": None},
    {"query": "zorp blarg quux?", "keywords": [], "answer": None},
]


def demo_stub_tables() -> dict[str, dict]:
    """Scripted chat-stub table driving rewrite/intention/generation offline."""
    table: dict[str, str] = {}
    for row in DEMO_QUERIES:
        query = row["query"]
        if row["answer"] is None:
            continue  # fall back through invalid JSON for the no-hit queries
        rewrite_payload = {"rewritten_query": query, "keywords": row["keywords"]}
        table[rewrite_key(query)] = json.dumps(rewrite_payload, ensure_ascii=False)
        intention_payload = {
            "sources": ["report", "news", "market", "macro"],
            "needs_market_data": False,
            "needs_reports": True,
            "confidence": 0.9,
        }
        table[intention_key(query)] = json.dumps(intention_payload, ensure_ascii=False)
        table[generate_key(query)] = row["answer"]
    return {"table": table, "default": "not json"}


def build_demo_pipeline(store_path: str = ":memory:"):
    """Fixture-backed QA pipeline: demo corpus, scripted chat, hash embedder."""
    from .agents import QaPipeline
    from .docstore import DocStore
    from .gateway import Gateway, ModelHandle
    from .textindex import TextIndex

    gateway = Gateway(
        [
            ModelHandle(
                id="chat", kind="chat_generation", endpoint="stub:scripted", options=demo_stub_tables()
            ),
            ModelHandle(
                id="embed", kind="embedding", endpoint="stub:hash_embed", options={"seed": 11, "dim": 24}
            ),
        ]
    )
    store = DocStore(store_path)
    text_index = TextIndex()
    pipeline = QaPipeline(
        store=store, text_index=text_index, gateway=gateway, chat_model="chat", embed_model="embed"
    )
    for doc in demo_documents():
        if store.has_document(doc.id):
            text_index.index_document(doc)
        else:
            pipeline.ingest_document(doc)
    return pipeline
