import pytest

from finrag.corpus import (
    CATEGORY_CALCULATION,
    CATEGORY_KNOWLEDGE,
    CATEGORY_LOGICAL,
    CATEGORY_READING,
    NoDelimiter,
    STAT_METRICS,
    calc_density,
    categorize,
    clean_corpus,
    corpus_stats,
    dedup_key,
    export_instructions,
    format_stats,
    item_from_dict,
    item_to_dict,
    parse_options,
    split_qa,
)


class TestSplitQa:
    def test_zh_delimiter(self):
        q, a = split_qa("税率是?A.13% B.9% 答案: A。解析…")
        assert q == "税率是?A.13% B.9%"
        assert a == "A。解析…"

    def test_en_delimiter(self):
        assert split_qa("Q… Answer: B") == ("Q…", "B")

    def test_no_delimiter(self):
        with pytest.raises(NoDelimiter):
            split_qa("no delimiter here")

    def test_last_occurrence_wins(self):
        q, a = split_qa("答案:不是这里。真正的问题？答案：C")
        assert a == "C"
        assert q.endswith("真正的问题？")


class TestDedupKey:
    def test_strips_non_chinese(self):
        assert dedup_key("增值税率?(A) 13%") == "增值税率"

    def test_truncates_to_thirty(self):
        assert dedup_key("饕" * 40) == "饕" * 30

    def test_empty_for_latin(self):
        assert dedup_key("pure latin question?") == ""

    def test_punctuation_variants_collide(self):
        a = dedup_key("企业所得税的税率是多少？")
        b = dedup_key("企业所得税的税率是多少 ?!")
        assert a == b != ""


def _raw(i, text):
    return {"id": f"r{i}", "text": text}


class TestCleanCorpus:
    def test_dedup_first_wins(self):
        rows = [
            _raw(0, "什么是市盈率？答案：股价除以每股收益。"),
            _raw(1, "什么是市盈率?? 答案：重复的表述。"),
            _raw(2, "什么是市净率？答案：股价除以每股净资产。"),
        ]
        result = clean_corpus(rows)
        assert [i.id for i in result.kept] == ["r0", "r2"]
        assert [i.id for i in result.duplicates] == ["r1"]
        assert result.kept[0].answer_text == "股价除以每股收益。"

    def test_rejects_no_delimiter(self):
        result = clean_corpus([_raw(0, "没有分隔符的内容")])
        assert result.kept == []
        assert result.rejected[0][1] == "no_delimiter"

    def test_counts_partition_input(self):
        rows = [
            _raw(0, "甲问题？答案：A"),
            _raw(1, "甲问题？答案：A again"),
            _raw(2, "no delimiter"),
            _raw(3, "乙问题？答案：B"),
        ]
        result = clean_corpus(rows)
        assert len(result.kept) + len(result.rejected) + len(result.duplicates) == 4
        assert result.total == 4

    def test_empty_stream(self):
        result = clean_corpus([])
        assert (result.kept, result.rejected, result.duplicates) == ([], [], [])

    def test_whitespace_variant_is_duplicate(self):
        rows = [_raw(0, "现金流量表的作用？答案：反映现金流入流出。"), _raw(1, "现金流量表的作用？  答案：反映现金流入流出。   ")]
        result = clean_corpus(rows)
        assert len(result.kept) == 1
        assert len(result.duplicates) == 1

    def test_prefix_suffix_rules_applied(self):
        rows = [_raw(0, "【单选题】1、什么是久期？答案：债券价格对利率的敏感度。来源：教材")]
        kept = clean_corpus(rows).kept
        assert kept[0].question == "什么是久期？"
        assert "来源" not in kept[0].answer_text

    def test_idempotent(self):
        rows = [
            _raw(0, "【多选题】下列属于流动资产的是？ A.存货 B.商誉 C.应收账款 D.厂房 答案：AC。存货与应收账款为流动资产。"),
            _raw(1, "什么是折现率？答案：将未来现金流折算为现值的比率。"),
            _raw(2, "判断：市盈率越高越好。答案：错。估值需结合成长性。"),
        ]
        first = clean_corpus(rows)
        second = clean_corpus([item.as_raw_record() for item in first.kept])
        assert [(i.question, i.answer_text) for i in second.kept] == [
            (i.question, i.answer_text) for i in first.kept
        ]
        assert second.rejected == [] and second.duplicates == []

    def test_parses_options_and_answer_set(self):
        rows = [_raw(0, "下列属于负债的是？ A.应付账款 B.存货 C.商誉 D.设备 答案：A。应付账款是负债。")]
        item = clean_corpus(rows).kept[0]
        assert item.options is not None and list(item.options) == ["A", "B", "C", "D"]
        assert item.options["A"].startswith("应付账款")
        assert item.answer_set == {"A"}
        assert item.explanation == "应付账款是负债。"


class TestParseOptions:
    def test_contiguous_required(self):
        assert parse_options("只有 B.x C.y 没有A") is None

    def test_paren_style(self):
        options = parse_options("选哪个？(A)甲 (B)乙 (C)丙")
        assert options is not None and list(options) == ["A", "B", "C"]

    def test_plain_text_has_none(self):
        assert parse_options("什么是久期？") is None


class TestStats:
    def test_metric_names_complete(self):
        rows = [_raw(i, f"问题{i}号是什么？答案：答{i}") for i in range(4)]
        stats = corpus_stats(clean_corpus(rows).kept)
        assert set(STAT_METRICS) <= set(stats)
        text = format_stats(stats)
        for name in STAT_METRICS:
            assert name in text

    def test_lengths(self):
        items = clean_corpus([_raw(0, "一二三四五？答案：六七八")]).kept
        stats = corpus_stats(items)
        assert stats["Total items"] == 1
        assert stats["Average text length"] == len(items[0].raw_text)
        assert stats["Average question length"] == len("一二三四五？")
        assert stats["Average answer length"] == len("六七八")

    def test_option_buckets(self):
        rows = [
            _raw(0, "四选一？ A.a B.b C.c D.d 答案：A"),
            _raw(1, "两个选项？ A.对 B.错 答案：B"),
            _raw(2, "没有选项的问题？答案：叙述"),
        ]
        stats = corpus_stats(clean_corpus(rows).kept)
        assert stats["With 4 options"] == 1
        assert stats["With 2 options"] == 1
        assert stats["Others"] == 1

    def test_unique_counts_duplicates_once(self):
        rows = [
            _raw(0, "相同问题？答案：A"),
            _raw(1, "相同问题！答案：B"),
            _raw(2, "不同问题？答案：C"),
        ]
        result = clean_corpus(rows)
        stats = corpus_stats(result.kept + result.duplicates)
        assert stats["Total items"] == 3
        assert stats["Unique items"] == 2


# hand-labeled shape fixtures for the category rules; the calc-density
# threshold (0.15) separates the two groups below
_CALC_ITEMS = [
    "某设备原值100万元，残值率5%，按直线法折旧10年，求年折旧额。答案：(100-100*5%)/10=9.5万元。",
    "企业债券面值1000元，票面利率6%，求年利息。答案：1000*6%=60元。",
    "某项目投资500万元，年净现金流120万元，求静态回收期。答案：500/120=4.17年。",
    "增值税销项税额计算：销售额200万元，税率13%。答案：200*0.13=26万元。",
    "股票A每股收益2元，市盈率15倍，求股价。答案：2*15=30元。",
    "年金现值：每年收款10万元共5年，折现率8%。答案：10*3.9927=39.93万元。",
    "求加权平均资本成本：权益成本10%权重60%，债务成本5%权重40%。答案：10%*0.6+5%*0.4=8%。",
    "存货周转率=营业成本/平均存货=900/150。答案：900/150=6次。",
    "流动比率=流动资产/流动负债=400/200。答案：400/200=2。",
    "复利终值：本金100元年利率10%存2年。答案：100*(1+10%)^2=121元。",
]
_KNOWLEDGE_ITEMS = [
    "什么是商誉？答案：商誉是企业并购中支付对价超过可辨认净资产公允价值的部分。",
    "简述货币政策的三大工具。答案：存款准备金率、再贴现率与公开市场操作。",
    "什么是市场风险？答案：市场风险指因市场价格波动导致损失的风险。",
    "简述审计独立性的含义。答案：审计独立性指审计师在实质与形式上均独立于被审计单位。",
    "什么是优先股？答案：优先股是在利润分红及剩余财产分配上优先于普通股的股份。",
    "简述财务报表的构成。答案：资产负债表、利润表、现金流量表、所有者权益变动表及附注。",
    "什么是内部控制？答案：内部控制是为合理保证经营合规、资产安全与报告可靠而实施的程序。",
    "简述通货膨胀的成因。答案：需求拉动、成本推动以及货币供应过度等因素。",
    "什么是资本公积？答案：资本公积是投资者出资超出注册资本的部分及其他来源形成的公积。",
    "简述保险的基本职能。答案：保险的基本职能是经济补偿与资金融通。",
]


class TestCategorize:
    def test_threshold_separates_labeled_fixture(self):
        calc = clean_corpus([_raw(i, t) for i, t in enumerate(_CALC_ITEMS)]).kept
        knowledge = clean_corpus([_raw(100 + i, t) for i, t in enumerate(_KNOWLEDGE_ITEMS)]).kept
        assert len(calc) == 10 and len(knowledge) == 10
        for item in calc:
            assert calc_density(item.explanation or item.answer_text) >= 0.15, item.question
            assert categorize(item) == CATEGORY_CALCULATION
        for item in knowledge:
            assert calc_density(item.explanation or item.answer_text) < 0.15, item.question
            assert categorize(item) == CATEGORY_KNOWLEDGE

    def test_true_false_is_logical(self):
        item = clean_corpus([_raw(0, "判断：久期越长利率风险越大。答案：对。利率敏感度随久期上升。")]).kept[0]
        assert categorize(item) == CATEGORY_LOGICAL

    def test_options_mean_reading(self):
        item = clean_corpus([_raw(0, "下列说法正确的是？ A.甲说法 B.乙说法 C.丙说法 D.丁说法 答案：B。乙说法符合准则。")]).kept[0]
        assert categorize(item) == CATEGORY_READING


class TestExportInstructions:
    def test_records_shapes(self):
        rows = [
            _raw(0, "什么是商誉？答案：并购溢价部分。"),
            _raw(1, "下列属于资产的是？ A.应收账款 B.应付账款 C.短期借款 D.实收资本 答案：A。应收账款由企业控制并带来利益。"),
            _raw(2, "判断：两个选项 答案：对"),
            _raw(3, "设备原值100万残值5%直线法10年求年折旧。答案：(100-5)/10=9.5万元。"),
        ]
        records, uncategorizable = export_instructions(clean_corpus(rows).kept)
        assert uncategorizable == []
        by_cat = {r.category: r for r in records}
        assert CATEGORY_KNOWLEDGE in by_cat
        assert CATEGORY_READING in by_cat
        assert CATEGORY_LOGICAL in by_cat
        assert CATEGORY_CALCULATION in by_cat
        reading = by_cat[CATEGORY_READING]
        assert "A.应收账款" in reading.input  # options stay inline
        calc = by_cat[CATEGORY_CALCULATION]
        assert "=" in calc.output  # worked explanation preferred

    def test_jsonl_dict_round_trip(self):
        item = clean_corpus([_raw(0, "甲？ A.x B.y 答案：A。解析文字。")]).kept[0]
        assert item_from_dict(item_to_dict(item)) == item
