import pytest
from hypothesis import given
from hypothesis import strategies as st

from finrag.exam import (
    CATEGORIES,
    EmptyAnswer,
    ExamQuestion,
    InvalidAnswerLetter,
    MalformedRow,
    MissingFile,
    NonLetterCharacter,
    QuestionCategory,
    load_dataset,
    normalize_answer,
    write_dataset,
)

from .conftest import make_question


class TestNormalizeAnswer:
    def test_separators_and_case(self):
        assert normalize_answer("a, c") == {"A", "C"}

    def test_single_letter(self):
        assert normalize_answer("B") == {"B"}

    def test_dedup(self):
        assert normalize_answer("ABBA") == {"A", "B"}

    def test_chinese_separator(self):
        assert normalize_answer("A、C、D") == {"A", "C", "D"}

    def test_empty(self):
        with pytest.raises(EmptyAnswer):
            normalize_answer("  ,  ")

    def test_non_letter(self):
        with pytest.raises(NonLetterCharacter):
            normalize_answer("A1")

    def test_letter_outside_range(self):
        with pytest.raises(InvalidAnswerLetter):
            normalize_answer("F")

    @given(st.sets(st.sampled_from("ABCDE"), min_size=1, max_size=5), st.randoms())
    def test_roundtrip_any_ordering(self, letters, rnd):
        shuffled = list(letters) * 2
        rnd.shuffle(shuffled)
        raw = ", ".join(shuffled).lower()
        assert normalize_answer(raw) == letters


class TestQuestionInvariants:
    def test_answer_must_be_subset(self):
        with pytest.raises(InvalidAnswerLetter):
            make_question(options={"A": "x", "B": "y"}, answer="C")

    def test_options_contiguous(self):
        with pytest.raises(ValueError):
            ExamQuestion(
                id="q",
                subject="s",
                language="zh",
                stem="stem",
                options={"A": "x", "C": "y"},
                answer_set=frozenset("A"),
                split="val",
            )

    def test_val_needs_answer(self):
        with pytest.raises(ValueError):
            make_question(answer="", split="val")

    def test_test_split_may_omit_answer(self):
        q = make_question(answer="", split="test")
        assert q.answer_set == frozenset()

    def test_category_table(self):
        assert CATEGORIES["CPA-SA"].option_count == 4
        assert CATEGORIES["CPA-MA"].multi_answer
        assert CATEGORIES["CFA-L1"].option_count == 3
        assert not CATEGORIES["CFA-L2"].multi_answer

    def test_canonical_category_mismatch_rejected(self):
        with pytest.raises(ValueError):
            QuestionCategory("CPA-SA", 3, False)

    def test_random_accuracy(self):
        assert CATEGORIES["CPA-SA"].random_accuracy == pytest.approx(0.25)
        assert CATEGORIES["CPA-MA"].random_accuracy == pytest.approx(1 / 11)
        assert CATEGORIES["CFA-L1"].random_accuracy == pytest.approx(1 / 3)


@pytest.fixture
def dataset_root(tmp_path):
    questions = [
        make_question("acc-1", "第一题？", answer="A", split="dev", subject="accounting", explanation="因为是A。"),
        make_question("acc-2", "第二题？", answer="AC", split="dev", subject="accounting", explanation="多选AC。"),
        make_question("acc-3", "第三题？", answer="B", split="dev", subject="accounting", explanation="选B。"),
        make_question("acc-4", "第四题？", answer="C", split="dev", subject="accounting", explanation="选C。"),
        make_question("acc-5", "第五题？", answer="D", split="dev", subject="accounting", explanation="选D。"),
    ]
    write_dataset(tmp_path, "accounting", "dev", questions)
    return tmp_path


class TestLoadDataset:
    def test_roundtrip_is_byte_identical(self, dataset_root):
        path = dataset_root / "dev" / "accounting_dev.csv"
        original = path.read_bytes()
        questions = load_dataset(dataset_root, "accounting", "dev")
        write_dataset(dataset_root, "accounting", "dev", questions)
        assert path.read_bytes() == original

    def test_field_mapping(self, dataset_root):
        questions = load_dataset(dataset_root, "accounting", "dev")
        assert len(questions) == 5
        assert questions[0].answer_set == {"A"}
        assert questions[0].explanation == "因为是A。"
        assert questions[1].answer_set == {"A", "C"}

    def test_order_preserving_and_pure(self, dataset_root):
        first = load_dataset(dataset_root, "accounting", "dev")
        second = load_dataset(dataset_root, "accounting", "dev")
        assert [q.id for q in first] == ["acc-1", "acc-2", "acc-3", "acc-4", "acc-5"]
        assert first == second

    def test_answers_within_options(self, dataset_root):
        for q in load_dataset(dataset_root, "accounting", "dev"):
            assert q.answer_set <= set(q.options)

    def test_missing_file(self, dataset_root):
        with pytest.raises(MissingFile):
            load_dataset(dataset_root, "tax", "dev")

    def test_malformed_header(self, tmp_path):
        target = tmp_path / "dev"
        target.mkdir()
        (target / "x_dev.csv").write_text("id,question\n", encoding="utf-8")
        with pytest.raises(MalformedRow) as err:
            load_dataset(tmp_path, "x", "dev")
        assert err.value.row_no == 1

    def test_dev_requires_explanation(self, tmp_path):
        target = tmp_path / "dev"
        target.mkdir()
        (target / "x_dev.csv").write_text(
            'id,question,A,B,C,D,answer,explanation\n"1","q?","a","b","c","d","A",""\n',
            encoding="utf-8",
        )
        with pytest.raises(MalformedRow):
            load_dataset(tmp_path, "x", "dev")

    def test_bad_answer_letter(self, tmp_path):
        target = tmp_path / "val"
        target.mkdir()
        (target / "x_val.csv").write_text(
            'id,question,A,B,C,D,answer,explanation\n"1","q?","a","b","","","C",""\n',
            encoding="utf-8",
        )
        with pytest.raises(MalformedRow):
            load_dataset(tmp_path, "x", "val")

    def test_bom_tolerated(self, tmp_path):
        target = tmp_path / "test"
        target.mkdir()
        content = 'id,question,A,B,C,D,answer,explanation\n"1","q?","a","b","c","","",""\n'
        (target / "x_test.csv").write_bytes(b"\xef\xbb\xbf" + content.encode("utf-8"))
        questions = load_dataset(tmp_path, "x", "test")
        assert questions[0].letters == ["A", "B", "C"]

    def test_cfa_three_options_and_language(self, tmp_path):
        questions = [
            make_question(
                "cfa-1",
                "Which?",
                options={"A": "x", "B": "y", "C": "z"},
                answer="B",
                split="val",
                subject="cfa_econ",
                language="en",
            )
        ]
        write_dataset(tmp_path, "cfa_econ", "val", questions)
        loaded = load_dataset(tmp_path, "cfa_econ", "val")
        assert loaded[0].language == "en"
        assert loaded[0].letters == ["A", "B", "C"]
