import pytest

from finrag.exam import ExamQuestion
from finrag.gateway import Gateway, ModelHandle


@pytest.fixture
def gateway() -> Gateway:
    return Gateway()


def make_question(
    qid: str = "q1",
    stem: str = "下列哪项正确？",
    options: dict | None = None,
    answer: str = "A",
    subject: str = "demo",
    split: str = "val",
    language: str = "zh",
    explanation: str | None = None,
) -> ExamQuestion:
    return ExamQuestion(
        id=qid,
        subject=subject,
        language=language,
        stem=stem,
        options=options or {"A": "甲", "B": "乙", "C": "丙", "D": "丁"},
        answer_set=frozenset(answer) if answer else frozenset(),
        explanation=explanation,
        split=split,
    )


def scored_handle(hid: str, stub: str, **options) -> ModelHandle:
    return ModelHandle(id=hid, kind="scored_completion", endpoint=f"stub:{stub}", options=options)


def chat_handle(hid: str, stub: str, **options) -> ModelHandle:
    return ModelHandle(id=hid, kind="chat_generation", endpoint=f"stub:{stub}", options=options)


def embed_handle(hid: str, stub: str = "hash_embed", **options) -> ModelHandle:
    return ModelHandle(id=hid, kind="embedding", endpoint=f"stub:{stub}", options=options)
