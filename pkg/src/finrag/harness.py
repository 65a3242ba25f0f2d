"""Benchmark orchestration: dataset x model x mode runs with parallel
workers, an append-only JSONL record log, resumability, and report emission.

Workers only talk to the model gateway; a single dispatcher thread writes
records as they complete (fsynced in batches of 32) and aggregation replays
the log, so the final report is independent of worker count and completion
order, and a finished log reproduces the report without any model calls.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import FinragError
from .exam import CATEGORIES, ExamQuestion, QuestionCategory, load_dataset
from .gateway import Gateway, GatewayError, GenerationParams, handle_from_dict
from .prompts import MODE_ANSWER_ONLY, Demonstration, DemonstrationSet, build_prompt
from .scoring import (
    AccuracyReport,
    NoAnswerFound,
    ScoredPrediction,
    aggregate,
    format_report_table,
    parse_cot_answer,
    select_multi,
    select_single,
)

RECORDS_FILE = "records.jsonl"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
CONFIG_FILE = "config.json"
FSYNC_BATCH = 32


class ConfigError(FinragError):
    pass


class CorruptLog(FinragError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"records line {line_no}: {reason}")
        self.line_no = line_no


@dataclass(frozen=True)
class RunConfig:
    dataset_root: str
    subjects: tuple[str, ...]
    categories: dict[str, str]  # subject -> category name
    model_handle_id: str
    output_dir: str
    k_shots: int = 0
    mode: str = MODE_ANSWER_ONLY
    language: str | None = None
    split: str = "test"
    workers: int = 1
    seed: int = 0
    rbfl: bool = False
    embedder_handle_id: str | None = None
    pool_index_path: str | None = None
    pool_items_path: str | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.k_shots < 0:
            raise ConfigError("k_shots must be >= 0")
        if not self.rbfl and self.k_shots > 5:
            raise ConfigError("k_shots is capped at 5 when demonstrations come from the dev split")
        if self.rbfl and self.k_shots > 0 and not (self.pool_index_path and self.pool_items_path):
            raise ConfigError("rbfl runs need pool_index_path and pool_items_path")
        missing = [s for s in self.subjects if s not in self.categories]
        if missing:
            raise ConfigError(f"subjects without a category mapping: {missing}")

    def category_of(self, subject: str) -> QuestionCategory:
        name = self.categories[subject]
        if name not in CATEGORIES:
            raise ConfigError(f"unknown category {name!r} for subject {subject!r}")
        return CATEGORIES[name]


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _load_questions(cfg: RunConfig) -> list[ExamQuestion]:
    questions: list[ExamQuestion] = []
    for subject in cfg.subjects:
        questions.extend(load_dataset(cfg.dataset_root, subject, cfg.split, cfg.language))
    return questions


def _dev_demonstrations(cfg: RunConfig) -> dict[str, DemonstrationSet]:
    """Plain few-shot: the first k dev questions of each subject, file order."""
    demos: dict[str, DemonstrationSet] = {}
    for subject in cfg.subjects:
        examples: list[Demonstration] = []
        language = cfg.language or "zh"
        if cfg.k_shots > 0:
            dev = load_dataset(cfg.dataset_root, subject, "dev", cfg.language)
            examples = [Demonstration.from_question(q) for q in dev[: cfg.k_shots]]
            if dev and cfg.language is None:
                language = dev[0].language
        demos[subject] = DemonstrationSet(examples=examples, language=language, mode=cfg.mode)
    return demos


def _language_for(cfg: RunConfig, question: ExamQuestion) -> str:
    return cfg.language or question.language


def evaluate_question(
    cfg: RunConfig,
    gateway: Gateway,
    question: ExamQuestion,
    demos: Mapping[str, DemonstrationSet],
    rbfl_cfg=None,
) -> dict:
    """Answer one question and return its log record."""
    category = cfg.category_of(question.subject)
    started = time.perf_counter()
    record: dict = {
        "question_id": question.id,
        "subject": question.subject,
        "mode": cfg.mode,
        "gold": sorted(question.answer_set) if question.answer_set else None,
    }
    try:
        if rbfl_cfg is not None:
            from .rbfl import answer_with_rbfl

            per_question = dataclasses.replace(
                rbfl_cfg,
                mode=cfg.mode,
                language=_language_for(cfg, question),
                multi_answer=category.multi_answer,
            )
            prediction, shots, prompt = answer_with_rbfl(per_question, gateway, question)
            record["shots"] = [{"ref_id": item.id, "score": score} for item, score in shots]
            record["prompt_hash"] = _prompt_hash(prompt)
            if prediction.per_option_log_prob:
                record["score_map"] = prediction.per_option_log_prob
            if prediction.raw_output is not None:
                record["raw_output"] = prediction.raw_output
            record["predicted"] = sorted(prediction.predicted_set)
            record["refused"] = prediction.refused
        else:
            dset = demos[question.subject]
            if dset.language != _language_for(cfg, question):
                dset = dataclasses.replace(dset, language=_language_for(cfg, question))
            prompt = build_prompt(dset, question)
            record["prompt_hash"] = _prompt_hash(prompt)
            if cfg.mode == MODE_ANSWER_ONLY:
                result = gateway.score_candidates(cfg.model_handle_id, prompt, question.letters)
                record["score_map"] = dict(result.log_probs)
                predicted = (
                    select_multi(result.log_probs)
                    if category.multi_answer
                    else frozenset(select_single(result.log_probs))
                )
                record["predicted"] = sorted(predicted)
                record["refused"] = False
            else:
                raw = gateway.generate(
                    cfg.model_handle_id, prompt, GenerationParams(max_tokens=2048)
                )
                record["raw_output"] = raw
                try:
                    predicted = parse_cot_answer(raw, question.letters, multi=category.multi_answer)
                    record["predicted"] = sorted(predicted)
                    record["refused"] = False
                except NoAnswerFound:
                    record["predicted"] = []
                    record["refused"] = True
    except GatewayError as exc:
        record["predicted"] = []
        record["refused"] = False
        record["error"] = str(exc)
    record["latency_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
    record["ts"] = time.time()
    return record


def _build_rbfl_cfg(cfg: RunConfig, gateway: Gateway):
    if not cfg.rbfl or cfg.k_shots == 0:
        return None
    from .corpus import item_from_dict, read_jsonl
    from .rbfl import RbflConfig, ShotPool
    from .vectors import VectorIndex

    index = VectorIndex.load(cfg.pool_index_path)
    items = {item.id: item for item in map(item_from_dict, read_jsonl(cfg.pool_items_path))}
    pool = ShotPool(index=index, items=items)
    if cfg.embedder_handle_id is None:
        raise ConfigError("rbfl runs need embedder_handle_id")
    return RbflConfig(
        k_shots=cfg.k_shots,
        pool=pool,
        embedder=cfg.embedder_handle_id,
        answer_model=cfg.model_handle_id,
        mode=cfg.mode,
        language=cfg.language or "zh",
    )


def read_records(output_dir: str | Path) -> list[dict]:
    """Read and validate the record log; duplicate ids or bad JSON are fatal."""
    path = Path(output_dir) / RECORDS_FILE
    if not path.is_file():
        return []
    records: list[dict] = []
    seen: set[str] = set()
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(line_no, f"invalid JSON: {exc}") from exc
        qid = record.get("question_id")
        if not qid:
            raise CorruptLog(line_no, "record lacks question_id")
        if qid in seen:
            raise CorruptLog(line_no, f"duplicate question_id {qid!r}")
        seen.add(qid)
        records.append(record)
    return records


def replay_report(cfg: RunConfig, records: Sequence[dict], questions: Sequence[ExamQuestion]) -> AccuracyReport:
    """Rebuild the accuracy report from log records alone (no model calls)."""
    from .scoring import random_baselines

    categories = {s: cfg.category_of(s) for s in cfg.subjects}
    if not records:
        report = AccuracyReport()
        report.baselines = random_baselines(categories)
        return report
    by_id = {q.id: q for q in questions}
    predictions = []
    errors = 0
    refusals = 0
    for record in records:
        qid = record["question_id"]
        if qid not in by_id:
            raise CorruptLog(0, f"record for unknown question {qid!r}")
        has_error = "error" in record
        errors += int(has_error)
        refused = bool(record.get("refused"))
        refusals += int(refused)
        predictions.append(
            ScoredPrediction(
                question_id=qid,
                mode=record.get("mode", cfg.mode),
                predicted_set=frozenset(record.get("predicted", [])),
                per_option_log_prob=record.get("score_map"),
                raw_output=record.get("raw_output"),
                refused=refused or has_error or not record.get("predicted"),
            )
        )
    gold = [by_id[r["question_id"]] for r in records]
    report = aggregate(predictions, gold, categories)
    report.refusals = refusals
    report.errors = errors
    return report


def _write_report(cfg: RunConfig, report: AccuracyReport, complete: bool) -> None:
    out = Path(cfg.output_dir)
    payload = report.to_dict()
    payload["complete"] = complete
    payload["model"] = cfg.model_handle_id
    payload["mode"] = cfg.mode
    payload["k_shots"] = cfg.k_shots
    payload["seed"] = cfg.seed
    (out / REPORT_JSON).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out / REPORT_TXT).write_text(format_report_table({cfg.model_handle_id: report}), encoding="utf-8")


def snapshot_config(cfg: RunConfig, gateway: Gateway, handle_ids: Sequence[str]) -> dict:
    """JSON-able snapshot of the run plus the handles it needs, for resume."""
    models = {}
    for hid in handle_ids:
        handle = gateway.resolve(hid)
        models[hid] = {
            "kind": handle.kind,
            "endpoint": handle.endpoint,
            "max_in_flight": handle.max_in_flight,
            "timeout_ms": handle.timeout_ms,
            "retry": {
                "max_attempts": handle.retry.max_attempts,
                "backoff_base_ms": handle.retry.backoff_base_ms,
            },
            "options": handle.options,
        }
    return {"run": dataclasses.asdict(cfg), "models": models}


def config_from_snapshot(snapshot: Mapping) -> tuple[RunConfig, Gateway]:
    run = dict(snapshot["run"])
    run["subjects"] = tuple(run["subjects"])
    cfg = RunConfig(**run)
    gateway = Gateway(handle_from_dict(hid, spec) for hid, spec in snapshot["models"].items())
    return cfg, gateway


def run_benchmark(
    cfg: RunConfig,
    gateway: Gateway,
    limit: int | None = None,
    fresh: bool = True,
) -> AccuracyReport:
    """Evaluate every selected question exactly once and emit the report.

    ``limit`` stops after that many records (for smoke runs and interrupt
    simulation); the run can then be completed with :func:`resume_run`.
    With ``fresh`` unset, existing records are kept and only missing
    question ids are evaluated.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    handle_ids = [cfg.model_handle_id] + ([cfg.embedder_handle_id] if cfg.embedder_handle_id else [])
    (out / CONFIG_FILE).write_text(
        json.dumps(snapshot_config(cfg, gateway, handle_ids), ensure_ascii=False, indent=2),
        encoding="utf-8",
    )

    records_path = out / RECORDS_FILE
    if fresh and records_path.exists():
        records_path.unlink()
    existing = read_records(cfg.output_dir)
    done = {record["question_id"] for record in existing}

    questions = _load_questions(cfg)
    known_ids = {q.id for q in questions}
    stray = done - known_ids
    if stray:
        raise CorruptLog(0, f"records for unknown questions: {sorted(stray)[:3]}")

    todo = [q for q in questions if q.id not in done]
    if limit is not None:
        todo = todo[: max(0, limit - len(done))]

    rbfl_cfg = _build_rbfl_cfg(cfg, gateway)
    demos = {} if rbfl_cfg is not None else _dev_demonstrations(cfg)

    new_records: list[dict] = []
    if todo:
        with records_path.open("a", encoding="utf-8") as fh:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [
                    pool.submit(evaluate_question, cfg, gateway, q, demos, rbfl_cfg) for q in todo
                ]
                unsynced = 0
                for future in as_completed(futures):
                    record = future.result()
                    fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
                    new_records.append(record)
                    unsynced += 1
                    if unsynced >= FSYNC_BATCH:
                        fh.flush()
                        os.fsync(fh.fileno())
                        unsynced = 0
                fh.flush()
                os.fsync(fh.fileno())

    all_records = existing + new_records
    report = replay_report(cfg, all_records, questions)
    _write_report(cfg, report, complete=len(all_records) == len(questions))
    return report


def resume_run(output_dir: str | Path) -> AccuracyReport:
    """Complete a partial run: only unanswered question ids are re-evaluated."""
    out = Path(output_dir)
    config_path = out / CONFIG_FILE
    if not config_path.is_file():
        raise ConfigError(f"{output_dir} has no {CONFIG_FILE}; nothing to resume")
    cfg, gateway = config_from_snapshot(json.loads(config_path.read_text(encoding="utf-8")))
    return run_benchmark(cfg, gateway, fresh=False)
