"""Command-line entry points: evaluation runs, corpus tooling, indices,
ingestion, fetching, factual-QA tooling, and the HTTP service."""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import finfact as finfact_mod
from .docstore import (
    DirectoryAdapter,
    DocStore,
    Document,
    Fetcher,
    HttpAdapter,
    read_documents_jsonl,
)
from .gateway import Gateway, _load_config_file, handle_from_dict
from .harness import ConfigError, RunConfig, resume_run, run_benchmark
from .prompts import MODE_ANSWER_ONLY, MODE_COT
from .textindex import TextIndex
from .vectors import VectorIndex

logger = logging.getLogger(__name__)

_MODE_ALIASES = {"ao": MODE_ANSWER_ONLY, "cot": MODE_COT, MODE_ANSWER_ONLY: MODE_ANSWER_ONLY, MODE_COT: MODE_COT}


def _gateway_from_config(config: dict) -> Gateway:
    models = config.get("models", {})
    if not models:
        raise ConfigError("config lacks a [models] section")
    return Gateway(handle_from_dict(hid, spec) for hid, spec in models.items())


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
@click.option("--trace", is_flag=True, help="Log upstream request/response bodies (keys redacted).")
def main(verbose: bool, trace: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, stream=sys.stderr)
    if trace:
        import finrag.gateway as gateway_mod

        gateway_mod.TRACE_BODIES = True


# Evaluation -------------------------------------------------------------------


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--workers", type=int, default=None)
@click.option("--resume", is_flag=True)
@click.option("--mode", type=click.Choice(sorted(_MODE_ALIASES)), default=None)
@click.option("--shots", type=int, default=None)
@click.option("--rbfl", is_flag=True)
@click.option("--limit", type=int, default=None)
def eval_cmd(config_path, workers, resume, mode, shots, rbfl, limit) -> None:
    """Run (or resume) a benchmark described by a TOML/JSON config."""
    config = _load_config_file(config_path)
    run = dict(config.get("run", {}))
    if resume:
        report = resume_run(run["output_dir"])
        click.echo(report.to_json())
        return
    if workers is not None:
        run["workers"] = workers
    if mode is not None:
        run["mode"] = _MODE_ALIASES[mode]
    if shots is not None:
        run["k_shots"] = shots
    if rbfl:
        run["rbfl"] = True
    model = run.pop("model", None)
    cfg = RunConfig(
        dataset_root=run["dataset_root"],
        subjects=tuple(run["subjects"]),
        categories=dict(config.get("categories", {})),
        model_handle_id=model or run["model_handle_id"],
        output_dir=run["output_dir"],
        k_shots=int(run.get("k_shots", 0)),
        mode=run.get("mode", MODE_ANSWER_ONLY),
        language=run.get("language"),
        split=run.get("split", "test"),
        workers=int(run.get("workers", 1)),
        seed=int(run.get("seed", 0)),
        rbfl=bool(run.get("rbfl", False)),
        embedder_handle_id=run.get("embedder"),
        pool_index_path=run.get("pool_index_path"),
        pool_items_path=run.get("pool_items_path"),
    )
    gateway = _gateway_from_config(config)
    report = run_benchmark(cfg, gateway, limit=limit)
    click.echo(report.to_json())


# Corpus -----------------------------------------------------------------------


@main.group()
def corpus() -> None:
    """FinCorpus-style cleaning, statistics, and instruction export."""


def _load_rules(rules_path) -> corpus_mod.CleanRules:
    if rules_path is None:
        return corpus_mod.CleanRules.default()
    return corpus_mod.CleanRules.from_dict(json.loads(Path(rules_path).read_text(encoding="utf-8")))


@corpus.command("clean")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--rejects", "rejects_path", default=None, type=click.Path())
@click.option("--rules", "rules_path", default=None, type=click.Path(exists=True))
def corpus_clean(input_path, output_path, rejects_path, rules_path) -> None:
    result = corpus_mod.clean_corpus(corpus_mod.read_jsonl(input_path), _load_rules(rules_path))
    corpus_mod.write_jsonl(output_path, (corpus_mod.item_to_dict(i) for i in result.kept))
    rejects_path = rejects_path or str(Path(output_path).with_suffix(".rejects.jsonl"))
    rows = [{"record": record, "reason": reason} for record, reason in result.rejected]
    rows += [{"record": item.as_raw_record(), "reason": "duplicate"} for item in result.duplicates]
    corpus_mod.write_jsonl(rejects_path, rows)
    click.echo(
        f"kept={len(result.kept)} duplicates={len(result.duplicates)} rejected={len(result.rejected)}"
    )


@corpus.command("stats")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--rules", "rules_path", default=None, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def corpus_stats_cmd(input_path, rules_path, as_json) -> None:
    result = corpus_mod.clean_corpus(corpus_mod.read_jsonl(input_path), _load_rules(rules_path))
    stats = corpus_mod.corpus_stats(result.kept + result.duplicates)
    if as_json:
        click.echo(json.dumps(stats, ensure_ascii=False, indent=2))
    else:
        click.echo(corpus_mod.format_stats(stats), nl=False)


@corpus.command("export-instructions")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
def corpus_export(input_path, output_path) -> None:
    items = [corpus_mod.item_from_dict(r) for r in corpus_mod.read_jsonl(input_path)]
    records, uncategorizable = corpus_mod.export_instructions(items)
    corpus_mod.write_jsonl(output_path, (r.to_dict() for r in records))
    click.echo(f"exported={len(records)} uncategorizable={len(uncategorizable)}")


# Vector index -----------------------------------------------------------------


@main.group()
def index() -> None:
    """Build and query the exact cosine-similarity index."""


@index.command("build")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True), help="Cleaned corpus items JSONL.")
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--models", "models_path", required=True, type=click.Path(exists=True))
@click.option("--embedder", required=True, help="Embedding handle id from the models config.")
def index_build(input_path, output_path, models_path, embedder) -> None:
    gateway = _gateway_from_config(_load_config_file(models_path))
    items = [corpus_mod.item_from_dict(r) for r in corpus_mod.read_jsonl(input_path)]
    vectors = gateway.embed(embedder, [item.question for item in items])
    built = VectorIndex.build((item.id, vec) for item, vec in zip(items, vectors))
    built.save(output_path)
    click.echo(f"indexed={len(built)} dim={built.dimension} -> {output_path}")


@index.command("query")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--models", "models_path", required=True, type=click.Path(exists=True))
@click.option("--embedder", required=True)
@click.option("--query", required=True)
@click.option("-k", type=int, default=5)
def index_query(index_path, models_path, embedder, query, k) -> None:
    gateway = _gateway_from_config(_load_config_file(models_path))
    built = VectorIndex.load(index_path)
    vec = gateway.embed(embedder, [query])[0]
    for hit in built.top_k(vec, k=k):
        click.echo(f"{hit.score:.4f}\t{hit.ref_id}")


# Documents: ingest / search / fetch --------------------------------------------


@main.command("ingest")
@click.argument("jsonl_path", type=click.Path(exists=True))
@click.option("--store", "store_path", default="finrag.db", type=click.Path())
@click.option("--index-dir", "index_dir", default=None, type=click.Path())
def ingest_cmd(jsonl_path, store_path, index_dir) -> None:
    """Ingest a JSONL document file into the store (and text index)."""
    store = DocStore(store_path)
    text_index = TextIndex.load(index_dir) if index_dir and Path(index_dir, "text_index.json").exists() else TextIndex()
    new = skipped = 0
    for doc in read_documents_jsonl(jsonl_path):
        if store.has_document(doc.id):
            skipped += 1
            continue
        store.ingest(doc)
        if doc.id not in text_index:
            text_index.index_document(doc)
        new += 1
    if index_dir:
        text_index.save(index_dir)
    click.echo(json.dumps({"new": new, "skipped": skipped}))


@main.command("search")
@click.option("--text", "query", required=True)
@click.option("--index-dir", "index_dir", required=True, type=click.Path(exists=True))
@click.option("-k", type=int, default=10)
def search_cmd(query, index_dir, k) -> None:
    text_index = TextIndex.load(index_dir)
    for hit in text_index.search(query, k=k, now=time.time()):
        click.echo(f"{hit.final_score:.4f}\t{hit.doc_id}\t(match {hit.match_score:.4f} x recency {hit.recency_factor:.4f})")


def fetcher_from_config(name: str, spec: dict) -> Fetcher:
    adapter_kind = spec.get("adapter", "directory")
    if adapter_kind == "directory":
        adapter = DirectoryAdapter(spec["path"])
    elif adapter_kind == "http":
        adapter = HttpAdapter(spec["endpoint"])
    else:
        raise ConfigError(f"fetcher {name}: unknown adapter {adapter_kind!r}")
    return Fetcher(
        name=name,
        kind=spec.get("kind", "periodic"),
        source_type=spec.get("source_type", "news"),
        adapter=adapter,
        schedule_s=spec.get("schedule_s"),
    )


@main.command("fetch")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--source", required=True)
@click.option("--query", default=None)
@click.option("--limit", type=int, default=10)
@click.option("--store", "store_path", default="finrag.db", type=click.Path())
def fetch_cmd(config_path, source, query, limit, store_path) -> None:
    """Run one fetcher: periodic listing pull, or realtime with --query."""
    from .docstore import run_periodic, run_realtime

    config = _load_config_file(config_path)
    spec = config.get("fetchers", {}).get(source)
    if spec is None:
        raise ConfigError(f"no fetcher named {source!r} in {config_path}")
    fetcher = fetcher_from_config(source, spec)
    store = DocStore(store_path)
    if fetcher.kind == "realtime":
        if not query:
            raise ConfigError("realtime fetchers need --query")
        docs = run_realtime(fetcher, store, query, limit)
        click.echo(json.dumps({"returned": [d.id for d in docs]}, ensure_ascii=False))
    else:
        report = run_periodic(fetcher, store)
        click.echo(json.dumps(report.to_dict()))


# FinFact ------------------------------------------------------------------------


@main.group()
def finfact() -> None:
    """Factual-QA generation, judging, and win-rate reports."""


@finfact.command("generate")
@click.option("--articles", "articles_path", required=True, type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(finfact_mod.KINDS), required=True)
@click.option("--models", "models_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_id", required=True)
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--category", default="financial")
@click.option("--year", type=int, default=0)
def finfact_generate(articles_path, kind, models_path, model_id, output_path, category, year) -> None:
    gateway = _gateway_from_config(_load_config_file(models_path))
    items: list[finfact_mod.FactQA] = []
    for doc in read_documents_jsonl(articles_path):
        try:
            items.extend(finfact_mod.generate_factqa(doc, kind, gateway, model_id, category, year))
        except finfact_mod.UnparseableGeneration as exc:
            logger.warning("skipping article: %s", exc)
    corpus_mod.write_jsonl(output_path, (item.to_dict() for item in items))
    click.echo(f"generated={len(items)}")


@finfact.command("judge")
@click.option("--qa", "qa_path", required=True, type=click.Path(exists=True))
@click.option("--responses-a", required=True, type=click.Path(exists=True))
@click.option("--responses-b", required=True, type=click.Path(exists=True))
@click.option("--system-a", default="A")
@click.option("--system-b", default="B")
@click.option("--models", "models_path", required=True, type=click.Path(exists=True))
@click.option("--judge", "judge_id", required=True)
@click.option("--articles", "articles_path", default=None, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
def finfact_judge(qa_path, responses_a, responses_b, system_a, system_b, models_path, judge_id, articles_path, output_path) -> None:
    gateway = _gateway_from_config(_load_config_file(models_path))
    qa_items = [finfact_mod.FactQA.from_dict(r) for r in corpus_mod.read_jsonl(qa_path)]
    resp_a = {r["qa_id"]: r["text"] for r in corpus_mod.read_jsonl(responses_a)}
    resp_b = {r["qa_id"]: r["text"] for r in corpus_mod.read_jsonl(responses_b)}
    articles = {d.id: d for d in read_documents_jsonl(articles_path)} if articles_path else {}
    verdicts = []
    for qa in qa_items:
        if qa.id not in resp_a or qa.id not in resp_b:
            logger.warning("missing responses for %s, skipped", qa.id)
            continue
        article = articles.get(qa.source_article_id)
        verdicts.append(
            finfact_mod.judge_pairwise(
                qa,
                resp_a[qa.id],
                resp_b[qa.id],
                gateway,
                judge_id,
                system_a=system_a,
                system_b=system_b,
                article_text=(article.body or article.summary) if article else None,
            )
        )
    corpus_mod.write_jsonl(output_path, (v.to_dict() for v in verdicts))
    click.echo(f"judged={len(verdicts)}")


@finfact.command("report")
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True))
@click.option("--system", required=True)
@click.option("--output", "output_path", default=None, type=click.Path())
@click.option("--csv", "csv_path", default=None, type=click.Path())
def finfact_report(verdicts_path, system, output_path, csv_path) -> None:
    verdicts = [finfact_mod.JudgeVerdict.from_dict(r) for r in corpus_mod.read_jsonl(verdicts_path)]
    report = finfact_mod.win_rate_report(verdicts, system)
    payload = json.dumps(report, ensure_ascii=False, indent=2)
    if output_path:
        Path(output_path).write_text(payload + "\n", encoding="utf-8")
    if csv_path:
        Path(csv_path).write_text(finfact_mod.win_rate_csv(verdicts, system), encoding="utf-8")
    click.echo(payload)


# Service ------------------------------------------------------------------------


@main.command("serve")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve_cmd(config_path, host, port) -> None:
    """Run the QA HTTP service from a TOML/JSON config."""
    import uvicorn

    from .agents import QaPipeline
    from .service import ServiceState, create_app

    config = _load_config_file(config_path)
    svc = config.get("service", {})
    gateway = _gateway_from_config(config)
    store = DocStore(svc.get("store_path", "finrag.db"))
    text_index = TextIndex()
    for doc in store.documents():
        text_index.index_document(doc)
    fetchers = [fetcher_from_config(name, spec) for name, spec in config.get("fetchers", {}).items()]
    pipeline = QaPipeline(
        store=store,
        text_index=text_index,
        gateway=gateway,
        chat_model=svc.get("chat_model", "chat"),
        embed_model=svc.get("embed_model", "embed"),
        recall_k=int(svc.get("recall_k", 20)),
        rerank_k=int(svc.get("rerank_k", 8)),
        budget_chars=int(svc.get("budget_chars", 6000)),
        realtime_fetchers=[f for f in fetchers if f.kind == "realtime"],
    )
    for path in svc.get("seed_documents", []):
        for doc in read_documents_jsonl(path):
            if not store.has_document(doc.id):
                pipeline.ingest_document(doc)
    token = os.environ.get(svc.get("token_env", "FINRAG_TOKEN")) or None
    app = create_app(ServiceState(pipeline=pipeline, token=token))
    uvicorn.run(app, host=host or svc.get("host", "127.0.0.1"), port=port or int(svc.get("port", 8777)))


if __name__ == "__main__":
    main()
