"""Command line entry point.

Option values resolve in three layers: a TOML config file supplies
defaults, command line flags override the file, and CONVSEARCH_* environment
variables override both. Exit codes: 0 success, 1 validation error, 2 I/O
or provider failure.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import click

from . import __version__
from .formats import (
    LineError,
    read_conversations,
    read_corpus,
    read_qrels,
    read_run,
    write_conversations,
    write_run,
)
from .harness import (
    AlwaysPolicy,
    BM25Retriever,
    LexicalPolicy,
    NeverPolicy,
    ThresholdPolicy,
    read_scores,
    run_proactive,
    run_reactive,
)
from .index import InvertedIndex
from .ingest import (
    IngestReport,
    SplitConfig,
    TitleResolver,
    compute_stats,
    ingest_threads,
    make_splits,
    read_threads,
)
from .lmgr import (
    HashEmbeddingProvider,
    HttpEmbeddingProvider,
    HttpLlmProvider,
    LmgrRetriever,
    OverlapMockLlm,
    ProviderError,
    build_grounding_corpus,
)
from .metrics import evaluate_proactive, evaluate_reactive
from .models import ValidationError
from .pooling import build_pools, read_pools, write_pools
from .service import (
    AnnotationState,
    create_app,
    export_qrels_file,
    read_judgment_log,
)

ENV_PREFIX = "CONVSEARCH_"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def resolve_option(name: str, flag_value, config: dict, default=None):
    """config file < command line flag < environment variable."""
    value = config.get(name, default)
    if flag_value is not None:
        value = flag_value
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        value = env
    return value


@click.group()
@click.version_option(version=__version__, prog_name="convsearch")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML config file with default option values.")
@click.option("--jobs", type=int, default=None, help="Parallelism degree (default: cores).")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None, jobs: int | None) -> None:
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path)
    ctx.obj["jobs"] = jobs or os.cpu_count() or 1


@cli.command()
@click.option("--threads", "threads_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--test-min-score", type=int, default=None)
@click.option("--dev-size", type=int, default=0)
@click.option("--test-size", type=int, default=0)
@click.option("--future-dev-size", type=int, default=0)
@click.pass_context
def ingest(ctx, threads_path, corpus_path, out_dir, seed, test_min_score,
           dev_size, test_size, future_dev_size):
    """Filter raw threads, map links against the corpus, emit splits."""
    config = ctx.obj["config"]
    seed = int(resolve_option("seed", seed, config, 13))
    test_min_score = int(resolve_option("test_min_score", test_min_score, config, 20))

    resolver = TitleResolver(read_corpus(corpus_path))
    report = IngestReport()
    dated = list(
        ingest_threads(
            read_threads(threads_path), resolver, report=report, jobs=ctx.obj["jobs"]
        )
    )
    split_config = SplitConfig(
        dev_size=dev_size,
        test_size=test_size,
        future_dev_size=future_dev_size,
        test_min_score=test_min_score,
        seed=seed,
    )
    splits = make_splits(dated, split_config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, convs in splits.as_dict().items():
        write_conversations((c.conversation for c in convs), out / f"{name}.jsonl")
    summary = {
        "threads_read": report.threads_read,
        "threads_rejected": report.threads_rejected,
        "chains_enumerated": report.chains_enumerated,
        "conversations_kept": report.conversations_kept,
        "conversations_rejected": report.conversations_rejected,
        "splits": {name: len(convs) for name, convs in splits.as_dict().items()},
    }
    click.echo(json.dumps(summary, indent=2))


@cli.command()
@click.option("--split", "split_path", required=True, type=click.Path(exists=True))
def stats(split_path):
    """Dataset statistics for one split, as a JSON object."""
    errors: list[LineError] = []
    conversations = list(read_conversations(split_path, errors))
    if errors:
        for e in errors:
            click.echo(f"line {e.line_number}: {e.message}", err=True)
        raise ValidationError(f"{len(errors)} malformed lines in {split_path}")
    click.echo(json.dumps(compute_stats(conversations).to_dict(), indent=2))


@cli.group()
def index():
    """Build or query the BM25 inverted index."""


@index.command("build")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--k1", type=float, default=1.2, show_default=True)
@click.option("--b", type=float, default=0.75, show_default=True)
def index_build(corpus_path, out_dir, k1, b):
    idx = InvertedIndex.build(read_corpus(corpus_path), k1=k1, b=b)
    idx.save(out_dir)
    click.echo(json.dumps({
        "documents": idx.doc_count,
        "terms": len(idx.postings),
        "avg_doc_length": idx.avg_doc_length,
    }))


@index.command("search")
@click.option("--index", "index_dir", required=True, type=click.Path(exists=True))
@click.option("--query-file", required=True, type=click.Path(exists=True))
@click.option("-k", type=int, default=100, show_default=True)
@click.option("--json", "as_json", is_flag=True, default=False)
def index_search(index_dir, query_file, k, as_json):
    idx = InvertedIndex.load(index_dir)
    query = Path(query_file).read_text(encoding="utf-8")
    results = idx.search(query, k)
    if as_json:
        click.echo(json.dumps([{"doc_id": d, "score": s} for d, s in results]))
    else:
        for rank, (doc_id, score) in enumerate(results, 1):
            click.echo(f"{rank}\t{doc_id}\t{score}")


def _make_retriever(mode, index_dir, corpus_path, mock, config, n, ground_k, cache_dir):
    if mode == "bm25":
        if not index_dir:
            raise ValidationError("--retriever bm25 requires --index")
        return BM25Retriever(InvertedIndex.load(index_dir))
    if not corpus_path:
        raise ValidationError("--retriever lmgr requires --corpus")
    corpus = list(read_corpus(corpus_path))
    if mock:
        llm = OverlapMockLlm(corpus, n=n)
        embedder = HashEmbeddingProvider()
    else:
        llm_conf = config.get("llm", {})
        emb_conf = config.get("embeddings", {})
        base = resolve_option("llm_base_url", llm_conf.get("base_url"), {}, None)
        if not base:
            raise ValidationError(
                "live LMGR needs [llm].base_url in the config file "
                "(or pass --mock-providers)"
            )
        llm = HttpLlmProvider(
            base_url=base,
            model=llm_conf.get("model", ""),
            api_key=os.environ.get(ENV_PREFIX + "LLM_API_KEY", llm_conf.get("api_key", "")),
        )
        embedder = HttpEmbeddingProvider(
            base_url=emb_conf.get("base_url", base),
            model=emb_conf.get("model", ""),
            dim=int(emb_conf.get("dim", 768)),
            api_key=os.environ.get(ENV_PREFIX + "EMBEDDINGS_API_KEY", emb_conf.get("api_key", "")),
        )
    grounding = build_grounding_corpus(corpus, embedder, cache_dir=cache_dir)
    return LmgrRetriever(llm, embedder, grounding, n=n, ground_k=ground_k)


@cli.group()
def run():
    """Produce run files from a retriever over conversations."""


run_common = [
    click.option("--retriever", "retriever_name", type=click.Choice(["bm25", "lmgr"]), default="bm25", show_default=True),
    click.option("--index", "index_dir", type=click.Path(), default=None),
    click.option("--corpus", "corpus_path", type=click.Path(), default=None),
    click.option("--conversations", "conversations_path", required=True, type=click.Path(exists=True)),
    click.option("-k", type=int, default=20, show_default=True),
    click.option("--out", "out_path", required=True, type=click.Path()),
    click.option("--tag", default=None, help="Run tag (defaults to the mode name)."),
    click.option("--mock-providers", "mock", is_flag=True, default=False),
    click.option("-n", "lmgr_n", type=int, default=20, show_default=True),
    click.option("--ground-k", type=int, default=5, show_default=True),
    click.option("--cache-dir", type=click.Path(), default=None),
]


def _apply(options, func):
    for option in reversed(options):
        func = option(func)
    return func


@run.command("reactive")
@click.pass_context
def run_reactive_cmd(ctx, retriever_name, index_dir, corpus_path, conversations_path,
                     k, out_path, tag, mock, lmgr_n, ground_k, cache_dir):
    retriever = _make_retriever(
        retriever_name, index_dir, corpus_path, mock, ctx.obj["config"], lmgr_n, ground_k, cache_dir
    )
    conversations = list(read_conversations(conversations_path))
    runs = run_reactive(retriever, conversations, k, run_tag=tag or "reactive")
    write_run(runs, out_path)
    click.echo(json.dumps({"conversations": len(conversations), "result_lists": len(runs)}))


run_reactive_cmd = _apply(run_common, run_reactive_cmd)


@run.command("proactive")
@click.option("--policy", "policy_name", type=click.Choice(["always", "never", "threshold", "lexical"]), default="always", show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
@click.option("--scores", "scores_path", type=click.Path(), default=None)
@click.pass_context
def run_proactive_cmd(ctx, retriever_name, index_dir, corpus_path, conversations_path,
                      k, out_path, tag, mock, lmgr_n, ground_k, cache_dir,
                      policy_name, tau, scores_path):
    retriever = _make_retriever(
        retriever_name, index_dir, corpus_path, mock, ctx.obj["config"], lmgr_n, ground_k, cache_dir
    )
    if policy_name == "always":
        policy = AlwaysPolicy()
    elif policy_name == "never":
        policy = NeverPolicy()
    elif policy_name == "threshold":
        if not scores_path:
            raise ValidationError("--policy threshold requires --scores")
        policy = ThresholdPolicy(read_scores(scores_path), tau)
    else:
        if not index_dir:
            raise ValidationError("--policy lexical requires --index")
        policy = LexicalPolicy(InvertedIndex.load(index_dir), tau)
    conversations = list(read_conversations(conversations_path))
    runs = run_proactive(policy, retriever, conversations, k, run_tag=tag or "proactive")
    write_run(runs, out_path)
    click.echo(json.dumps({"conversations": len(conversations), "result_lists": len(runs)}))


run_proactive_cmd = _apply(run_common, run_proactive_cmd)


def _parse_cutoffs(text: str) -> list[int]:
    try:
        cutoffs = [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad cutoff list {text!r}: {exc}") from exc
    if not cutoffs or any(c < 1 for c in cutoffs):
        raise ValidationError(f"cutoffs must be positive integers, got {text!r}")
    return cutoffs


def _emit_report(report, out_tsv, out_json):
    names = report.metric_names
    lines = ["conversation\t" + "\t".join(names)]
    for conv_id in report.conversation_ids():
        row = [conv_id]
        for name in names:
            value = report.per_conversation[name].get(conv_id)
            row.append("undefined" if value is None else f"{value:.6f}")
        lines.append("\t".join(row))
    means = report.means()
    lines.append(
        "mean\t" + "\t".join(
            "undefined" if means[name] is None else f"{means[name]:.6f}"
            for name in names
        )
    )
    body = "\n".join(lines) + "\n"
    if out_tsv:
        Path(out_tsv).write_text(body, encoding="utf-8")
    else:
        click.echo(body, nl=False)
    if out_json:
        Path(out_json).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")


@cli.group("eval")
def eval_group():
    """Evaluate run files against qrels."""


@eval_group.command("reactive")
@click.option("--run", "run_path", required=True, type=click.Path(exists=True))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True))
@click.option("-k", "cutoffs", default="5,20,100", show_default=True)
@click.option("--out-tsv", type=click.Path(), default=None)
@click.option("--out-json", type=click.Path(), default=None)
def eval_reactive_cmd(run_path, qrels_path, cutoffs, out_tsv, out_json):
    report = evaluate_reactive(
        read_run(run_path), read_qrels(qrels_path), _parse_cutoffs(cutoffs)
    )
    _emit_report(report, out_tsv, out_json)


@eval_group.command("proactive")
@click.option("--run", "run_path", required=True, type=click.Path(exists=True))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True))
@click.option("-k", "cutoffs", default="5,20,100", show_default=True)
@click.option("--conversations", "conversations_path", type=click.Path(exists=True), default=None,
              help="Pin conversation lengths (otherwise inferred from run and qrels).")
@click.option("--out-tsv", type=click.Path(), default=None)
@click.option("--out-json", type=click.Path(), default=None)
def eval_proactive_cmd(run_path, qrels_path, cutoffs, conversations_path, out_tsv, out_json):
    lengths = None
    if conversations_path:
        lengths = {c.id: c.length for c in read_conversations(conversations_path)}
    report = evaluate_proactive(
        read_run(run_path), read_qrels(qrels_path), _parse_cutoffs(cutoffs), lengths=lengths
    )
    _emit_report(report, out_tsv, out_json)


@cli.command()
@click.option("--conversations", "conversations_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("-n", type=int, default=20, show_default=True)
@click.option("-k", type=int, default=5, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mock", is_flag=True, default=False)
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--tag", default="lmgr")
@click.pass_context
def lmgr(ctx, conversations_path, corpus_path, n, k, out_path, mock, cache_dir, tag):
    """Language-model grounded retrieval over whole conversations."""
    retriever = _make_retriever(
        "lmgr", None, corpus_path, mock, ctx.obj["config"], n, k, cache_dir
    )
    conversations = list(read_conversations(conversations_path))
    runs = run_reactive(retriever, conversations, n, run_tag=tag)
    write_run(runs, out_path)
    click.echo(json.dumps({"conversations": len(conversations), "result_lists": len(runs)}))


@cli.command()
@click.option("--runs", "runs_spec", required=True,
              help="Comma-separated run files, pooled in the given order.")
@click.option("--depth", type=int, default=10, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def pool(runs_spec, depth, out_path):
    """Depth-k pools from the final-turn lists of several runs."""
    run_files = [p.strip() for p in runs_spec.split(",") if p.strip()]
    runs = [read_run(p) for p in run_files]
    tags = [Path(p).stem for p in run_files]
    pools = build_pools(runs, depth, run_tags=tags)
    write_pools(pools, out_path)
    click.echo(json.dumps({
        "conversations": len(pools),
        "pooled_documents": sum(len(p.doc_ids) for p in pools),
    }))


@cli.group()
def annotate():
    """Serve annotation tasks or export collected judgments."""


@annotate.command("serve")
@click.option("--pools", "pools_path", required=True, type=click.Path(exists=True))
@click.option("--conversations", "conversations_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), default=None)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--log", "log_path", type=click.Path(), default="judgments.jsonl", show_default=True)
@click.option("--replication", type=int, default=3, show_default=True)
@click.option("--lease-minutes", type=float, default=30.0, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(), default=None,
              help="Static UI bundle directory to host at /.")
def annotate_serve(pools_path, conversations_path, corpus_path, port, host,
                   log_path, replication, lease_minutes, ui_dir):
    import uvicorn

    pools = {p.conversation_id: p for p in read_pools(pools_path)}
    conversations = {c.id: c for c in read_conversations(conversations_path)}
    missing = sorted(set(pools) - set(conversations))
    if missing:
        raise ValidationError(f"pools reference unknown conversations: {missing[:5]}")
    documents = {}
    if corpus_path:
        documents = {d.doc_id: d for d in read_corpus(corpus_path)}
    state = AnnotationState(
        pools=pools,
        conversations=conversations,
        documents=documents,
        replication=replication,
        lease_seconds=lease_minutes * 60,
        log_path=Path(log_path),
    )
    if ui_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if bundled.is_dir():
            ui_dir = str(bundled)
    app = create_app(state, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


@annotate.command("export")
@click.option("--judgments", "judgments_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--replication", type=int, default=3, show_default=True)
def annotate_export(judgments_path, out_path, replication):
    judgments = read_judgment_log(judgments_path)
    count, warnings = export_qrels_file(judgments, out_path, required=replication)
    for w in warnings:
        click.echo(f"warning: {w.conversation_id}/{w.doc_id}: {w.message}", err=True)
    click.echo(json.dumps({"qrels": count, "warnings": len(warnings)}))


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (OSError, ProviderError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
