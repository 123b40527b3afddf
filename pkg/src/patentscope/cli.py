"""Command-line driver.

Exit codes: 0 success, 1 some eval rows failed, 2 configuration error,
3 ingest error, 4 pipeline (agent) error, 5 report error, 6 index/search error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .agents import ContextPolicy, PipelineDeps, TeamState, run_pipeline
from .config import RunConfig, load_config
from .context import CompressionConfig, CorpusStats, TokenBudget
from .embedindex import (
    HttpEmbedder,
    LocalEmbedder,
    VectorIndex,
    chunk_document,
    index_load,
    index_save,
)
from .errors import (
    ConfigError,
    EmptyAfterFilter,
    IngestError,
    PatentscopeError,
    PipelineError,
    ReportError,
    RetrievalError,
)
from .evaluation import evaluate_pair
from .ingest import ExtractorConfig, extract_text, filter_text, load_stopwords, raw_from_path
from .llm import ProviderConfig, make_provider
from .report import assemble_markdown, export_pdf, render_html
from .tools import FixtureStore, KnowledgeTools, LiveBackend, build_registry, normalize_patent_id

logger = logging.getLogger("patentscope")

EXIT_OK, EXIT_ROWS, EXIT_CONFIG, EXIT_INGEST, EXIT_PIPELINE, EXIT_REPORT, EXIT_INDEX = 0, 1, 2, 3, 4, 5, 6

CORPUS_SUFFIXES = (".txt", ".md", ".pdf")


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- factories


def build_embedder(cfg: RunConfig):
    e = cfg.embedding
    if e.mode == "live":
        return HttpEmbedder(e.endpoint, e.dim, api_key_env=e.api_key_env, model=e.model)
    return LocalEmbedder(e.dim)


def build_provider(cfg: RunConfig):
    p = cfg.provider
    pc = ProviderConfig(
        mode=p.mode, endpoint=p.endpoint, model=p.model, api_key_env=p.api_key_env,
        timeout=p.timeout, max_retries=p.max_retries, temperature=p.temperature, script=p.script,
    )
    return make_provider(pc)


def build_tools(cfg: RunConfig) -> KnowledgeTools:
    t = cfg.tools
    try:
        store = FixtureStore.load(t.patents_fixture, t.papers_fixture)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load tool fixtures: {exc}") from exc
    live = None
    if t.mode == "live":
        live = LiveBackend(t.patents_base_url, t.papers_base_url, t.patents_key_env, t.papers_key_env)
    return KnowledgeTools(store, live, default_limit=t.limit)


def context_policy(cfg: RunConfig, strategy: Optional[str] = None) -> ContextPolicy:
    c = cfg.context
    return ContextPolicy(
        strategy=strategy or c.strategy,
        budget=TokenBudget(c.max_tokens_per_message, c.max_total_tokens, c.max_history_messages),
        compression=CompressionConfig(target_ratio=c.target_ratio),
    )


def _sidecar(index_path: str, suffix: str) -> Path:
    return Path(index_path + suffix)


def corpus_stats_for(cfg: RunConfig, text: str) -> CorpusStats:
    """Document frequencies from the indexed corpus, else from this document's chunks."""
    stats_path = _sidecar(cfg.index.path, ".stats.json")
    if stats_path.exists():
        try:
            return CorpusStats.from_dict(json.loads(stats_path.read_text("utf-8")))
        except (OSError, ValueError, KeyError) as exc:
            logger.warning("ignoring unreadable corpus stats %s: %s", stats_path, exc)
    from .ingest import CleanDocument

    doc = CleanDocument("self", text, 0, "llm")
    size = max(2, min(cfg.index.chunk_size, 64))
    return CorpusStats.from_texts(c.text for c in chunk_document(doc, size, 0))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, "utf-8")


def _extract(path: Path, cfg: RunConfig) -> str:
    try:
        raw = raw_from_path(path)
    except OSError as exc:
        raise CommandError(EXIT_INGEST, f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise CommandError(EXIT_INGEST, f"{path}: {exc}") from exc
    ex = ExtractorConfig(cfg.extractor.mode, cfg.extractor.command_template)
    try:
        return extract_text(raw, ex)
    except IngestError as exc:
        raise CommandError(EXIT_INGEST, f"{path}: {type(exc).__name__}: {exc}") from exc


# ---------------------------------------------------------------- commands


def write_report(state: TeamState, cfg: RunConfig, out_dir: Path) -> list[Path]:
    try:
        _, markdown = assemble_markdown(state)
    except ReportError as exc:
        raise CommandError(EXIT_REPORT, f"{type(exc).__name__}: {exc}") from exc
    html_text = render_html(markdown)
    stem = state.patent_id
    md_path, html_path = out_dir / f"{stem}.md", out_dir / f"{stem}.html"
    _write(md_path, markdown)
    _write(html_path, html_text)
    written = [md_path, html_path]
    template = cfg.report.converter.command_template
    if template:
        try:
            written.append(export_pdf(html_text, out_dir / f"{stem}.pdf", template))
        except ReportError as exc:
            raise CommandError(EXIT_REPORT, f"{type(exc).__name__}: {exc}") from exc
    return written


def cmd_analyze(input_path: Path, cfg: RunConfig, strategy: Optional[str] = None, out_dir: Optional[Path] = None) -> list[Path]:
    try:
        cfg.check_env(("provider", "tools"))
        provider = build_provider(cfg)
        tools = build_tools(cfg)
        stopwords = load_stopwords(cfg.stopwords)
    except (ConfigError, OSError) as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc

    text = _extract(input_path, cfg)
    doc_id = normalize_patent_id(input_path.stem) or input_path.stem
    try:
        clean = filter_text(text, "llm", stopwords, doc_id=doc_id)
    except EmptyAfterFilter as exc:
        raise CommandError(EXIT_INGEST, str(exc)) from exc

    policy = context_policy(cfg, strategy)
    deps = PipelineDeps(
        llm=provider,
        registry=build_registry(tools),
        context=policy,
        corpus_stats=corpus_stats_for(cfg, clean.text) if policy.strategy == "compress" else None,
        max_turns=cfg.max_turns,
    )
    out_dir = out_dir or Path(cfg.report.output_dir)
    try:
        state = run_pipeline(clean, deps, patent_id=doc_id)
    except PipelineError as exc:
        partial = getattr(exc, "state", None)
        if partial is not None:
            _write(out_dir / f"{doc_id}.teamstate.json", partial.to_json())
        raise CommandError(EXIT_PIPELINE, f"pipeline failed in role {exc.role}: {exc.cause}") from exc
    _write(out_dir / f"{doc_id}.teamstate.json", state.to_json())
    return write_report(state, cfg, out_dir)


def cmd_report(state_path: Path, cfg: RunConfig, out_dir: Optional[Path] = None) -> list[Path]:
    try:
        state = TeamState.from_json(state_path.read_text("utf-8"))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CommandError(EXIT_REPORT, f"cannot read team state {state_path}: {exc}") from exc
    return write_report(state, cfg, out_dir or state_path.parent)


def cmd_index(corpus_dir: Path, cfg: RunConfig) -> Path:
    try:
        cfg.check_env(("embedding",))
        stopwords = load_stopwords(cfg.stopwords)
    except (ConfigError, OSError) as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc
    if not corpus_dir.is_dir():
        raise CommandError(EXIT_INGEST, f"{corpus_dir} is not a directory")
    files = sorted(p for p in corpus_dir.iterdir() if p.suffix.lower() in CORPUS_SUFFIXES)
    embedder = build_embedder(cfg)

    chunks, llm_texts = [], []
    for path in files:
        text = _extract(path, cfg)
        try:
            llm_texts.append(filter_text(text, "llm", stopwords).text)
            doc = filter_text(text, "index", stopwords, doc_id=path.stem)
        except EmptyAfterFilter:
            logger.warning("skipping %s: empty after filtering", path)
            continue
        chunks.extend(chunk_document(doc, cfg.index.chunk_size, cfg.index.overlap))

    batches = [chunks[i : i + 64] for i in range(0, len(chunks), 64)]
    try:
        with ThreadPoolExecutor(max_workers=4) as pool:
            vectors = [v for batch in pool.map(lambda b: embedder.embed_batch([c.text for c in b]), batches) for v in batch]
    except RetrievalError as exc:
        raise CommandError(EXIT_INDEX, f"embedding failed: {exc}") from exc

    index = VectorIndex(embedder.dim)
    index.add_many([c.key for c in chunks], vectors)
    index_path = Path(cfg.index.path)
    try:
        index_path.parent.mkdir(parents=True, exist_ok=True)
        index_save(index, index_path)
        rows = [json.dumps({"key": c.key, "doc_id": c.doc_id, "text": c.text}, ensure_ascii=False) for c in chunks]
        _write(_sidecar(cfg.index.path, ".chunks.jsonl"), "".join(r + "\n" for r in rows))
        _write(_sidecar(cfg.index.path, ".stats.json"), json.dumps(CorpusStats.from_texts(llm_texts).to_dict()) + "\n")
    except (OSError, RetrievalError) as exc:
        raise CommandError(EXIT_INDEX, f"cannot write index: {exc}") from exc
    logger.info("indexed %d chunks from %d files into %s", len(chunks), len(files), index_path)
    return index_path


def cmd_search(query: str, k: int, cfg: RunConfig) -> list[tuple[str, float, str]]:
    try:
        cfg.check_env(("embedding",))
        stopwords = load_stopwords(cfg.stopwords)
    except (ConfigError, OSError) as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc
    try:
        index = index_load(cfg.index.path)
    except RetrievalError as exc:
        raise CommandError(EXIT_INDEX, f"{type(exc).__name__}: {exc}") from exc
    if k <= 0:
        return []
    embedder = build_embedder(cfg)
    if embedder.dim != index.dim:
        raise CommandError(EXIT_CONFIG, f"embedding dim {embedder.dim} does not match index dim {index.dim}")
    try:
        q_text = filter_text(query, "index", stopwords).text
    except EmptyAfterFilter:
        q_text = query
    try:
        qv = embedder.embed_batch([q_text])[0]
    except (RetrievalError, ValueError) as exc:
        raise CommandError(EXIT_INDEX, f"cannot embed query: {exc}") from exc

    snippets = {}
    chunks_path = _sidecar(cfg.index.path, ".chunks.jsonl")
    if chunks_path.exists():
        for line in chunks_path.read_text("utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                snippets[row["key"]] = row["text"]
    return [(key, sim, snippets.get(key, "")[:120]) for key, sim in index.search(qv, k)]


METRIC_FIELDS = ["rouge1", "rouge2", "rougeL", "bert_precision", "bert_recall", "bert_f1"]


def read_manifest(path: Path) -> list[dict]:
    """JSONL rows ``{"id", "generated", "reference"}``; paths relative to the manifest."""
    rows = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            rows.append({
                "id": str(row.get("id", lineno)),
                "generated": path.parent / row["generated"],
                "reference": path.parent / row["reference"],
            })
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            rows.append({"id": str(lineno), "error": f"malformed manifest row: {exc}"})
    return rows


def cmd_eval(manifest: Path, cfg: RunConfig, out_dir: Path) -> tuple[list[dict], bool]:
    try:
        rows = read_manifest(manifest)
    except OSError as exc:
        raise CommandError(EXIT_INGEST, f"cannot read manifest {manifest}: {exc}") from exc
    embedder = build_embedder(cfg)
    results, failed = [], False
    for row in rows:
        entry = {"id": row["id"]}
        if "error" in row:
            entry["error"] = row["error"]
        else:
            try:
                gen = row["generated"].read_text("utf-8")
                ref = row["reference"].read_text("utf-8")
                entry.update(evaluate_pair(gen, ref, embedder).to_dict())
            except (OSError, PatentscopeError, ValueError) as exc:
                entry["error"] = f"{type(exc).__name__}: {exc}"
        failed |= "error" in entry
        results.append(entry)

    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "metrics.json", json.dumps(results, indent=2) + "\n")
    ok = [r for r in results if "error" not in r]
    with (out_dir / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *METRIC_FIELDS, "error"])
        for r in results:
            writer.writerow([r["id"], *(f"{r[f]:.6f}" if f in r else "" for f in METRIC_FIELDS), r.get("error", "")])
        if ok:
            means = [sum(r[f] for r in ok) / len(ok) for f in METRIC_FIELDS]
            writer.writerow(["mean", *(f"{m:.6f}" for m in means), ""])
    return results, failed


# ---------------------------------------------------------------- argparse


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patentscope", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-c", "--config", type=Path, help="run configuration (YAML or JSON)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze one patent and write the report")
    a.add_argument("input", type=Path)
    a.add_argument("--context-strategy", choices=["compress", "transform"])
    a.add_argument("-o", "--out", type=Path, help="output directory (default: report.output_dir)")

    i = sub.add_parser("index", help="chunk, embed and index a corpus directory")
    i.add_argument("corpus_dir", type=Path)

    s = sub.add_parser("search", help="query the index")
    s.add_argument("query")
    s.add_argument("-k", type=int, default=5)

    e = sub.add_parser("eval", help="score generated texts against references")
    e.add_argument("manifest", type=Path, help="JSONL of {id, generated, reference}")
    e.add_argument("-o", "--out", type=Path, default=Path("metrics"))

    r = sub.add_parser("report", help="re-render a saved team state")
    r.add_argument("state", type=Path)
    r.add_argument("-o", "--out", type=Path)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "analyze":
            for path in cmd_analyze(args.input, cfg, args.context_strategy, args.out):
                print(path)
        elif args.command == "index":
            print(cmd_index(args.corpus_dir, cfg))
        elif args.command == "search":
            for rank, (key, sim, snippet) in enumerate(cmd_search(args.query, args.k, cfg), 1):
                print(f"{rank}\t{key}\t{sim:.6f}\t{snippet}")
        elif args.command == "eval":
            results, failed = cmd_eval(args.manifest, cfg, args.out)
            for r in results:
                if "error" in r:
                    print(f"{r['id']}\terror\t{r['error']}", file=sys.stderr)
                else:
                    print(f"{r['id']}\t" + "\t".join(f"{f}={r[f]:.4f}" for f in METRIC_FIELDS))
            return EXIT_ROWS if failed else EXIT_OK
        elif args.command == "report":
            for path in cmd_report(args.state, cfg, args.out):
                print(path)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
