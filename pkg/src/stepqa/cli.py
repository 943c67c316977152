"""Command line entry point: ``stepqa {index,ask,replay,prompt,data} ...``."""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import evalkit
from .backend import HashEmbedder, backend_from_spec
from .config import Settings, load_settings
from .engine import Deps, RunMode, solve_state
from .errors import StepQAError
from .explorer import explore
from .prompts import PromptKind, compose_input, render_prompt
from .qstate import Question, Trace, initial_state, utc_clock, zero_clock
from .retrieval import CorpusIndex, RetrievalConfig, load_corpus

log = logging.getLogger("stepqa")


def _embedder(spec: Optional[str], settings: Settings):
    """``hash:DIM[:SEED]`` builds an offline hash embedder; otherwise a backend spec."""
    spec = spec or settings.backend
    if not spec:
        raise SystemExit("an embedder or backend is required (--embedder / --backend / STEPQA_BACKEND)")
    if spec.startswith("hash:"):
        parts = spec.split(":")
        return HashEmbedder(dim=int(parts[1]), seed=int(parts[2]) if len(parts) > 2 else 0)
    return backend_from_spec(spec, settings.timeout, settings.retries)


def _backend(spec: Optional[str], settings: Settings):
    spec = spec or settings.backend
    if not spec:
        raise SystemExit("a backend is required (--backend or STEPQA_BACKEND)")
    return backend_from_spec(spec, settings.timeout, settings.retries)


def _apply_overrides(settings: Settings, args, names: Sequence[str]) -> Settings:
    settings.update({n: getattr(args, n, None) for n in names})
    return settings


# --------------------------------------------------------------------------
# index

def cmd_index_build(args, settings: Settings) -> int:
    corpus = load_corpus(args.corpus)
    index = CorpusIndex.build(corpus, _embedder(args.embedder, settings))
    index.save(args.out)
    print(json.dumps({"documents": len(index.doc_index), "paragraphs": len(index.para_index), "dim": index.doc_index.dim}))
    return 0


def cmd_index_query(args, settings: Settings) -> int:
    _apply_overrides(settings, args, ["k", "k_doc"])
    index = CorpusIndex.load(args.index)
    embedder = _embedder(args.embedder, settings)
    hits = index.retrieve(args.q, embedder, RetrievalConfig(k_doc=settings.k_doc, k=settings.k))
    for h in hits:
        text = index.paragraph(h.para_id).text
        print(json.dumps({"para_id": h.para_id, "doc_id": h.doc_id, "score": h.score, "text": text}, ensure_ascii=False))
    return 0


# --------------------------------------------------------------------------
# ask / replay

_ENGINE_FLAGS = ["mode", "max_rounds", "k", "k_doc", "n", "leaf_cap", "branch_depth", "backend"]


def _lineage_path(trace_out: Path, lineage_id: int) -> Path:
    if lineage_id == 0:
        return trace_out
    return trace_out.with_name(f"{trace_out.stem}.L{lineage_id}{trace_out.suffix}")


def _meta_path(trace_out: Path) -> Path:
    return trace_out.with_name(trace_out.name + ".meta.json")


def _tree_path(trace_out: Path) -> Path:
    return trace_out.with_name(f"{trace_out.stem}.tree.json")


def _run(question: Question, settings: Settings, backend_spec, reader_spec, index_path, clock):
    """Execute one question; returns (verdict or None, {lineage_id: Trace}, tree summary or None, error)."""
    core = _backend(backend_spec, settings)
    reader = backend_from_spec(reader_spec, settings.timeout, settings.retries) if reader_spec else None
    index = CorpusIndex.load(index_path) if index_path else None
    deps = Deps(core=core, reader=reader, index=index)
    cfg = settings.engine_config()
    if cfg.mode is RunMode.FULL:
        try:
            verdict, tree = explore(question, deps, cfg, settings.explore_config(), clock=clock)
        except StepQAError as exc:
            tree = getattr(exc, "tree", None)
            traces = {leaf.lineage_id: leaf.trace for leaf in tree.leaves} if tree else {}
            return None, traces, tree.summary() if tree else None, exc
        return verdict, {leaf.lineage_id: leaf.trace for leaf in tree.leaves}, tree.summary(), None
    try:
        state, trace = solve_state(question, deps, cfg, clock=clock)
    except StepQAError as exc:
        return None, {0: getattr(exc, "trace", None) or Trace(clock=clock)}, None, exc
    return state.verdict, {0: trace}, None, None


def cmd_ask(args, settings: Settings) -> int:
    if args.explore:
        settings.mode = "full"
    _apply_overrides(settings, args, _ENGINE_FLAGS)
    test_mode = args.test_mode or os.environ.get("STEPQA_TEST_MODE") == "1"
    clock = zero_clock if test_mode else utc_clock
    question = Question(id=args.qid, text=args.question)
    verdict, traces, tree, err = _run(question, settings, settings.backend, args.reader, args.corpus_index, clock)
    if args.trace_out:
        out = Path(args.trace_out)
        for lid, trace in traces.items():
            trace.write(_lineage_path(out, lid))
        if tree is not None:
            _tree_path(out).write_text(json.dumps(tree, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
        meta = {
            "question": {"id": question.id, "text": question.text},
            "settings": {k: getattr(settings, k) for k in _ENGINE_FLAGS},
            "reader": args.reader,
            "corpus_index": args.corpus_index,
            "lineages": sorted(traces),
        }
        _meta_path(out).write_text(json.dumps(meta, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    if err is not None:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(verdict.answer)
    return 0


def cmd_replay(args, settings: Settings) -> int:
    trace_path = Path(args.trace)
    meta = json.loads(_meta_path(trace_path).read_text(encoding="utf-8"))
    settings.update(meta["settings"])
    if args.backend:
        settings.backend = args.backend
    question = Question(**meta["question"])
    index_path = args.corpus_index or meta.get("corpus_index")
    _, traces, tree, _ = _run(question, settings, settings.backend, args.reader or meta.get("reader"), index_path, zero_clock)
    differences = 0
    for lid in sorted(set(meta["lineages"]) | set(traces)):
        path = _lineage_path(trace_path, lid)
        recorded = Trace.read(path).dumps(zero_wall_clock=True) if path.exists() else ""
        fresh = traces[lid].dumps(zero_wall_clock=True) if lid in traces else ""
        if recorded != fresh:
            differences += 1
            sys.stdout.writelines(
                difflib.unified_diff(
                    recorded.splitlines(keepends=True), fresh.splitlines(keepends=True), str(path), "replay"
                )
            )
    if differences:
        print(f"{differences} lineage trace(s) differ", file=sys.stderr)
        return 1
    print("replay identical")
    return 0


# --------------------------------------------------------------------------
# prompt

def cmd_prompt(args, settings: Settings) -> int:
    slots = {}
    for item in args.slot or []:
        name, _, value = item.partition("=")
        slots[name] = value
    state = initial_state(Question(id="q", text=args.question)) if args.question else None
    kind = PromptKind(args.kind)
    if args.full and state is not None:
        text = compose_input(kind, state, slots)
    else:
        text = render_prompt(kind, state, slots)
    sys.stdout.write(text + "\n")
    return 0


# --------------------------------------------------------------------------
# data

def cmd_data_load(args, settings: Settings) -> int:
    items = evalkit.load_dataset(args.path, strict=not args.lenient)
    labeled = sum(it.labeled for it in items)
    print(json.dumps({"items": len(items), "labeled": labeled, "unlabeled": len(items) - labeled}))
    return 0


def cmd_data_refine(args, settings: Settings) -> int:
    items = evalkit.load_dataset(args.path)
    refined = evalkit.refine_annotations(items, _backend(args.backend, settings), max_workers=args.workers)
    evalkit.write_refined(refined, args.out)
    ok = sum(r.ok for r in refined)
    print(json.dumps({"refined": ok, "flagged": len(refined) - ok}))
    return 0


def cmd_data_pairs(args, settings: Settings) -> int:
    refined = evalkit.read_refined(args.refined)
    paragraphs = None
    if args.corpus:
        paragraphs = {p.para_id: p.text for d in load_corpus(args.corpus) for p in d.paragraphs}
    n = evalkit.write_pairs(evalkit.build_training_pairs(refined, paragraphs), args.out)
    print(json.dumps({"pairs": n}))
    return 0


def cmd_data_score(args, settings: Settings) -> int:
    with open(args.predictions, encoding="utf-8") as fh:
        preds = json.load(fh)
    preds = {qid: (v["answer"] if isinstance(v, dict) else v) for qid, v in preds.items()}
    acc = evalkit.score_accuracy(preds, evalkit.load_dataset(args.gold))
    print(f"{acc:.4f}")
    return 0


def cmd_data_predict_file(args, settings: Settings) -> int:
    _apply_overrides(settings, args, _ENGINE_FLAGS)
    items = evalkit.load_dataset(args.path)
    core = _backend(settings.backend, settings)
    reader = backend_from_spec(args.reader, settings.timeout, settings.retries) if args.reader else None
    deps = Deps(core=core, reader=reader, index=CorpusIndex.load(args.corpus_index) if args.corpus_index else None)
    cfg = settings.engine_config()
    records = []
    for it in items:
        q = Question(id=it.qid, text=it.question)
        try:
            if cfg.mode is RunMode.FULL:
                verdict, tree = explore(q, deps, cfg, settings.explore_config())
                state = next(leaf.state for leaf in tree.leaves if leaf.ok and leaf.verdict == verdict)
            else:
                state, _ = solve_state(q, deps, cfg)
        except StepQAError as exc:
            log.warning("%s failed: %s", it.qid, exc)
            continue
        records.append(evalkit.PredictionRecord.from_state(it.qid, state))
    evalkit.write_predictions(records, args.out)
    print(json.dumps({"predicted": len(records), "failed": len(items) - len(records)}))
    return 0


# --------------------------------------------------------------------------

def _engine_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=[m.value for m in RunMode])
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--k-doc", dest="k_doc", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--leaf-cap", dest="leaf_cap", type=int)
    p.add_argument("--branch-depth", dest="branch_depth", type=int)
    p.add_argument("--backend", help="http(s) endpoint URL or script:<manifest path>")
    p.add_argument("--reader", help="separate backend for the extractor (defaults to --backend)")
    p.add_argument("--corpus-index", dest="corpus_index")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepqa", description=__doc__)
    parser.add_argument("--config", help="YAML or JSON settings file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    index = sub.add_parser("index", help="build or query a corpus index").add_subparsers(dest="index_cmd", required=True)
    p = index.add_parser("build")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embedder", help="hash:DIM[:SEED] or a backend spec")
    p.set_defaults(func=cmd_index_build)
    p = index.add_parser("query")
    p.add_argument("--index", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--k-doc", dest="k_doc", type=int)
    p.add_argument("--embedder")
    p.set_defaults(func=cmd_index_query)

    p = sub.add_parser("ask", help="answer one yes/no question")
    p.add_argument("--question", required=True)
    p.add_argument("--qid", default="q")
    _engine_args(p)
    p.add_argument("--explore", action="store_true", help="enable strategy exploration (same as --mode full)")
    p.add_argument("--trace-out", dest="trace_out")
    p.add_argument("--test-mode", action="store_true", help="zero wall_clock in traces")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("replay", help="re-run a recorded question and diff the traces")
    p.add_argument("--trace", required=True)
    p.add_argument("--backend")
    p.add_argument("--reader")
    p.add_argument("--corpus-index", dest="corpus_index")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("prompt", help="print a rendered prompt template")
    p.add_argument("--kind", required=True, choices=[k.value for k in PromptKind])
    p.add_argument("--question")
    p.add_argument("--slot", action="append", metavar="NAME=VALUE")
    p.add_argument("--full", action="store_true", help="prepend the system prompt")
    p.set_defaults(func=cmd_prompt)

    data = sub.add_parser("data", help="dataset utilities").add_subparsers(dest="data_cmd", required=True)
    p = data.add_parser("load")
    p.add_argument("--path", required=True)
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_data_load)
    p = data.add_parser("refine")
    p.add_argument("--path", required=True)
    p.add_argument("--backend")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_data_refine)
    p = data.add_parser("pairs")
    p.add_argument("--refined", required=True)
    p.add_argument("--corpus", help="corpus JSONL supplying paragraph text for reader pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data_pairs)
    p = data.add_parser("score")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.set_defaults(func=cmd_data_score)
    p = data.add_parser("predict-file")
    p.add_argument("--path", required=True)
    p.add_argument("--out", required=True)
    _engine_args(p)
    p.set_defaults(func=cmd_data_predict_file)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    settings = load_settings(args.config)
    try:
        return args.func(args, settings)
    except StepQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
