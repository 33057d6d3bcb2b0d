"""Command-line pipeline: composable stages over JSONL/JSON files.

Each subcommand reads files, writes its outputs atomically, and records a
run manifest (parameters, input digests, tool version) so multi-stage
experiments are reproducible. Outputs are byte-identical across reruns
with the same inputs and seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .corpus import build_index, load_corpus_jsonl, load_index, serialize_index
from .distill import (
    TrainingTemplate,
    emit_training_example,
    filter_by_verdicts,
    filter_rationales,
    ingest_rationales,
    load_verdicts,
    retrieve_knowledge,
    training_jsonl_text,
)
from .errors import RadkitError
from .evaluation import (
    accuracy,
    build_silver,
    hits_report,
    load_predictions_jsonl,
)
from .memsim import SimConfig, run_simulation
from .reranker import (
    DEFAULT_EMBEDDING_DIM,
    DEFAULT_KAPPA1,
    DEFAULT_KAPPA2,
    DEFAULT_KAPPA_STAR,
    DEFAULT_TAU1,
    DEFAULT_TAU2,
    FileScorer,
    RerankerModel,
    build_candidate_set,
    candidates_jsonl_text,
    load_model,
    read_candidates_jsonl,
    rerank_inference,
    serialize_model,
    train,
)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _write_manifest(args, command: str, params: dict, inputs: list[Path], outputs: list[Path]):
    manifest = {
        "tool": "radkit",
        "version": __version__,
        "command": command,
        "params": params,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    target = args.manifest_out
    if target is None and outputs:
        target = str(outputs[0]) + ".manifest.json"
    if target is not None:
        _atomic_write_text(Path(target), json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _check_inputs(paths: list[Path]) -> None:
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"input file not found: {p}")


def cmd_index(args) -> int:
    corpus_path = Path(args.corpus)
    _check_inputs([corpus_path])
    docs = load_corpus_jsonl(corpus_path)
    index = build_index(docs, k1=args.k1, b=args.b)
    out = Path(args.out)
    _atomic_write_bytes(out, serialize_index(index))
    _write_manifest(
        args, "index", {"k1": args.k1, "b": args.b}, [corpus_path], [out]
    )
    _say(args, f"indexed {index.doc_count} documents, avg_doc_length={index.avg_doc_length:.4f}")
    return 0


def _load_filtered_records(args):
    records = ingest_rationales(args.rationales)
    mode = args.filter
    if mode == "answer-match":
        records, drops = filter_rationales(records)
    elif mode.startswith("verdict-file:"):
        verdicts = load_verdicts(mode[len("verdict-file:"):])
        records, drops = filter_by_verdicts(records, verdicts)
    elif mode == "none":
        drops = {}
    else:
        raise ValueError(f"unknown --filter mode {mode!r}")
    return records, drops


def cmd_emit_train(args) -> int:
    index_path, rationales_path = Path(args.index), Path(args.rationales)
    _check_inputs([index_path, rationales_path])
    index = load_index(index_path)
    records, drops = _load_filtered_records(args)
    template = TrainingTemplate.named(args.template, with_knowledge=not args.no_knowledge)
    examples = []
    for record in records:
        for j in range(len(record.rationales)):
            if template.with_knowledge:
                scored = retrieve_knowledge(index, record, j, args.k)
                docs = [index.document(sd.doc_id) for sd in scored]
            else:
                docs = []
            examples.append(
                emit_training_example(
                    record, j, docs, template, max_knowledge_chars=args.max_knowledge_chars
                )
            )
    out = Path(args.out)
    _atomic_write_text(out, training_jsonl_text(examples))
    _write_manifest(
        args,
        "emit-train",
        {
            "k": args.k,
            "template": args.template,
            "filter": args.filter,
            "max_knowledge_chars": args.max_knowledge_chars,
            "no_knowledge": args.no_knowledge,
        },
        [index_path, rationales_path],
        [out],
    )
    dropped = sum(drops.values())
    _say(args, f"emitted {len(examples)} training examples ({dropped} rationales filtered out)")
    return 0


def cmd_candidates(args) -> int:
    index_path, rationales_path = Path(args.index), Path(args.rationales)
    _check_inputs([index_path, rationales_path])
    index = load_index(index_path)
    records, _ = _load_filtered_records(args)
    sets = []
    for record in records:
        for j in range(len(record.rationales)):
            sets.append(build_candidate_set(index, record, j, args.kappa1, args.kappa2))
    out = Path(args.out)
    _atomic_write_text(out, candidates_jsonl_text(sets))
    _write_manifest(
        args,
        "candidates",
        {"kappa1": args.kappa1, "kappa2": args.kappa2, "filter": args.filter},
        [index_path, rationales_path],
        [out],
    )
    _say(args, f"built {len(sets)} candidate sets")
    return 0


def cmd_rerank_train(args) -> int:
    index_path, cand_path = Path(args.index), Path(args.candidates)
    _check_inputs([index_path, cand_path])
    index = load_index(index_path)
    sets = read_candidates_jsonl(cand_path)
    doc_texts = {d.doc_id: d.text for d in index.documents}
    model = RerankerModel.identity(args.dim, hash_seed=args.hash_seed)
    trained, trace = train(
        model,
        sets,
        doc_texts,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        tau1=args.tau1,
        tau2=args.tau2,
        shuffle=args.shuffle,
    )
    out = Path(args.out)
    _atomic_write_text(out, serialize_model(trained))
    _write_manifest(
        args,
        "rerank-train",
        {
            "tau1": args.tau1,
            "tau2": args.tau2,
            "lr": args.lr,
            "epochs": args.epochs,
            "seed": args.seed,
            "dim": args.dim,
            "hash_seed": args.hash_seed,
            "shuffle": args.shuffle,
        },
        [index_path, cand_path],
        [out],
    )
    _say(args, f"trained {args.epochs} epochs, loss {trace[0]:.6f} -> {trace[-1]:.6f}")
    return 0


def cmd_rerank_infer(args) -> int:
    index_path, questions_path = Path(args.index), Path(args.questions)
    inputs = [index_path, questions_path]
    if args.score_file:
        inputs.append(Path(args.score_file))
    if args.model:
        inputs.append(Path(args.model))
    _check_inputs(inputs)
    index = load_index(index_path)
    file_scorer = FileScorer.load(args.score_file) if args.score_file else None
    model = load_model(args.model) if args.model else RerankerModel.identity()
    rows = []
    with open(questions_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            example_id, question = str(obj["id"]), str(obj["question"])
            scorer = file_scorer.for_example(example_id) if file_scorer else model
            ranked = rerank_inference(index, scorer, question, args.kappa_star, args.k)
            rows.append(
                {
                    "id": example_id,
                    "doc_ids": [sd.doc_id for sd in ranked],
                    "scores": [sd.score for sd in ranked],
                }
            )
    out = Path(args.out)
    _atomic_write_text(
        out, "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)
    )
    _write_manifest(
        args,
        "rerank-infer",
        {"kappa_star": args.kappa_star, "k": args.k, "score_file": args.score_file},
        inputs,
        [out],
    )
    _say(args, f"reranked {len(rows)} questions")
    return 0


def cmd_eval(args) -> int:
    inputs = []
    report: dict = {}
    if args.retrieved:
        if not args.index or not args.rationales:
            raise ValueError("--retrieved requires --index and --rationales for silver sets")
        index_path, rationales_path, retrieved_path = (
            Path(args.index),
            Path(args.rationales),
            Path(args.retrieved),
        )
        inputs += [index_path, rationales_path, retrieved_path]
        _check_inputs(inputs)
        index = load_index(index_path)
        records = ingest_rationales(rationales_path)
        silver = {
            r.example_id: build_silver(index, r, args.j_gold)
            for r in records
            if len(r.rationales) > args.j_gold
        }
        retrieved = {}
        with open(retrieved_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                retrieved[str(obj["id"])] = list(obj["doc_ids"])
        ks = [int(k) for k in args.ks.split(",")]
        mode = "all" if args.all_silver else "any"
        report.update(hits_report(retrieved, silver, ks, mode))
    if args.predictions:
        predictions_path = Path(args.predictions)
        _check_inputs([predictions_path])
        inputs.append(predictions_path)
        bundles = load_predictions_jsonl(predictions_path)
        report["accuracy"] = accuracy(bundles)
        report.setdefault("counts", {})["predictions"] = len(bundles)
    if not report:
        raise ValueError("nothing to evaluate: pass --retrieved and/or --predictions")
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        _atomic_write_text(out, text + "\n")
        _write_manifest(
            args,
            "eval",
            {"ks": args.ks, "j_gold": args.j_gold, "all_silver": args.all_silver},
            inputs,
            [out],
        )
    print(text)
    return 0


def _parse_sweep(spec: str) -> tuple[str, list]:
    param, _, rng = spec.partition("=")
    start, stop, step = rng.split(":")
    if param == "eps":
        values = []
        v = float(start)
        while v <= float(stop) + 1e-12:
            values.append(round(v, 12))
            v += float(step)
        return param, values
    return param, list(range(int(start), int(stop) + 1, int(step)))


def cmd_simulate(args) -> int:
    base = dict(
        N=args.N,
        n=args.n,
        d=args.d,
        R=args.R,
        eps=args.eps,
        trials=args.trials,
        tests_per_trial=args.tests,
        seed=args.seed,
    )
    if args.sweep:
        param, values = _parse_sweep(args.sweep)
        if param not in base:
            raise ValueError(f"unknown sweep parameter {param!r}")
        lines = [
            "param,value,m,err_phi,se_phi,err_opt,se_opt,err_naive,se_naive,gap,"
            "mean_bits_phi,bits_naive,bits_budget"
        ]
        for value in values:
            cfg = SimConfig(**{**base, param: value})
            rep = run_simulation(cfg)
            lines.append(
                f"{param},{value},{rep.m},{rep.err_phi:.6f},{rep.se_phi:.6f},"
                f"{rep.err_opt:.6f},{rep.se_opt:.6f},{rep.err_naive:.6f},{rep.se_naive:.6f},"
                f"{rep.gap:.6f},{rep.mean_bits_phi:.2f},{rep.bits_naive:.2f},"
                f"{rep.bits_budget}"
            )
        text = "\n".join(lines) + "\n"
    else:
        report = run_simulation(SimConfig(**base))
        text = report.to_json() + "\n"
    if args.out:
        _atomic_write_text(Path(args.out), text)
        _write_manifest(args, "simulate", base | {"sweep": args.sweep}, [], [Path(args.out)])
    print(text, end="")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker cap (stages currently run single-worker)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser.add_argument("--manifest-out", default=None, help="run-manifest path (default: <out>.manifest.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radkit",
        description="Retrieval-augmented distillation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"radkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a BM25 index from a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k1", type=float, default=0.9)
    p.add_argument("--b", type=float, default=0.4)
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("emit-train", help="emit knowledge-augmented training examples")
    p.add_argument("--index", required=True)
    p.add_argument("--rationales", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=1, help="passages per rationale")
    p.add_argument("--template", default="medqa", help="medqa | strategyqa | custom:<file>")
    p.add_argument("--filter", default="answer-match", help="answer-match | verdict-file:<path> | none")
    p.add_argument("--max-knowledge-chars", type=int, default=None)
    p.add_argument("--no-knowledge", action="store_true", help="plain distillation template without passages")
    _add_common(p)
    p.set_defaults(func=cmd_emit_train)

    p = sub.add_parser("candidates", help="build reranker training candidate sets")
    p.add_argument("--index", required=True)
    p.add_argument("--rationales", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kappa1", type=int, default=DEFAULT_KAPPA1)
    p.add_argument("--kappa2", type=int, default=DEFAULT_KAPPA2)
    p.add_argument("--filter", default="answer-match")
    _add_common(p)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("rerank-train", help="train the reranker on candidate sets")
    p.add_argument("--index", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau1", type=float, default=DEFAULT_TAU1)
    p.add_argument("--tau2", type=float, default=DEFAULT_TAU2)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--dim", type=int, default=DEFAULT_EMBEDDING_DIM)
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--shuffle", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_rerank_train)

    p = sub.add_parser("rerank-infer", help="two-stage retrieval with the reranker")
    p.add_argument("--index", required=True)
    p.add_argument("--questions", required=True, help="JSONL of {id, question}")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="reranker checkpoint (default: identity model)")
    p.add_argument("--kappa-star", type=int, default=DEFAULT_KAPPA_STAR)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--score-file", default=None, help="external scorer JSONL of {id, doc_id, score}")
    _add_common(p)
    p.set_defaults(func=cmd_rerank_infer)

    p = sub.add_parser("eval", help="Hits@k against silver sets and/or answer accuracy")
    p.add_argument("--index")
    p.add_argument("--rationales")
    p.add_argument("--retrieved", help="rerank-infer output JSONL")
    p.add_argument("--predictions", help="JSONL of {id, texts, gold}")
    p.add_argument("--ks", default="1,3,10")
    p.add_argument("--j-gold", type=int, default=0)
    p.add_argument("--all-silver", action="store_true", help="require all silver docs in the top-k")
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run the memorization simulator")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--R", type=int, default=100)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--tests", type=int, default=500)
    p.add_argument("--sweep", default=None, help="param=start:stop:step, e.g. R=0:200:50")
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RadkitError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
